import pytest
from hypothesis import settings

from d4kit import (
    EmbedderSpec,
    KmeansConfig,
    SynthSpec,
    embed_corpus,
    kmeans_spherical,
    synthesize_corpus,
)

settings.register_profile("suite", derandomize=True, max_examples=50, deadline=None)
settings.load_profile("suite")

# The planted corpus: 20 template groups of 5 near-duplicates (per-token
# mutation 0.01) hidden among 900 topic documents.
PLANTED_SPEC = SynthSpec(
    n_topics=10,
    docs_per_topic=90,
    n_template_groups=20,
    dupes_per_group=5,
    template_mutation_rate=0.01,
    vocab_size=2000,
    doc_length_range=(150, 250),
    seed=42,
)
PLANTED_EMBEDDER = EmbedderSpec(kind="hash", dim=128, seed=5)
PLANTED_KMEANS = KmeansConfig(k=64, seed=0)


@pytest.fixture(scope="session")
def planted_docs():
    return synthesize_corpus(PLANTED_SPEC)


@pytest.fixture(scope="session")
def planted_emb(planted_docs):
    return embed_corpus(planted_docs, PLANTED_EMBEDDER)


@pytest.fixture(scope="session")
def planted_clustering(planted_emb):
    return kmeans_spherical(planted_emb, PLANTED_KMEANS)
