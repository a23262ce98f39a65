import json

import pytest

from d4kit import (
    Document,
    DocumentSet,
    ParseError,
    SynthSpec,
    ValidationError,
    count_tokens,
    load_corpus,
    synthesize_corpus,
    write_corpus,
)


def _write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


class TestCountTokens:
    def test_empty_string(self):
        assert count_tokens("", "whitespace") == 0
        assert count_tokens("", "chars:4") == 0

    def test_whitespace_runs(self):
        assert count_tokens("a  b\tc", "whitespace") == 3

    def test_fixed_chars_ceiling(self):
        assert count_tokens("0123456789", "chars:4") == 3

    def test_simple_sentence(self):
        assert count_tokens("one two three", "whitespace") == 3

    def test_bad_counter_spec(self):
        with pytest.raises(ValidationError):
            count_tokens("x", "bpe")
        with pytest.raises(ValidationError):
            count_tokens("x", "chars:0")


class TestLoadCorpus:
    def test_preserves_file_order(self, tmp_path):
        path = tmp_path / "c.jsonl"
        _write_jsonl(path, [{"id": i, "text": "t"} for i in ("a", "b", "c")])
        docs = load_corpus(str(path))
        assert docs.ids == ("a", "b", "c")

    def test_duplicate_id_names_offender(self, tmp_path):
        path = tmp_path / "c.jsonl"
        _write_jsonl(path, [{"id": "a", "text": "x"}, {"id": "a", "text": "y"}])
        with pytest.raises(ValidationError, match="'a'"):
            load_corpus(str(path))

    def test_token_counts_populated(self, tmp_path):
        path = tmp_path / "c.jsonl"
        _write_jsonl(path, [{"id": "a", "text": "one two three"}])
        docs = load_corpus(str(path))
        assert docs.docs[0].token_count == 3
        assert docs.total_tokens == 3

    def test_malformed_line_cites_line_number(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "a", "text": "x"}\n{broken\n', encoding="utf-8")
        with pytest.raises(ParseError, match="line 2"):
            load_corpus(str(path))

    def test_missing_field_cites_line_number(self, tmp_path):
        path = tmp_path / "c.jsonl"
        _write_jsonl(path, [{"id": "a"}])
        with pytest.raises(ParseError, match="line 1"):
            load_corpus(str(path))

    def test_roundtrip_with_meta(self, tmp_path):
        docs = DocumentSet.from_documents(
            [
                Document(id="a", text="x y", token_count=2, meta={"lang": "en"}),
                Document(id="b", text="z", token_count=1),
            ]
        )
        path = tmp_path / "c.jsonl"
        write_corpus(docs, str(path))
        loaded = load_corpus(str(path))
        assert loaded.ids == docs.ids
        assert [d.text for d in loaded] == [d.text for d in docs]
        assert loaded.docs[0].meta == {"lang": "en"}


class TestDocumentSet:
    def test_total_tokens_conservation(self):
        with pytest.raises(ValidationError):
            DocumentSet(
                docs=(Document(id="a", text="x", token_count=1),), total_tokens=5
            )

    def test_duplicate_ids_rejected(self):
        docs = [
            Document(id="a", text="x", token_count=1),
            Document(id="a", text="y", token_count=1),
        ]
        with pytest.raises(ValidationError):
            DocumentSet.from_documents(docs)

    def test_subset_keeps_order(self):
        docs = DocumentSet.from_documents(
            [Document(id=i, text=i, token_count=1) for i in ("a", "b", "c")]
        )
        assert docs.subset({"c", "a"}).ids == ("a", "c")


class TestSynthesize:
    def test_size_arithmetic_no_groups(self):
        spec = SynthSpec(n_topics=2, docs_per_topic=3, seed=1)
        docs = synthesize_corpus(spec)
        assert len(docs) == 6
        assert all(d.meta["group"] == "none" for d in docs)

    def test_zero_mutation_gives_identical_texts(self):
        spec = SynthSpec(
            n_topics=1,
            docs_per_topic=1,
            n_template_groups=1,
            dupes_per_group=4,
            template_mutation_rate=0.0,
            seed=3,
        )
        docs = synthesize_corpus(spec)
        group = [d.text for d in docs if d.meta["group"] != "none"]
        assert len(group) == 4
        assert len(set(group)) == 1

    def test_determinism_and_seed_sensitivity(self):
        spec = SynthSpec(n_topics=3, docs_per_topic=4, seed=9)
        a = synthesize_corpus(spec)
        b = synthesize_corpus(spec)
        assert [d.text for d in a] == [d.text for d in b]
        other = synthesize_corpus(SynthSpec(n_topics=3, docs_per_topic=4, seed=10))
        assert [d.text for d in a] != [d.text for d in other]

    def test_total_tokens_matches_sum(self):
        docs = synthesize_corpus(SynthSpec(n_topics=2, docs_per_topic=5, seed=0))
        assert docs.total_tokens == sum(d.token_count for d in docs)
        assert all(d.token_count == len(d.text.split()) for d in docs)

    def test_length_range_validation(self):
        with pytest.raises(ValidationError):
            SynthSpec(n_topics=1, docs_per_topic=1, doc_length_range=(10, 5))

    def test_group_labels_cover_expected_sizes(self):
        spec = SynthSpec(
            n_topics=2,
            docs_per_topic=2,
            n_template_groups=3,
            dupes_per_group=2,
            seed=5,
        )
        docs = synthesize_corpus(spec)
        groups = {}
        for d in docs:
            groups.setdefault(d.meta["group"], []).append(d.id)
        assert len(groups.pop("none")) == 4
        assert sorted(len(v) for v in groups.values()) == [2, 2, 2]
