"""Fixed-data-regime epoch scheduling and selection-cost accounting.

When a selected subset is smaller than the training token budget, the
subset is repeated (epoched) until the budget is covered; the plan is
document-granular, so the last document may overshoot the budget by less
than one document's tokens.

Cost accounting separates the naive efficiency gain (GPU hours saved by
fewer updates) from the overall gain (naive gain minus the cost of
computing the selection, i.e. embedding plus any CPU-stage equivalent).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import DocumentSet
from .errors import ValidationError


@dataclass(frozen=True)
class EpochPlan:
    """A document order covering the token budget.

    ``epochs`` is exactly t_total / t_selected; ``order`` concatenates
    per-epoch permutations of the selected ids, truncated at the first
    document that reaches the budget.
    """

    t_total: int
    t_selected: int
    epochs: float
    order: tuple[str, ...]
    reshuffle_seed: int


@dataclass(frozen=True)
class CostModel:
    baseline_train_gpu_hours: float
    fraction_updates_saved: float
    embed_gpu_hours: float = 0.0
    cpu_stage_gpu_hour_equivalent: float = 0.0

    def __post_init__(self):
        if self.baseline_train_gpu_hours < 0:
            raise ValidationError("baseline_train_gpu_hours must be >= 0")
        if not 0.0 <= self.fraction_updates_saved < 1.0:
            raise ValidationError("fraction_updates_saved must be in [0, 1)")
        if self.embed_gpu_hours < 0:
            raise ValidationError("embed_gpu_hours must be >= 0")
        if self.cpu_stage_gpu_hour_equivalent < 0:
            raise ValidationError("cpu_stage_gpu_hour_equivalent must be >= 0")


def plan_epochs(
    selected: DocumentSet,
    t_total: int,
    seed: int = 0,
    reshuffle_each_epoch: bool = False,
) -> EpochPlan:
    """Repeat the selected documents until the token budget is reached.

    Every full epoch contains each selected id exactly once; epoch order
    is the selection order, or a per-epoch permutation derived from
    (seed, epoch index) when ``reshuffle_each_epoch`` is set. The order
    stops at the first document whose tokens reach the budget, so the
    overshoot is bounded by the largest document.
    """
    if len(selected) == 0 or selected.total_tokens <= 0:
        raise ValidationError("cannot schedule an empty selection")
    if t_total <= 0:
        raise ValidationError("token budget must be > 0")

    ids = selected.ids
    tokens = [d.token_count for d in selected.docs]
    n = len(ids)
    order: list[str] = []
    cumulative = 0
    epoch = 0
    while cumulative < t_total:
        if reshuffle_each_epoch:
            rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, epoch])
            perm = rng.permutation(n)
        else:
            perm = range(n)
        for i in perm:
            order.append(ids[i])
            cumulative += tokens[i]
            if cumulative >= t_total:
                break
        epoch += 1

    return EpochPlan(
        t_total=t_total,
        t_selected=selected.total_tokens,
        epochs=t_total / selected.total_tokens,
        order=tuple(order),
        reshuffle_seed=seed,
    )


def naive_gain(model: CostModel) -> float:
    """GPU hours saved by reaching baseline quality with fewer updates."""
    return model.baseline_train_gpu_hours * model.fraction_updates_saved


def overall_gain(model: CostModel) -> float:
    """Naive gain minus the cost of computing the selection.

    Negative results are returned as-is: they mean the selection cost
    exceeds what it saves.
    """
    return naive_gain(model) - model.embed_gpu_hours - model.cpu_stage_gpu_hour_equivalent


def embed_cost(tokens_to_embed: float, tokens_per_gpu_hour: float) -> float:
    """GPU hours to embed a corpus at a given throughput."""
    if tokens_per_gpu_hour <= 0:
        raise ValidationError("tokens_per_gpu_hour must be > 0")
    if tokens_to_embed < 0:
        raise ValidationError("tokens_to_embed must be >= 0")
    return tokens_to_embed / tokens_per_gpu_hour
