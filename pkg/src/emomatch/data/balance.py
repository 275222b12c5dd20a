"""Pseudo-label class balancing of the unlabeled pool.

A frozen classifier assigns pseudo-classes; majority classes are sub-sampled
without replacement down to the cap, minority classes over-sampled (whole
copies plus a random remainder, so every original member keeps at least one
slot) up to it. Every pseudo-class ends with exactly ``cap`` members.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .manifest import SampleRecord


class BalanceError(ValueError):
    pass


def balance_unlabeled(
    pool: Sequence[SampleRecord],
    pseudo_label_fn: Callable[[Sequence[SampleRecord]], np.ndarray],
    cap: int,
    n_classes: int,
    rng: np.random.Generator,
) -> list[SampleRecord]:
    """Balanced pool of exactly ``cap * n_classes`` records, seeded-deterministic."""
    if not pool:
        raise BalanceError("unlabeled pool is empty")
    if cap < 1:
        raise BalanceError(f"cap must be positive, got {cap}")
    pool = list(pool)
    pseudo = np.asarray(pseudo_label_fn(pool), dtype=np.int64)
    if pseudo.shape != (len(pool),):
        raise BalanceError(f"pseudo labels must be one per record, got shape {pseudo.shape}")

    out: list[SampleRecord] = []
    for k in range(n_classes):
        members = [pool[i] for i in np.nonzero(pseudo == k)[0]]
        if not members:
            raise BalanceError(f"pseudo-class {k} has zero members; cannot balance")
        if len(members) >= cap:
            picks = rng.choice(len(members), size=cap, replace=False)
        else:
            reps, rem = divmod(cap, len(members))
            picks = np.concatenate([
                np.tile(np.arange(len(members)), reps),
                rng.choice(len(members), size=rem, replace=False),
            ])
        out.extend(members[i] for i in picks)
    order = rng.permutation(len(out))
    return [out[i] for i in order]
