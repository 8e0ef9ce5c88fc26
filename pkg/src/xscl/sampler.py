"""Cross-corpus positive/negative batch sampling for contrastive fine-tuning.

An anchor emotion ``e`` is drawn uniformly from the labels present in either
training set. Positives carry ``e``: N/4 from each corpus when both have it,
otherwise N/2 from the one corpus that does. Negatives are N/4 non-``e``
utterances from each corpus regardless.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .corpus import EMOTIONS, Utterance
from .errors import ConfigError, SamplingError


@dataclass(frozen=True)
class ContrastBatch:
    anchor_emotion: str
    positives: tuple[Utterance, ...]
    negatives: tuple[Utterance, ...]
    N: int

    @property
    def members(self) -> tuple[Utterance, ...]:
        return self.positives + self.negatives

    def log_record(self, epoch: int, batch_index: int) -> dict:
        return {
            "epoch": epoch,
            "batch": batch_index,
            "anchor_emotion": self.anchor_emotion,
            "positives": [u.id for u in self.positives],
            "negatives": [u.id for u in self.negatives],
        }


def _draw(pool: Sequence[Utterance], n: int, rng: np.random.Generator) -> list[Utterance]:
    # with-replacement fallback keeps small corpora usable
    idx = rng.choice(len(pool), size=n, replace=len(pool) < n)
    return [pool[i] for i in idx]


def anchor_candidates(train_a: Sequence[Utterance], train_b: Sequence[Utterance]) -> list[str]:
    present = {u.label for u in train_a} | {u.label for u in train_b}
    return [e for e in EMOTIONS if e in present]


def sample_batch(
    train_a: Sequence[Utterance],
    train_b: Sequence[Utterance],
    N: int,
    rng: np.random.Generator,
) -> ContrastBatch:
    if N <= 0 or N % 4:
        raise ConfigError(f"batch size N={N} must be a positive multiple of 4")
    if not train_a or not train_b:
        raise SamplingError("both corpora need at least one training utterance")
    q = N // 4
    labels = anchor_candidates(train_a, train_b)
    e = labels[rng.integers(len(labels))]

    pos_a = [u for u in train_a if u.label == e]
    pos_b = [u for u in train_b if u.label == e]
    neg_a = [u for u in train_a if u.label != e]
    neg_b = [u for u in train_b if u.label != e]
    for pool, corpus in ((neg_a, train_a), (neg_b, train_b)):
        if not pool:
            raise SamplingError(f"corpus {corpus[0].corpus_id!r} has no training utterances without label {e!r}")

    if pos_a and pos_b:
        positives = _draw(pos_a, q, rng) + _draw(pos_b, q, rng)
    else:
        positives = _draw(pos_a or pos_b, 2 * q, rng)
    negatives = _draw(neg_a, q, rng) + _draw(neg_b, q, rng)
    return ContrastBatch(e, tuple(positives), tuple(negatives), N)


def validate_batch(
    batch: ContrastBatch,
    test_fold: int | None = None,
    test_ids: set[str] | frozenset[str] = frozenset(),
) -> list[str]:
    """Return every violated batch invariant; an empty list means valid.

    Leakage is checked against ``test_fold`` (by fold tag) and ``test_ids``.
    """
    problems = []
    N, e = batch.N, batch.anchor_emotion
    if N <= 0 or N % 4:
        problems.append(f"N={N} not divisible by 4")
    if len(batch.positives) != N // 2:
        problems.append(f"positive count {len(batch.positives)} != N/2={N // 2}")
    if len(batch.negatives) != N // 2:
        problems.append(f"negative count {len(batch.negatives)} != N/2={N // 2}")
    if any(u.label != e for u in batch.positives):
        problems.append("positive lacks anchor emotion")
    if any(u.label == e for u in batch.negatives):
        problems.append("negative carries anchor emotion")
    leaked = sorted({u.id for u in batch.members} & set(test_ids))
    if leaked:
        problems.append(f"test-fold utterances in batch: {leaked}")
    if test_fold is not None and any(u.fold == test_fold for u in batch.members):
        problems.append(f"member drawn from test fold {test_fold}")
    return problems
