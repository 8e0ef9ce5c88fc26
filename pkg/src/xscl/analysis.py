"""Unweighted accuracy, confusion matrices and layer-wise similarity profiles."""

from __future__ import annotations

import csv
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Counts indexed by (true class, predicted class)."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def unweighted_accuracy(cm, labels: Sequence[str] | None = None) -> float:
    """Macro-averaged recall over classes."""
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValidationError("confusion matrix must be square")
    if np.any(cm < 0):
        raise ValidationError("confusion matrix has negative counts")
    support = cm.sum(axis=1)
    empty = np.flatnonzero(support == 0)
    if empty.size:
        name = labels[empty[0]] if labels is not None else int(empty[0])
        raise ValidationError(f"class {name!r} has no test samples")
    return float(np.mean(np.diag(cm) / support))


@dataclass(frozen=True)
class SimilarityProfile:
    """Per transformer layer (1..n) mean cosine similarity of positive and negative pairs."""

    pos_mean: np.ndarray
    neg_mean: np.ndarray

    @property
    def n_layers(self) -> int:
        return len(self.pos_mean)

    def gap(self, layer: int = -1) -> float:
        return float(self.pos_mean[layer] - self.neg_mean[layer])

    def rows(self) -> list[dict]:
        return [
            {"layer": i + 1, "pos_mean": float(p), "neg_mean": float(n)}
            for i, (p, n) in enumerate(zip(self.pos_mean, self.neg_mean))
        ]

    def to_dict(self) -> dict:
        return {"pos_mean": [float(v) for v in self.pos_mean], "neg_mean": [float(v) for v in self.neg_mean]}


def _unit_time_means(layer: np.ndarray) -> np.ndarray:
    x = layer.astype(np.float64).mean(axis=1)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def batch_pair_similarities(layers, pos_ids, neg_ids):
    """Mean positive-pair and positive-x-negative similarity for each layer of one batch.

    ``layers`` holds (B, T, d) activations with positives first. Positive pairs
    that repeat the same utterance are skipped.
    """
    P = len(pos_ids)
    pos_ids = np.asarray(pos_ids)
    iu, ju = np.triu_indices(P, k=1)
    keep = pos_ids[iu] != pos_ids[ju]
    iu, ju = iu[keep], ju[keep]
    pos, neg = [], []
    for layer in layers:
        X = _unit_time_means(layer)
        S = X[:P] @ X[P:].T
        neg.append(S.mean())
        G = X[:P] @ X[:P].T
        pos.append(G[iu, ju].mean() if iu.size else np.nan)
    return np.array(pos), np.array(neg)


def layer_similarity_profile(stack, batches, features=None) -> SimilarityProfile:
    """Average per-layer similarities over contrast batches.

    ``features`` maps utterances to layer-0 features (a ``FeatureCache``);
    without it waveforms go through the frozen front-end directly.
    """
    if not batches:
        raise ValidationError("similarity profile needs at least one batch")
    pos_sum = neg_sum = None
    pos_count = np.zeros(stack.config.n_layers)
    for batch in batches:
        members = batch.positives + batch.negatives
        if features is not None:
            h0 = features.get(members)
        else:
            h0 = stack.frontend(np.stack([u.samples for u in members]))
        acts = stack.encode(h0, record=False)
        pos, neg = batch_pair_similarities(
            acts.layers[1:], [u.id for u in batch.positives], [u.id for u in batch.negatives]
        )
        valid = ~np.isnan(pos)
        if pos_sum is None:
            pos_sum, neg_sum = np.zeros_like(pos), np.zeros_like(neg)
        pos_sum += np.where(valid, pos, 0.0)
        pos_count += valid
        neg_sum += neg
    return SimilarityProfile(pos_sum / np.maximum(pos_count, 1), neg_sum / len(batches))


# -- reports -----------------------------------------------------------------


def emit_report(reports, path) -> list[Path]:
    """Write ``{corpus}_ua.csv`` per corpus and ``similarity_profile.csv`` into ``path``.

    UA values are fractions; a ``mean`` row follows each variant's folds.
    """
    reports = list(reports)
    if not reports:
        raise ValidationError("no reports to emit")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write reports to {out}: {exc}") from exc
    written = []
    corpora = []
    for r in reports:
        for c in r.corpora():
            if c not in corpora:
                corpora.append(c)
    for corpus in corpora:
        file = out / f"{corpus}_ua.csv"
        with open(file, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model_variant", "fold", "UA"])
            for r in reports:
                entries = r.entries_for(corpus)
                if not entries:
                    continue
                for e in entries:
                    w.writerow([r.variant, e.fold, repr(e.ua)])
                w.writerow([r.variant, "mean", repr(r.mean_ua(corpus))])
        written.append(file)
    profiles = [(r.variant, key, prof) for r in reports for key, prof in r.similarity.items()]
    if profiles:
        file = out / "similarity_profile.csv"
        write_similarity_csv(file, profiles)
        written.append(file)
    return written


def write_similarity_csv(path, profiles) -> Path:
    """``profiles`` is a sequence of (variant, tag, SimilarityProfile)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "model", "layer", "pos_mean", "neg_mean"])
        for variant, tag, prof in profiles:
            for row in prof.rows():
                w.writerow([variant, tag, row["layer"], repr(row["pos_mean"]), repr(row["neg_mean"])])
    return Path(path)


def read_ua_csv(path) -> dict[str, dict]:
    """Parse a ``{corpus}_ua.csv`` into ``{variant: {"folds": {fold: ua}, "mean": ua}}``."""
    out: dict[str, dict] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            v = out.setdefault(row["model_variant"], {"folds": {}, "mean": None})
            if row["fold"] == "mean":
                v["mean"] = float(row["UA"])
            else:
                v["folds"][int(row["fold"])] = float(row["UA"])
    return out


def read_similarity_csv(path) -> dict[tuple[str, str], SimilarityProfile]:
    rows: dict[tuple[str, str], list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault((row["variant"], row["model"]), []).append(
                (int(row["layer"]), float(row["pos_mean"]), float(row["neg_mean"]))
            )
    return {
        key: SimilarityProfile(np.array([p for _, p, _ in sorted(v)]), np.array([n for _, _, n in sorted(v)]))
        for key, v in rows.items()
    }


def format_table(reports) -> str:
    """Table-style UA summary in percent, one row per variant, one column per corpus."""
    reports = list(reports)
    corpora = []
    for r in reports:
        corpora += [c for c in r.corpora() if c not in corpora]
    width = max([len("variant")] + [len(r.variant) for r in reports])
    lines = ["variant".ljust(width) + "".join(f"  {c:>10}" for c in corpora)]
    for r in reports:
        cells = []
        for c in corpora:
            cells.append(f"  {100 * r.mean_ua(c):10.2f}" if r.entries_for(c) else f"  {'-':>10}")
        lines.append(r.variant.ljust(width) + "".join(cells))
    return "\n".join(lines)
