"""Stage-1 contrastive fine-tuning, stage-2 classifier training, the direct
fine-tuning baseline, and k-fold cross-validation orchestration."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

import numpy as np

from .analysis import SimilarityProfile, confusion_matrix, layer_similarity_profile, unweighted_accuracy
from .corpus import CorpusManifest, Utterance, split
from .encoder import Checkpoint, EncoderStack, ModelConfig, fit_length, save_checkpoint
from .errors import ConfigError, StateError, ValidationError
from .losses import ContrastFeatures, LossConfig, cross_entropy_grad, total_loss_grad
from .sampler import sample_batch

log = logging.getLogger(__name__)


# -- configs -----------------------------------------------------------------


class _ConfigMixin:
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown {cls.__name__} key(s): {sorted(unknown)}")
        if "loss" in d and isinstance(d["loss"], dict):
            unknown = set(d["loss"]) - {f.name for f in dataclasses.fields(LossConfig)}
            if unknown:
                raise ConfigError(f"unknown LossConfig key(s): {sorted(unknown)}")
            d["loss"] = LossConfig(**d["loss"])
        return cls(**d)


def _check_common(cfg, batch_attr):
    if cfg.epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if getattr(cfg, batch_attr) < 1:
        raise ConfigError("batch size must be positive")


@dataclass(frozen=True)
class Stage1Config(_ConfigMixin):
    base_lr: float = 1e-4
    epochs: int = 50
    decay_start_epoch: int = 25
    halve_every: int = 5
    encoder_lr_multiplier: float = 0.4
    batch_size: int = 32
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        _check_common(self, "batch_size")
        if self.batch_size % 4:
            raise ConfigError(f"stage-1 batch size {self.batch_size} must be divisible by 4")
        if self.halve_every < 1:
            raise ConfigError("halve_every must be >= 1")


@dataclass(frozen=True)
class Stage2Config(_ConfigMixin):
    lr: float = 5e-4
    epochs: int = 10
    drop_epoch: int = 5
    drop_factor: float = 0.1
    batch_size: int = 32
    target_corpus_id: str | None = None
    seed: int = 0

    def __post_init__(self):
        _check_common(self, "batch_size")


@dataclass(frozen=True)
class FTBaselineConfig(_ConfigMixin):
    lr: float = 1e-3
    epochs: int = 50
    decay_every: int = 20
    decay_factor: float = 0.2
    encoder_lr_multiplier: float = 0.4
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        _check_common(self, "batch_size")
        if self.decay_every < 1:
            raise ConfigError("decay_every must be >= 1")


def _scaled(lr: float, factor: float, power: int) -> float:
    # decimal arithmetic keeps e.g. 5e-4 * 0.1 at exactly 5e-05
    return float(Decimal(repr(lr)) * Decimal(repr(factor)) ** power)


def lr_at_epoch(cfg, epoch: int) -> float:
    """Learning rate in force during 1-based ``epoch``."""
    if not 1 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [1, {cfg.epochs}]")
    if isinstance(cfg, Stage1Config):
        if epoch < cfg.decay_start_epoch:
            return cfg.base_lr
        return _scaled(cfg.base_lr, 0.5, (epoch - cfg.decay_start_epoch) // cfg.halve_every + 1)
    if isinstance(cfg, Stage2Config):
        return cfg.lr if epoch <= cfg.drop_epoch else _scaled(cfg.lr, cfg.drop_factor, 1)
    if isinstance(cfg, FTBaselineConfig):
        return _scaled(cfg.lr, cfg.decay_factor, (epoch - 1) // cfg.decay_every)
    raise TypeError(f"no schedule for {type(cfg).__name__}")


# -- optimizer ---------------------------------------------------------------


class Adam:
    """Adam with bias correction and per-group learning-rate multipliers.

    Parameters are updated in place. ``multipliers`` maps group name (the
    prefix before the first dot) to its lr multiplier; every parameter's group
    must appear there, and none may belong to a ``frozen`` group.
    """

    def __init__(self, params: dict, multipliers: dict, frozen=(), betas=(0.9, 0.999), eps=1e-8):
        for name in params:
            group = name.split(".", 1)[0]
            if group in frozen:
                raise ConfigError(f"frozen group passed to optimizer: {name}")
            if group not in multipliers:
                raise ConfigError(f"no learning-rate multiplier for group {group!r}")
        self.params = params
        self.multipliers = dict(multipliers)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    @classmethod
    def for_stack(cls, stack: EncoderStack, multipliers: dict, **kw) -> Adam:
        params = {k: stack.params[k] for k in stack.trainable_names()}
        return cls(params, multipliers, frozen=stack.frozen, **kw)

    def step(self, grads: dict, lr: float) -> None:
        for name, g in grads.items():
            if name not in self.params:
                raise ConfigError(f"gradient for parameter outside optimizer: {name}")
            if g.shape != self.params[name].shape:
                raise ValidationError(f"gradient shape {g.shape} != parameter shape {self.params[name].shape} for {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            step = lr * self.multipliers[name.split(".", 1)[0]]
            p -= (step * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


def adam_step(opt: Adam, grads: dict, lr: float) -> dict:
    opt.step(grads, lr)
    return opt.params


# -- feature cache -----------------------------------------------------------


class FeatureCache:
    """Memoised frozen front-end output (layer-0 features) keyed by (corpus, utterance id)."""

    def __init__(self, stack: EncoderStack, chunk: int = 64):
        self.stack = stack
        self.chunk = chunk
        self._store: dict[tuple[str, str], np.ndarray] = {}

    def get(self, utterances: Sequence[Utterance]) -> np.ndarray:
        missing = []
        seen = set()
        for u in utterances:
            key = (u.corpus_id, u.id)
            if key not in self._store and key not in seen:
                missing.append(u)
                seen.add(key)
        n = self.stack.config.input_samples
        for i in range(0, len(missing), self.chunk):
            part = missing[i : i + self.chunk]
            h0 = self.stack.frontend(np.stack([fit_length(u.samples, n) for u in part]))
            for u, h in zip(part, h0):
                self._store[(u.corpus_id, u.id)] = h
        return np.stack([self._store[(u.corpus_id, u.id)] for u in utterances])


def _check_cache(cache, stack):
    if cache is None:
        return FeatureCache(stack)
    for g in ("frontend", "projection"):
        if cache.stack.group_bytes(g) != stack.group_bytes(g):
            raise StateError("feature cache was built with a different front-end")
    return cache


# -- results -----------------------------------------------------------------


@dataclass
class FoldEntry:
    corpus_id: str
    fold: int
    ua: float
    confusion: np.ndarray
    labels: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "corpus_id": self.corpus_id,
            "fold": self.fold,
            "ua": self.ua,
            "confusion": self.confusion.tolist(),
            "labels": list(self.labels),
        }


@dataclass
class Stage1Result:
    checkpoint: Checkpoint
    loss_curve: list[dict]
    batch_log: list[dict]


@dataclass
class SupervisedResult:
    entry: FoldEntry
    loss_curve: list[dict]
    checkpoint: Checkpoint


@dataclass
class RunReport:
    """Cross-validation results for one model variant."""

    variant: str
    entries: list[FoldEntry] = field(default_factory=list)
    loss_curves: dict[str, list[dict]] = field(default_factory=dict)
    similarity: dict[str, SimilarityProfile] = field(default_factory=dict)
    fold_similarity: dict[str, SimilarityProfile] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def corpora(self) -> list[str]:
        out = []
        for e in self.entries:
            if e.corpus_id not in out:
                out.append(e.corpus_id)
        return out

    def entries_for(self, corpus_id: str) -> list[FoldEntry]:
        return sorted((e for e in self.entries if e.corpus_id == corpus_id), key=lambda e: e.fold)

    def mean_ua(self, corpus_id: str) -> float:
        entries = self.entries_for(corpus_id)
        if not entries:
            raise KeyError(corpus_id)
        return sum(e.ua for e in entries) / len(entries)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "entries": [e.to_dict() for e in self.entries],
            "mean_ua": {c: self.mean_ua(c) for c in self.corpora()},
            "loss_curves": self.loss_curves,
            "similarity": {k: v.to_dict() for k, v in self.similarity.items()},
            "fold_similarity": {k: v.to_dict() for k, v in self.fold_similarity.items()},
            "config": self.config,
        }


# -- evaluation --------------------------------------------------------------


def predict(stack: EncoderStack, h0: np.ndarray, chunk: int = 64) -> np.ndarray:
    preds = []
    for i in range(0, len(h0), chunk):
        H = stack.encode(h0[i : i + chunk], record=False).final
        preds.append(stack.classify(stack.pool(H, record=False), record=False).argmax(axis=1))
    return np.concatenate(preds)


def evaluate(stack, utterances, label_space, cache, corpus_id, fold) -> FoldEntry:
    y = np.array([label_space.index(u.label) for u in utterances])
    pred = predict(stack, cache.get(utterances))
    cm = confusion_matrix(y, pred, len(label_space))
    return FoldEntry(corpus_id, fold, unweighted_accuracy(cm, label_space), cm, tuple(label_space))


def _labels(utterances, label_space):
    return np.array([label_space.index(u.label) for u in utterances])


# -- stage 1 -----------------------------------------------------------------


def run_stage1(
    corpus_a: CorpusManifest,
    corpus_b: CorpusManifest,
    model_cfg: ModelConfig,
    cfg: Stage1Config,
    test_fold: int,
    cache: FeatureCache | None = None,
) -> Stage1Result:
    """Contrastive fine-tuning of the transformer and pooling on two corpora.

    Only the training folds of each corpus are sampled. The loss is
    InfoNCE + cosine margin over attention-pooled features; the transformer
    trains at ``encoder_lr_multiplier`` times the base rate.
    """
    train_a, _ = split(corpus_a, test_fold)
    train_b, _ = split(corpus_b, test_fold)
    stack = EncoderStack(model_cfg, frozen=("frontend", "projection", "classifier"))
    cache = _check_cache(cache, stack)
    opt = Adam.for_stack(stack, {"encoder": cfg.encoder_lr_multiplier, "pooling": 1.0})
    rng = np.random.default_rng(cfg.seed)
    N = cfg.batch_size
    half = N // 2
    n_batches = math.ceil((len(train_a) + len(train_b)) / N)
    curve, batch_log = [], []
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at_epoch(cfg, epoch)
        sums = np.zeros(3)
        for b in range(n_batches):
            batch = sample_batch(train_a, train_b, N, rng)
            batch_log.append(batch.log_record(epoch, b))
            acts = stack.encode(cache.get(batch.members))
            C = stack.pool(acts.final)
            feats = ContrastFeatures(C[:half], C[half:])
            L, Lc, Lm, gp, gn = total_loss_grad(feats, cfg.loss, rng=rng)
            grads = stack.backward(d_pooled=np.concatenate([gp, gn]))
            opt.step(grads, lr)
            sums += (L, Lc, Lm)
        mean = sums / n_batches
        curve.append({"epoch": epoch, "mean_L": mean[0], "mean_Lc": mean[1], "mean_Lm": mean[2]})
        log.debug("stage1 fold %d epoch %d lr %.3g L %.4f", test_fold, epoch, lr, mean[0])
    ckpt = Checkpoint(stack, "stage1", rng.bit_generator.state, {"test_fold": test_fold})
    return Stage1Result(ckpt, curve, batch_log)


# -- supervised training (stage 2 and FT baseline) ---------------------------


def _train_supervised(stack, opt, cfg, train, label_space, rng, features_fn, tag):
    y_all = _labels(train, label_space)
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at_epoch(cfg, epoch)
        order = rng.permutation(len(train))
        total, count = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            H = features_fn(idx)
            scores = stack.classify(stack.pool(H))
            ce, d_scores = cross_entropy_grad(scores, y_all[idx])
            opt.step(stack.backward(d_scores=d_scores), lr)
            total += ce * len(idx)
            count += len(idx)
        curve.append({"epoch": epoch, "mean_ce": total / count})
        log.debug("%s epoch %d lr %.3g ce %.4f", tag, epoch, lr, total / count)
    return curve


def run_stage2(
    checkpoint: Checkpoint,
    target: CorpusManifest,
    cfg: Stage2Config,
    test_fold: int,
    cache: FeatureCache | None = None,
) -> SupervisedResult:
    """Train pooling + a fresh classifier on one corpus over a frozen representation."""
    if checkpoint.stage != "stage1":
        raise StateError(f"stage 2 needs a stage1 checkpoint, got {checkpoint.stage!r}")
    if cfg.target_corpus_id is not None and cfg.target_corpus_id != target.corpus_id:
        raise ConfigError(f"stage-2 target is {cfg.target_corpus_id!r}, got corpus {target.corpus_id!r}")
    train, test = split(target, test_fold)
    stack = checkpoint.stack.copy()
    stack.frozen = {"frontend", "projection", "encoder"}
    stack.reset_classifier(len(target.label_space), cfg.seed)
    cache = _check_cache(cache, stack)
    opt = Adam.for_stack(stack, {"pooling": 1.0, "classifier": 1.0})
    rng = np.random.default_rng(cfg.seed)
    # representation is frozen: encode the training set once
    H_train = np.concatenate(
        [stack.encode(cache.get(train[i : i + 64]), record=False).final for i in range(0, len(train), 64)]
    )
    curve = _train_supervised(
        stack, opt, cfg, train, target.label_space, rng, lambda idx: H_train[idx], f"stage2[{target.corpus_id}]"
    )
    entry = evaluate(stack, test, target.label_space, cache, target.corpus_id, test_fold)
    ckpt = Checkpoint(stack, "stage2", rng.bit_generator.state, {"test_fold": test_fold, "target": target.corpus_id})
    return SupervisedResult(entry, curve, ckpt)


def run_ft_baseline(
    corpus: CorpusManifest,
    model_cfg: ModelConfig,
    cfg: FTBaselineConfig,
    test_fold: int,
    cache: FeatureCache | None = None,
) -> SupervisedResult:
    """Direct supervised fine-tuning of transformer, pooling and classifier."""
    train, test = split(corpus, test_fold)
    stack = EncoderStack(model_cfg)
    stack.reset_classifier(len(corpus.label_space), cfg.seed)
    cache = _check_cache(cache, stack)
    opt = Adam.for_stack(stack, {"encoder": cfg.encoder_lr_multiplier, "pooling": 1.0, "classifier": 1.0})
    rng = np.random.default_rng(cfg.seed)

    def features(idx):
        return stack.encode(cache.get([train[i] for i in idx])).final

    curve = _train_supervised(stack, opt, cfg, train, corpus.label_space, rng, features, f"ft[{corpus.corpus_id}]")
    entry = evaluate(stack, test, corpus.label_space, cache, corpus.corpus_id, test_fold)
    ckpt = Checkpoint(stack, "ft", rng.bit_generator.state, {"test_fold": test_fold, "target": corpus.corpus_id})
    return SupervisedResult(entry, curve, ckpt)


def evaluate_untrained(corpus, model_cfg, test_fold, seed=0, cache=None) -> FoldEntry:
    """UA of the seeded-random stack with a randomly initialised classifier."""
    stack = EncoderStack(model_cfg)
    stack.reset_classifier(len(corpus.label_space), seed)
    cache = _check_cache(cache, stack)
    _, test = split(corpus, test_fold)
    return evaluate(stack, test, corpus.label_space, cache, corpus.corpus_id, test_fold)


# -- cross-validation --------------------------------------------------------


def derive_seed(master: int, *path: int) -> int:
    return int(np.random.SeedSequence([int(master), *map(int, path)]).generate_state(1)[0])


def analysis_batches(corpus_a, corpus_b, test_fold, batch_size, n_batches, seed):
    """Contrast batches drawn from the held-out folds, for similarity profiling."""
    _, test_a = split(corpus_a, test_fold)
    _, test_b = split(corpus_b, test_fold)
    rng = np.random.default_rng(seed)
    return [sample_batch(test_a, test_b, batch_size, rng) for _ in range(n_batches)]


def _write_rows_csv(path, rows):
    if not rows:
        return
    cols = list(rows[0])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols) + "\n")


@dataclass
class FoldOutput:
    fold: int
    two_stage: list[FoldEntry] = field(default_factory=list)
    ft: list[FoldEntry] = field(default_factory=list)
    untrained: list[FoldEntry] = field(default_factory=list)
    curves: dict[str, list[dict]] = field(default_factory=dict)
    similarity: dict[str, SimilarityProfile] = field(default_factory=dict)


def run_fold(
    corpora, model_cfg, s1, s2, ft, variant, fold, out_dir=None, cache=None, analysis_batches_n=16
) -> FoldOutput:
    """One cross-validation fold of the selected variant(s); artifacts go to ``out_dir``."""
    corpus_a, corpus_b = corpora
    cache = cache or FeatureCache(EncoderStack(model_cfg))
    out = FoldOutput(fold)
    fold_dir = None
    if out_dir is not None:
        fold_dir = Path(out_dir) / f"fold{fold}"
        fold_dir.mkdir(parents=True, exist_ok=True)

    if variant in ("two-stage", "both"):
        s1_fold = dataclasses.replace(s1, seed=derive_seed(s1.seed, fold, 1))
        r1 = run_stage1(corpus_a, corpus_b, model_cfg, s1_fold, fold, cache)
        out.curves["stage1"] = r1.loss_curve
        batches = analysis_batches(
            corpus_a, corpus_b, fold, s1.batch_size, analysis_batches_n, derive_seed(s1.seed, fold, 3)
        )
        out.similarity["pretrained"] = layer_similarity_profile(EncoderStack(model_cfg), batches, cache)
        out.similarity["finetuned"] = layer_similarity_profile(r1.checkpoint.stack, batches, cache)
        if fold_dir is not None:
            save_checkpoint(
                fold_dir / "stage1.ckpt", r1.checkpoint.stack, "stage1", r1.checkpoint.rng_state, r1.checkpoint.meta
            )
            with open(fold_dir / "stage1_batches.jsonl", "w", encoding="utf-8") as fh:
                for rec in r1.batch_log:
                    fh.write(json.dumps(rec) + "\n")
            _write_rows_csv(fold_dir / "stage1_loss.csv", r1.loss_curve)
        for k, target in enumerate(corpora):
            s2_fold = dataclasses.replace(s2, seed=derive_seed(s2.seed, fold, 2, k), target_corpus_id=None)
            r2 = run_stage2(r1.checkpoint, target, s2_fold, fold, cache)
            out.two_stage.append(r2.entry)
            out.curves[f"stage2[{target.corpus_id}]"] = r2.loss_curve
            if fold_dir is not None:
                save_checkpoint(
                    fold_dir / f"stage2_{target.corpus_id}.ckpt", r2.checkpoint.stack, "stage2", meta=r2.checkpoint.meta
                )
                _write_rows_csv(fold_dir / f"stage2_{target.corpus_id}_loss.csv", r2.loss_curve)
            out.untrained.append(evaluate_untrained(target, model_cfg, fold, derive_seed(s2.seed, fold, 5, k), cache))

    if variant in ("ft-baseline", "both"):
        for k, target in enumerate(corpora):
            ft_fold = dataclasses.replace(ft, seed=derive_seed(ft.seed, fold, 4, k))
            rf = run_ft_baseline(target, model_cfg, ft_fold, fold, cache)
            out.ft.append(rf.entry)
            out.curves[f"ft[{target.corpus_id}]"] = rf.loss_curve
            if fold_dir is not None:
                save_checkpoint(fold_dir / f"ft_{target.corpus_id}.ckpt", rf.checkpoint.stack, "ft", meta=rf.checkpoint.meta)
                _write_rows_csv(fold_dir / f"ft_{target.corpus_id}_loss.csv", rf.loss_curve)
    return out


def _mean_profile(profiles):
    return SimilarityProfile(
        np.mean([p.pos_mean for p in profiles], axis=0), np.mean([p.neg_mean for p in profiles], axis=0)
    )


def cross_validate(
    corpora: Sequence[CorpusManifest],
    model_cfg: ModelConfig = ModelConfig(),
    stage1: Stage1Config = Stage1Config(),
    stage2: Stage2Config = Stage2Config(),
    ft: FTBaselineConfig = FTBaselineConfig(),
    variant: str = "two-stage",
    out_dir=None,
    parallel_folds: bool = False,
) -> dict[str, RunReport]:
    """Run the selected pipeline(s) once per held-out fold and aggregate.

    Returns one ``RunReport`` per variant (``"two-stage"`` and/or
    ``"ft-baseline"``); two-stage runs also report ``"untrained"``, the
    seeded-random stack with a random classifier. Per-fold seeds are derived from each config's seed,
    so parallel and serial execution give identical results.
    """
    if variant not in ("two-stage", "ft-baseline", "both"):
        raise ConfigError(f"unknown variant {variant!r}")
    corpora = tuple(corpora)
    if len(corpora) != 2:
        raise ConfigError("exactly two corpora are required")
    n_folds = {c.n_folds for c in corpora}
    if None in n_folds or len(n_folds) != 1:
        raise ValidationError("both corpora need folds assigned with the same k")
    k = n_folds.pop()
    args = (corpora, model_cfg, stage1, stage2, ft, variant)
    if parallel_folds:
        with ProcessPoolExecutor() as pool:
            outputs = list(pool.map(run_fold, *zip(*[(*args, f, out_dir) for f in range(k)])))
    else:
        cache = FeatureCache(EncoderStack(model_cfg))
        outputs = [run_fold(*args, f, out_dir, cache) for f in range(k)]

    snapshot = {
        "model": model_cfg.to_dict(),
        "stage1": stage1.to_dict(),
        "stage2": stage2.to_dict(),
        "ft": ft.to_dict(),
        "n_folds": k,
    }
    reports = {}
    if variant in ("two-stage", "both"):
        r = RunReport("two-stage", config=snapshot)
        for o in outputs:
            r.entries += o.two_stage
            for name in ("stage1", *(f"stage2[{c.corpus_id}]" for c in corpora)):
                r.loss_curves[f"fold{o.fold}/{name}"] = o.curves[name]
            for tag, prof in o.similarity.items():
                r.fold_similarity[f"fold{o.fold}/{tag}"] = prof
        for tag in ("pretrained", "finetuned"):
            r.similarity[tag] = _mean_profile([o.similarity[tag] for o in outputs])
        reports["two-stage"] = r
        u = RunReport("untrained", config=snapshot)
        for o in outputs:
            u.entries += o.untrained
        reports["untrained"] = u
    if variant in ("ft-baseline", "both"):
        r = RunReport("ft-baseline", config=snapshot)
        for o in outputs:
            r.entries += o.ft
            for c in corpora:
                r.loss_curves[f"fold{o.fold}/ft[{c.corpus_id}]"] = o.curves[f"ft[{c.corpus_id}]"]
        reports["ft-baseline"] = r
    return reports
