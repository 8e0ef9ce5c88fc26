"""Utterance/corpus data model, manifest I/O, synthetic corpora and fold assignment.

Manifest files are JSON lines. The first record is a header::

    {"corpus_id": "casia", "label_space": ["neutral", "sad", ...], "n_folds": 5}

and every following line is one utterance::

    {"id": "casia-0001", "corpus_id": "casia", "label": "sad",
     "sample_rate": 16000, "audio_path": "casia_audio/casia-0001.f32", "fold": 3}

``audio_path`` (raw little-endian float32 mono, relative to the manifest) may be
replaced by an inline ``samples`` array. ``fold`` and ``n_folds`` are optional.
"""

from __future__ import annotations

import dataclasses
import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ManifestError, ValidationError

EMOTIONS = ("neutral", "sad", "angry", "happy", "fear", "surprise")
IEMOCAP_LABELS = EMOTIONS[:4]
CASIA_LABELS = EMOTIONS

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_DURATION = 8000

# (fundamental Hz, amplitude-modulation Hz) per emotion
DEFAULT_EMOTION_PARAMS = {
    "neutral": (150.0, 3.0),
    "sad": (100.0, 2.0),
    "angry": (210.0, 6.0),
    "happy": (270.0, 5.0),
    "fear": (340.0, 8.0),
    "surprise": (420.0, 4.0),
}


def canonical_labels(labels) -> tuple[str, ...]:
    labels = set(labels)
    unknown = labels - set(EMOTIONS)
    if unknown:
        raise ValidationError(f"unknown emotion label(s): {sorted(unknown)}")
    return tuple(e for e in EMOTIONS if e in labels)


@dataclass(frozen=True, eq=False)
class Utterance:
    id: str
    corpus_id: str
    samples: np.ndarray
    sample_rate: int
    label: str
    fold: int | None = None

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float32)
        if samples.ndim != 1 or samples.size == 0:
            raise ValidationError(f"utterance {self.id!r}: samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ValidationError(f"utterance {self.id!r}: non-finite samples")
        if np.abs(samples).max() > 1.0:
            raise ValidationError(f"utterance {self.id!r}: samples outside [-1, 1]")
        if int(self.sample_rate) <= 0:
            raise ValidationError(f"utterance {self.id!r}: sample_rate must be positive")
        if self.label not in EMOTIONS:
            raise ValidationError(f"utterance {self.id!r}: unknown label {self.label!r}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))


@dataclass(frozen=True, eq=False)
class CorpusManifest:
    corpus_id: str
    label_space: tuple[str, ...]
    utterances: tuple[Utterance, ...]
    n_folds: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "label_space", canonical_labels(self.label_space))
        object.__setattr__(self, "utterances", tuple(self.utterances))
        if not self.utterances:
            raise ValidationError(f"corpus {self.corpus_id!r}: empty corpus")
        seen = set()
        for u in self.utterances:
            if u.id in seen:
                raise ValidationError(f"corpus {self.corpus_id!r}: duplicate utterance id {u.id!r}")
            seen.add(u.id)
            if u.label not in self.label_space:
                raise ValidationError(
                    f"corpus {self.corpus_id!r}: utterance {u.id!r} has label {u.label!r} "
                    f"outside label_space {list(self.label_space)}"
                )
            if self.n_folds is not None and (u.fold is None or not 0 <= u.fold < self.n_folds):
                raise ValidationError(f"utterance {u.id!r}: fold {u.fold} outside [0, {self.n_folds})")

    def __len__(self):
        return len(self.utterances)

    def label_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(self.label_space, 0)
        for u in self.utterances:
            counts[u.label] += 1
        return counts

    def label_index(self, label: str) -> int:
        return self.label_space.index(label)


# -- manifest I/O ------------------------------------------------------------


def _parse_json_line(text, lineno):
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid JSON ({exc.msg})", line=lineno) from None
    if not isinstance(rec, dict):
        raise ManifestError("record must be a JSON object", line=lineno)
    return rec


def load_manifest(path) -> CorpusManifest:
    """Read and validate a manifest file; audio is loaded eagerly."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    header = None
    utterances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            rec = _parse_json_line(raw, lineno)
            if header is None:
                if "label_space" not in rec:
                    raise ManifestError("first record must be a header declaring label_space", line=lineno)
                header = rec
                continue
            utterances.append(_parse_utterance(rec, lineno, base, header))
    if header is None:
        raise ManifestError(f"{path}: missing header record")
    try:
        label_space = canonical_labels(header["label_space"])
    except ValidationError as exc:
        raise ManifestError(str(exc), line=1) from None
    corpus_id = header.get("corpus_id") or (utterances[0].corpus_id if utterances else path.stem)
    return CorpusManifest(corpus_id, label_space, tuple(utterances), header.get("n_folds"))


def _parse_utterance(rec, lineno, base, header):
    for key in ("id", "label", "sample_rate"):
        if key not in rec:
            raise ManifestError(f"missing field {key!r}", line=lineno)
    if ("audio_path" in rec) == ("samples" in rec):
        raise ManifestError("exactly one of 'audio_path' or 'samples' is required", line=lineno)
    if "samples" in rec:
        samples = np.asarray(rec["samples"], dtype=np.float32)
    else:
        audio = base / rec["audio_path"]
        if not audio.is_file():
            raise ManifestError(f"audio file not found: {audio}", line=lineno)
        samples = np.fromfile(audio, dtype="<f4").astype(np.float32)
    corpus_id = rec.get("corpus_id", header.get("corpus_id"))
    try:
        return Utterance(
            id=str(rec["id"]),
            corpus_id=str(corpus_id),
            samples=samples,
            sample_rate=int(rec["sample_rate"]),
            label=rec["label"],
            fold=rec.get("fold"),
        )
    except ValidationError as exc:
        raise ManifestError(str(exc), line=lineno) from None


def write_manifest(manifest: CorpusManifest, path, inline: bool = False) -> Path:
    """Write ``manifest`` to ``path``; raw audio goes to ``<stem>_audio/`` unless inline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    audio_dir = path.parent / f"{path.stem}_audio"
    if not inline:
        audio_dir.mkdir(exist_ok=True)
    header = {"corpus_id": manifest.corpus_id, "label_space": list(manifest.label_space)}
    if manifest.n_folds is not None:
        header["n_folds"] = manifest.n_folds
    lines = [json.dumps(header)]
    for u in manifest.utterances:
        rec = {"id": u.id, "corpus_id": u.corpus_id, "label": u.label, "sample_rate": u.sample_rate}
        if inline:
            rec["samples"] = [float(x) for x in u.samples]
        else:
            fname = f"{u.id}.f32"
            u.samples.astype("<f4").tofile(audio_dir / fname)
            rec["audio_path"] = f"{audio_dir.name}/{fname}"
        if u.fold is not None:
            rec["fold"] = u.fold
        lines.append(json.dumps(rec))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# -- synthetic corpora -----------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic corpus.

    Each utterance is a harmonic tone at the emotion's fundamental, amplitude
    modulated at the emotion's rate, passed through the corpus spectral tilt
    ``y[n] = x[n] - tilt * x[n-1]`` (``tilt`` drawn per utterance within
    ``tilt_jitter`` of the corpus value) and corrupted by Gaussian noise whose
    level varies per utterance by up to ``noise_jitter`` (relative).
    ``utterances_per_label`` is either one count for every label or a
    per-label mapping.
    """

    corpus_id: str
    label_space: tuple[str, ...]
    utterances_per_label: int | Mapping[str, int]
    seed: int
    duration_samples: int = DEFAULT_DURATION
    sample_rate: int = DEFAULT_SAMPLE_RATE
    emotion_signal_params: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_EMOTION_PARAMS)
    )
    tilt: float = 0.0
    noise_level: float = 0.05
    f0_jitter: float = 0.0025
    am_depth: float = 0.6
    tilt_jitter: float = 0.0
    noise_jitter: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "label_space", canonical_labels(self.label_space))
        counts = self.counts()
        for label, n in counts.items():
            if n <= 0:
                raise ValidationError(f"{self.corpus_id}: utterances_per_label for {label!r} must be positive")
        missing = [e for e in self.label_space if e not in self.emotion_signal_params]
        if missing:
            raise ValidationError(f"{self.corpus_id}: no signal parameters for {missing}")
        pairs = [tuple(self.emotion_signal_params[e]) for e in self.label_space]
        if len(set(pairs)) != len(pairs):
            raise ValidationError(f"{self.corpus_id}: emotions must have distinct (frequency, modulation) pairs")
        if self.duration_samples <= 0 or self.sample_rate <= 0:
            raise ValidationError("duration_samples and sample_rate must be positive")
        if not -1.0 <= self.tilt <= 1.0:
            raise ValidationError("tilt must lie in [-1, 1]")
        if self.noise_level < 0:
            raise ValidationError("noise_level must be non-negative")
        if not 0.0 <= self.noise_jitter <= 1.0:
            raise ValidationError("noise_jitter must lie in [0, 1]")

    def counts(self) -> dict[str, int]:
        if isinstance(self.utterances_per_label, Mapping):
            extra = set(self.utterances_per_label) - set(self.label_space)
            if extra:
                raise ValidationError(f"{self.corpus_id}: counts given for labels outside label_space: {sorted(extra)}")
            return {e: int(self.utterances_per_label.get(e, 0)) for e in self.label_space}
        return dict.fromkeys(self.label_space, int(self.utterances_per_label))

    @classmethod
    def from_dict(cls, d: Mapping) -> SyntheticSpec:
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synthetic spec key(s): {sorted(unknown)}")
        if "seed" not in d:
            raise ValidationError(f"synthetic spec {d.get('corpus_id', '?')!r}: missing seed")
        if "emotion_signal_params" in d:
            d["emotion_signal_params"] = {k: tuple(v) for k, v in d["emotion_signal_params"].items()}
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["label_space"] = list(self.label_space)
        d["emotion_signal_params"] = {k: list(v) for k, v in self.emotion_signal_params.items()}
        if isinstance(self.utterances_per_label, Mapping):
            d["utterances_per_label"] = dict(self.utterances_per_label)
        return d


def synth_waveform(spec: SyntheticSpec, label: str, rng: np.random.Generator) -> np.ndarray:
    f0, am_rate = spec.emotion_signal_params[label]
    n = spec.duration_samples
    t = np.arange(n) / spec.sample_rate
    f0 = f0 * (1.0 + spec.f0_jitter * rng.uniform(-1.0, 1.0))
    phase, am_phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
    tone = np.zeros(n)
    for h, amp in ((1, 1.0), (2, 0.35), (3, 0.15)):
        tone += amp * np.sin(2.0 * np.pi * h * f0 * t + h * phase)
    envelope = 1.0 + spec.am_depth * np.sin(2.0 * np.pi * am_rate * t + am_phase)
    x = tone * envelope
    tilt = np.clip(spec.tilt + spec.tilt_jitter * rng.uniform(-1.0, 1.0), -1.0, 1.0)
    x[1:] -= tilt * x[:-1].copy()
    x *= rng.uniform(0.4, 0.8) / np.abs(x).max()
    level = spec.noise_level * (1.0 + spec.noise_jitter * rng.uniform(-1.0, 1.0))
    x += level * rng.standard_normal(n)
    return np.clip(x, -1.0, 1.0).astype(np.float32)


def generate_synthetic(spec: SyntheticSpec) -> CorpusManifest:
    """Build a labelled corpus; a pure function of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    utterances = []
    for label, count in spec.counts().items():
        for i in range(count):
            utterances.append(
                Utterance(
                    id=f"{spec.corpus_id}-{label}-{i:04d}",
                    corpus_id=spec.corpus_id,
                    samples=synth_waveform(spec, label, rng),
                    sample_rate=spec.sample_rate,
                    label=label,
                )
            )
    return CorpusManifest(spec.corpus_id, spec.label_space, tuple(utterances))


def desk_scenario(seed: int = 0) -> tuple[SyntheticSpec, SyntheticSpec]:
    """The two-corpus desk-scale scenario: a 6-label and a 4-label corpus of
    200 utterances each, with opposite spectral tilt and different noise."""
    six = SyntheticSpec(
        corpus_id="casia",
        label_space=CASIA_LABELS,
        utterances_per_label={"neutral": 33, "sad": 33, "angry": 33, "happy": 33, "fear": 34, "surprise": 34},
        seed=seed * 2 + 1,
        tilt=0.3,
        noise_level=0.05,
        noise_jitter=0.8,
    )
    four = SyntheticSpec(
        corpus_id="iemocap",
        label_space=IEMOCAP_LABELS,
        utterances_per_label=50,
        seed=seed * 2 + 2,
        tilt=-0.3,
        noise_level=0.045,
        noise_jitter=0.8,
    )
    return six, four


# -- cross-validation folds ------------------------------------------------


def assign_folds(manifest: CorpusManifest, k: int = 5, seed: int = 0) -> CorpusManifest:
    """Stratified random k-fold assignment.

    Per label, fold sizes differ by at most one; the starting fold rotates
    across labels so overall fold sizes stay balanced too.
    """
    if k < 2:
        raise ValidationError("k must be at least 2")
    counts = manifest.label_counts()
    for label, n in counts.items():
        if 0 < n < k:
            raise ValidationError(f"label {label!r} has {n} utterances, fewer than k={k}")
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[int]] = {e: [] for e in manifest.label_space}
    for idx, u in enumerate(manifest.utterances):
        by_label[u.label].append(idx)
    folds = [0] * len(manifest.utterances)
    offset = 0
    for label in manifest.label_space:
        idxs = by_label[label]
        for pos, j in enumerate(rng.permutation(len(idxs))):
            folds[idxs[j]] = (offset + pos) % k
        offset += len(idxs)
    utterances = tuple(dataclasses.replace(u, fold=f) for u, f in zip(manifest.utterances, folds))
    return dataclasses.replace(manifest, utterances=utterances, n_folds=k)


def split(manifest: CorpusManifest, test_fold: int) -> tuple[list[Utterance], list[Utterance]]:
    if manifest.n_folds is None or any(u.fold is None for u in manifest.utterances):
        raise ValidationError(f"corpus {manifest.corpus_id!r}: folds not assigned")
    if not 0 <= test_fold < manifest.n_folds:
        raise IndexError(f"test_fold {test_fold} outside [0, {manifest.n_folds})")
    train = [u for u in manifest.utterances if u.fold != test_fold]
    test = [u for u in manifest.utterances if u.fold == test_fold]
    return train, test


def dominant_frequency_bin(samples: Sequence[float]) -> int:
    """Index of the largest-magnitude non-DC rFFT bin."""
    spectrum = np.abs(np.fft.rfft(np.asarray(samples, dtype=np.float64)))
    spectrum[0] = 0.0
    return int(np.argmax(spectrum))

