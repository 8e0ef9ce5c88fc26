"""Speech representation stack with attention pooling and a classifier head.

Waveform -> frozen strided conv front-end -> frozen feature projection ->
pre-norm transformer blocks -> attention pooling -> two-layer ReLU
classifier. Gradients are analytic and only
computed for parameter groups that are not frozen.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels as K
from .errors import ConfigError, StateError, ValidationError

GROUPS = ("frontend", "projection", "encoder", "pooling", "classifier")
STAGES = ("init", "stage1", "stage2", "ft")

MAGIC = b"XSCL"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    # (kernel width, stride, channels); product of strides is the frame hop
    conv_layers: tuple[tuple[int, int, int], ...] = (
        (10, 5, 32),
        (8, 4, 32),
        (8, 4, 32),
        (4, 2, 32),
        (4, 2, 32),
    )
    d_model: int = 32
    n_layers: int = 4
    n_heads: int = 2
    ffn_dim: int = 64
    classifier_hidden: int = 256
    n_classes: int = 4
    input_samples: int = 8000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(tuple(int(v) for v in c) for c in self.conv_layers))
        if not self.conv_layers:
            raise ConfigError("conv_layers must not be empty")
        for k, s, c in self.conv_layers:
            if k < 1 or s < 1 or c < 1:
                raise ConfigError(f"invalid conv layer {(k, s, c)}")
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.n_layers < 0 or self.ffn_dim < 1:
            raise ConfigError("n_layers must be >= 0 and ffn_dim >= 1")
        if self.classifier_hidden <= 0 or self.n_classes < 1:
            raise ConfigError("classifier_hidden and n_classes must be positive")

    @property
    def total_stride(self) -> int:
        return int(np.prod([s for _, s, _ in self.conv_layers]))

    @property
    def receptive_field(self) -> int:
        r, jump = 1, 1
        for k, s, _ in self.conv_layers:
            r += (k - 1) * jump
            jump *= s
        return r

    def n_frames(self, n_samples: int) -> int:
        for _, s, _ in self.conv_layers:
            n_samples = -(-n_samples // s)
        return n_samples

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["conv_layers"] = [list(c) for c in self.conv_layers]
        return d

    @classmethod
    def from_dict(cls, d) -> ModelConfig:
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model config key(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class LayerActivations:
    """Per-layer features; ``layers[0]`` is the projection output, ``layers[-1]`` the final H."""

    layers: list[np.ndarray]

    @property
    def final(self) -> np.ndarray:
        return self.layers[-1]

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]


def pool(w: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Attention-pooled feature of ``H`` (T, d) or (B, T, d)."""
    H = np.asarray(H)
    if H.ndim < 2 or H.shape[-2] == 0:
        raise ValidationError("pooling needs at least one time step")
    return K.attention_pool_forward(H, w)[0]


def fit_length(samples: np.ndarray, n: int) -> np.ndarray:
    """Centre-crop or symmetrically zero-pad a waveform to ``n`` samples."""
    m = samples.shape[-1]
    if m == n:
        return samples
    if m > n:
        start = (m - n) // 2
        return samples[..., start : start + n]
    left = (n - m) // 2
    pad = [(0, 0)] * (samples.ndim - 1) + [(left, n - m - left)]
    return np.pad(samples, pad)


class EncoderStack:
    """Parameters plus the recorded tape of the most recent forward pass."""

    def __init__(self, config: ModelConfig, dtype=np.float32, frozen=("frontend", "projection")):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.frozen = set(frozen)
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(config.seed)
        self._init_frontend(rng)
        self._init_projection(rng)
        self._init_encoder(rng)
        self.params["pooling.w"] = np.zeros(config.d_model)
        self._init_classifier(rng, config.n_classes)
        self._calibrate_projection()
        self._cast()
        self._tape: dict = {}

    # -- construction ------------------------------------------------------

    def _init_frontend(self, rng):
        c_in = 1
        for i, (k, _, c_out) in enumerate(self.config.conv_layers):
            self.params[f"frontend.{i}.W"] = rng.normal(0.0, np.sqrt(2.0 / (k * c_in)), size=(k, c_in, c_out))
            self.params[f"frontend.{i}.b"] = np.zeros(c_out)
            c_in = c_out

    def _init_projection(self, rng):
        c = self.config.conv_layers[-1][2]
        d = self.config.d_model
        self.params["projection.ln.g"] = np.ones(c)
        self.params["projection.ln.b"] = np.zeros(c)
        self.params["projection.W"] = rng.normal(0.0, 1.0 / np.sqrt(c), size=(c, d))
        self.params["projection.b"] = np.zeros(d)

    def _init_encoder(self, rng):
        d, f = self.config.d_model, self.config.ffn_dim
        for i in range(self.config.n_layers):
            p = f"encoder.{i}."
            self.params[p + "ln1.g"] = np.ones(d)
            self.params[p + "ln1.b"] = np.zeros(d)
            self.params[p + "Wqkv"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, 3 * d))
            self.params[p + "bqv"] = np.zeros(2 * d)
            self.params[p + "Wo"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
            self.params[p + "bo"] = np.zeros(d)
            self.params[p + "ln2.g"] = np.ones(d)
            self.params[p + "ln2.b"] = np.zeros(d)
            self.params[p + "W1"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, f))
            self.params[p + "b1"] = np.zeros(f)
            self.params[p + "W2"] = rng.normal(0.0, 1.0 / np.sqrt(f), size=(f, d))
            self.params[p + "b2"] = np.zeros(d)

    def _init_classifier(self, rng, n_classes):
        d, h = self.config.d_model, self.config.classifier_hidden
        for name, fan_in, shape in (("1", d, (d, h)), ("2", h, (h, n_classes))):
            bound = 1.0 / np.sqrt(fan_in)
            self.params[f"classifier.W{name}"] = rng.uniform(-bound, bound, size=shape)
            self.params[f"classifier.b{name}"] = rng.uniform(-bound, bound, size=shape[1])

    def _calibrate_projection(self, n_ref: int = 8, level: float = 0.1):
        """Set the projection bias so a seeded white-noise reference maps to zero mean.

        Without this the random front-end output is dominated by one shared
        direction and every pair of utterances looks nearly identical.
        """
        self.params["projection.b"] = np.zeros(self.config.d_model)
        rng = np.random.default_rng([self.config.seed, 0x5CA1])
        ref = np.clip(level * rng.standard_normal((n_ref, max(self.config.input_samples, self.config.receptive_field))), -1, 1)
        saved, self.dtype = self.dtype, np.dtype(np.float64)
        try:
            self.params["projection.b"] = -self.frontend(ref).mean(axis=(0, 1))
        finally:
            self.dtype = saved

    def _cast(self):
        for name, value in self.params.items():
            self.params[name] = np.ascontiguousarray(value, dtype=self.dtype)

    def reset_classifier(self, n_classes: int, seed: int) -> None:
        """Replace the head with a freshly initialised one of width ``n_classes``."""
        self.config = dataclasses.replace(self.config, n_classes=n_classes)
        self._init_classifier(np.random.default_rng(seed), n_classes)
        self._cast()
        self._tape = {}

    def copy(self, dtype=None) -> EncoderStack:
        other = object.__new__(EncoderStack)
        other.config = self.config
        other.dtype = np.dtype(dtype or self.dtype)
        other.frozen = set(self.frozen)
        other.params = {k: v.astype(other.dtype, copy=True) for k, v in self.params.items()}
        other._tape = {}
        return other

    # -- parameter groups --------------------------------------------------

    @staticmethod
    def group_of(name: str) -> str:
        return name.split(".", 1)[0]

    def group_params(self, group: str) -> dict[str, np.ndarray]:
        if group not in GROUPS:
            raise KeyError(group)
        return {k: v for k, v in self.params.items() if self.group_of(k) == group}

    def trainable_names(self) -> list[str]:
        return [k for k in self.params if self.group_of(k) not in self.frozen]

    def group_bytes(self, group: str) -> bytes:
        return b"".join(v.tobytes() for v in self.group_params(group).values())

    def n_parameters(self, group: str | None = None) -> int:
        if group is None:
            return sum(v.size for v in self.params.values())
        return sum(v.size for v in self.group_params(group).values())

    # -- forward -----------------------------------------------------------

    def frontend(self, samples) -> np.ndarray:
        """Frozen conv front-end and projection: waveform(s) -> layer-0 features (B, T, d)."""
        x = np.asarray(samples, dtype=self.dtype)
        if x.ndim == 1:
            x = x[None]
        if x.shape[-1] < self.config.receptive_field:
            raise ValidationError(
                f"waveform has {x.shape[-1]} samples; minimum length is {self.config.receptive_field}"
            )
        h = x[:, :, None]
        p = self.params
        for i, (_, stride, _) in enumerate(self.config.conv_layers):
            h = K.conv1d(h, p[f"frontend.{i}.W"], p[f"frontend.{i}.b"], stride)
            if i == 0:
                h = K.layer_norm_forward(h)[0]
            h = K.gelu_forward(h)[0]
        h = K.layer_norm_forward(h, p["projection.ln.g"], p["projection.ln.b"])[0]
        h = h @ p["projection.W"] + p["projection.b"]
        return h.astype(self.dtype, copy=False)

    def encode(self, h0: np.ndarray, record: bool = True) -> LayerActivations:
        """Run the transformer blocks on layer-0 features (B, T, d)."""
        p, nh = self.params, self.config.n_heads
        h = np.asarray(h0, dtype=self.dtype)
        layers = [h]
        caches = []
        for i in range(self.config.n_layers):
            q = f"encoder.{i}."
            a_in, c_ln1 = K.layer_norm_forward(h, p[q + "ln1.g"], p[q + "ln1.b"])
            a_out, c_att = K.mha_forward(a_in, p[q + "Wqkv"], p[q + "bqv"], p[q + "Wo"], p[q + "bo"], nh)
            h = h + a_out
            f_in, c_ln2 = K.layer_norm_forward(h, p[q + "ln2.g"], p[q + "ln2.b"])
            z, c_fc1 = K.linear_forward(f_in, p[q + "W1"], p[q + "b1"])
            g, c_act = K.gelu_forward(z)
            f_out, c_fc2 = K.linear_forward(g, p[q + "W2"], p[q + "b2"])
            h = h + f_out
            layers.append(h)
            if record:
                caches.append((c_ln1, c_att, c_ln2, c_fc1, c_act, c_fc2))
        if record:
            self._tape = {"encode": caches}
        return LayerActivations(layers)

    def forward(self, samples, record: bool = True) -> LayerActivations:
        """Waveform(s) to all layer activations; a 1-D waveform keeps a batch axis of 1."""
        return self.encode(self.frontend(samples), record=record)

    def pool(self, H: np.ndarray, record: bool = True) -> np.ndarray:
        H = np.asarray(H, dtype=self.dtype)
        if H.ndim < 2 or H.shape[-2] == 0:
            raise ValidationError("pooling needs at least one time step")
        C, cache = K.attention_pool_forward(H, self.params["pooling.w"])
        if record:
            self._tape["pool"] = cache
        return C

    def classify(self, C: np.ndarray, record: bool = True) -> np.ndarray:
        C = np.asarray(C, dtype=self.dtype)
        if C.shape[-1] != self.config.d_model:
            raise ValidationError(f"pooled feature has dimension {C.shape[-1]}, expected {self.config.d_model}")
        p = self.params
        z, c1 = K.linear_forward(C, p["classifier.W1"], p["classifier.b1"])
        hid, c_relu = K.relu_forward(z)
        scores, c2 = K.linear_forward(hid, p["classifier.W2"], p["classifier.b2"])
        if record:
            self._tape["classify"] = (c1, c_relu, c2)
        return scores

    # -- backward ----------------------------------------------------------

    def backward(self, d_pooled=None, d_scores=None) -> dict[str, np.ndarray]:
        """Gradients of the trainable parameters given upstream gradients.

        ``d_scores`` flows through the classifier into the pooled features,
        where it is summed with ``d_pooled``. Frozen groups get no entry.
        The tape is consumed.
        """
        if d_pooled is None and d_scores is None:
            raise ValueError("backward needs d_pooled and/or d_scores")
        tape, self._tape = self._tape, {}
        p = self.params
        grads: dict[str, np.ndarray] = {}
        trainable = {g for g in GROUPS if g not in self.frozen}

        dC = None if d_pooled is None else np.asarray(d_pooled, dtype=self.dtype)
        if d_scores is not None:
            if "classify" not in tape:
                raise StateError("backward called without a recorded classify pass")
            c1, c_relu, c2 = tape["classify"]
            dhid, dW2, db2 = K.linear_backward(np.asarray(d_scores, dtype=self.dtype), c2, p["classifier.W2"])
            dz = K.relu_backward(dhid, c_relu)
            dCc, dW1, db1 = K.linear_backward(dz, c1, p["classifier.W1"])
            if "classifier" in trainable:
                grads.update({"classifier.W1": dW1, "classifier.b1": db1, "classifier.W2": dW2, "classifier.b2": db2})
            dC = dCc if dC is None else dC + dCc

        if not trainable & {"pooling", "encoder"}:
            return grads
        if "pool" not in tape:
            raise StateError("backward called without a recorded pooling pass")
        dH, dw = K.attention_pool_backward(dC, tape["pool"], p["pooling.w"])
        if "pooling" in trainable:
            grads["pooling.w"] = dw

        if "encoder" not in trainable or self.config.n_layers == 0:
            return grads
        if "encode" not in tape:
            raise StateError("backward called without a recorded encoder pass")
        nh = self.config.n_heads
        dh = dH
        for i in reversed(range(self.config.n_layers)):
            q = f"encoder.{i}."
            c_ln1, c_att, c_ln2, c_fc1, c_act, c_fc2 = tape["encode"][i]
            dg, grads[q + "W2"], grads[q + "b2"] = K.linear_backward(dh, c_fc2, p[q + "W2"])
            dz = K.gelu_backward(dg, c_act)
            df, grads[q + "W1"], grads[q + "b1"] = K.linear_backward(dz, c_fc1, p[q + "W1"])
            dx, grads[q + "ln2.g"], grads[q + "ln2.b"] = K.layer_norm_backward(df, c_ln2, p[q + "ln2.g"])
            dh = dh + dx
            da, grads[q + "Wqkv"], grads[q + "bqv"], grads[q + "Wo"], grads[q + "bo"] = K.mha_backward(
                dh, c_att, p[q + "Wqkv"], p[q + "Wo"], nh
            )
            dx, grads[q + "ln1.g"], grads[q + "ln1.b"] = K.layer_norm_backward(da, c_ln1, p[q + "ln1.g"])
            dh = dh + dx
        return grads


def classify(stack: EncoderStack, C) -> np.ndarray:
    return stack.classify(C, record=False)


# -- checkpoints -------------------------------------------------------------


@dataclass
class Checkpoint:
    stack: EncoderStack
    stage: str
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)


def checkpoint_bytes(stack: EncoderStack, stage: str, rng_state=None, meta=None) -> bytes:
    """``XSCL`` + version byte + JSON header + named float32 tensors (all little-endian)."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage tag {stage!r}")
    header = {
        "config": stack.config.to_dict(),
        "stage": stage,
        "frozen": sorted(stack.frozen),
        "rng_state": rng_state,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    out = bytearray(MAGIC)
    out += struct.pack("<BI", FORMAT_VERSION, len(blob))
    out += blob
    out += struct.pack("<I", len(stack.params))
    for name, value in stack.params.items():
        key = name.encode()
        out += struct.pack("<H", len(key)) + key
        out += struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape)
        out += np.ascontiguousarray(value, dtype="<f4").tobytes()
    return bytes(out)


def save_checkpoint(path, stack: EncoderStack, stage: str, rng_state=None, meta=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(stack, stage, rng_state, meta))
    return path


def load_checkpoint(path, dtype=np.float32) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValidationError(f"{path}: not an XSCL checkpoint")
    try:
        return _parse_checkpoint(data, dtype)
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"{path}: corrupt checkpoint ({exc})") from exc


def _parse_checkpoint(data: bytes, dtype) -> Checkpoint:
    version, hlen = struct.unpack_from("<BI", data, 4)
    if version != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    off = 9
    header = json.loads(data[off : off + hlen])
    off += hlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    params = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + klen].decode()
        off += klen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
    if off != len(data):
        raise ValidationError("trailing bytes after last tensor")
    stack = object.__new__(EncoderStack)
    stack.config = ModelConfig.from_dict(header["config"])
    stack.dtype = np.dtype(dtype)
    stack.frozen = set(header["frozen"])
    stack.params = {k: np.array(v, dtype=stack.dtype) for k, v in params.items()}
    stack._tape = {}
    return Checkpoint(stack, header["stage"], header.get("rng_state"), header.get("meta", {}))
