import dataclasses
import time

import numpy as np
import pytest
from conftest import TINY_MODEL

from xscl import kernels as K
from xscl.encoder import (
    GROUPS,
    EncoderStack,
    ModelConfig,
    checkpoint_bytes,
    fit_length,
    load_checkpoint,
    pool,
    save_checkpoint,
)
from xscl.errors import ConfigError, StateError, ValidationError
from xscl.losses import ContrastFeatures, LossConfig, cross_entropy_grad, total_loss_grad

EPS = 1e-3
TOL = 1e-4


def five_point(f, P, idx, eps=EPS):
    """Fourth-order central difference of ``f`` in ``P[idx]`` with step ``eps``."""
    old = P[idx]
    vals = []
    for m in (2, 1, -1, -2):
        P[idx] = old + m * eps
        vals.append(f())
    P[idx] = old
    return (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * eps)


def _grad_instance(seed, frozen):
    stack = EncoderStack(TINY_MODEL, dtype=np.float64, frozen=frozen)
    rng = np.random.default_rng(seed)
    for k in stack.params:
        if k == "pooling.w" or k.endswith(("b1", "b2", "bo", "bqv", "ln1.b", "ln2.b")):
            stack.params[k] = stack.params[k] + rng.normal(0, 0.05, stack.params[k].shape)
    h0 = stack.frontend(rng.uniform(-0.5, 0.5, size=(8, TINY_MODEL.input_samples)))
    # keep classifier pre-activations clear of the ReLU kink so differences stay smooth
    for _ in range(50):
        C = stack.pool(stack.encode(h0, record=False).final, record=False)
        z = C @ stack.params["classifier.W1"] + stack.params["classifier.b1"]
        near = (np.abs(z) < 0.05).any(axis=0)
        if not near.any():
            break
        stack.params["classifier.b1"][near] += 0.1
    assert np.abs(z).min() >= 0.05
    return stack, h0, rng


def _check_all(stack, loss_and_upstream):
    _, d_pooled, d_scores = loss_and_upstream(True)
    grads = stack.backward(d_pooled=d_pooled, d_scores=d_scores)
    assert set(grads) == set(stack.trainable_names())
    worst = {}
    for name in stack.trainable_names():
        P = stack.params[name]
        for idx in np.ndindex(P.shape):
            n = five_point(lambda: loss_and_upstream(False)[0], P, idx)
            a = grads[name][idx]
            rel = abs(a - n) / max(abs(a), 1e-8)
            g = stack.group_of(name)
            worst[g] = max(worst.get(g, 0.0), rel)
    return worst


def test_gradients_supervised_path():
    start = time.perf_counter()
    stack, h0, rng = _grad_instance(0, frozen=("frontend", "projection"))
    y = rng.integers(TINY_MODEL.n_classes, size=8)
    R = 0.1 * rng.normal(size=(8, TINY_MODEL.d_model))

    def loss(record):
        C = stack.pool(stack.encode(h0, record=record).final, record=record)
        ce, ds = cross_entropy_grad(stack.classify(C, record=record), y)
        return (R * C).sum() + ce, R, ds

    worst = _check_all(stack, loss)
    assert set(worst) == {"encoder", "pooling", "classifier"}
    assert max(worst.values()) <= TOL, worst
    assert time.perf_counter() - start < 60


def test_gradients_contrastive_path():
    stack, h0, rng = _grad_instance(4, frozen=("frontend", "projection", "classifier"))
    perm = rng.permutation(4)
    cfg = LossConfig()

    def loss(record):
        C = stack.pool(stack.encode(h0, record=record).final, record=record)
        L, _, _, gp, gn = total_loss_grad(ContrastFeatures(C[:4], C[4:]), cfg, perm=perm)
        return L, np.concatenate([gp, gn]), None

    C = stack.pool(stack.encode(h0, record=False).final, record=False)
    U = C / np.linalg.norm(C, axis=1, keepdims=True)
    assert np.abs(U[:4] @ U[4:].T - cfg.margin).min() > 0.03  # away from the hinge
    worst = _check_all(stack, loss)
    assert set(worst) == {"encoder", "pooling"}
    assert max(worst.values()) <= TOL, worst


def test_two_point_differences_agree_in_norm():
    # the plain central difference at the same step, judged per tensor
    stack, h0, rng = _grad_instance(2, frozen=("frontend", "projection"))
    y = rng.integers(TINY_MODEL.n_classes, size=8)

    def f():
        C = stack.pool(stack.encode(h0, record=False).final, record=False)
        return cross_entropy_grad(stack.classify(C, record=False), y)[0]

    C = stack.pool(stack.encode(h0).final)
    _, ds = cross_entropy_grad(stack.classify(C), y)
    grads = stack.backward(d_scores=ds)
    for name in ("encoder.1.W1", "encoder.0.Wqkv", "pooling.w", "classifier.W2"):
        P = stack.params[name]
        num = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + EPS
            up = f()
            P[idx] = old - EPS
            num[idx] = (up - f()) / (2 * EPS)
            P[idx] = old
        assert np.linalg.norm(grads[name] - num) <= 1e-4 * np.linalg.norm(grads[name])


def test_frozen_groups_get_no_gradient_and_linearity():
    stack, h0, rng = _grad_instance(3, frozen=("frontend", "projection"))
    y = rng.integers(4, size=8)
    C = stack.pool(stack.encode(h0).final)
    _, ds = cross_entropy_grad(stack.classify(C), y)
    g1 = stack.backward(d_scores=ds)
    assert not any(stack.group_of(k) in ("frontend", "projection") for k in g1)
    C = stack.pool(stack.encode(h0).final)
    stack.classify(C)
    g2 = stack.backward(d_scores=2 * ds)
    for k in g1:
        assert np.allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)


def test_backward_without_forward():
    stack = EncoderStack(TINY_MODEL)
    with pytest.raises(StateError):
        stack.backward(d_scores=np.zeros((1, 4)))
    C = stack.pool(stack.encode(stack.frontend(np.zeros((1, 64)))).final)
    stack.classify(C)
    stack.backward(d_scores=np.zeros((1, 4), dtype=np.float32))
    with pytest.raises(StateError):  # the tape is consumed
        stack.backward(d_scores=np.zeros((1, 4)))


def test_default_config_shapes():
    cfg = ModelConfig()
    assert cfg.total_stride == 320
    assert cfg.classifier_hidden == 256
    assert (cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.ffn_dim) == (32, 4, 2, 64)
    stack = EncoderStack(cfg)
    acts = stack.forward(np.zeros(8000, dtype=np.float32))
    assert len(acts) == cfg.n_layers + 1
    for layer in acts.layers:
        assert layer.shape == (1, 25, 32)
        assert np.all(np.isfinite(layer))


def test_forward_deterministic_and_short_input():
    stack = EncoderStack(ModelConfig())
    x = np.random.default_rng(0).uniform(-1, 1, 8000).astype(np.float32)
    a, b = stack.forward(x), stack.forward(x)
    assert all(np.array_equal(u, v) for u, v in zip(a.layers, b.layers))
    with pytest.raises(ValidationError, match=str(ModelConfig().receptive_field)):
        stack.forward(np.zeros(100))


def test_model_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=30, n_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(classifier_hidden=0)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"d_modle": 32})
    cfg = ModelConfig(d_model=16, seed=9)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_pool_examples():
    rng = np.random.default_rng(4)
    H = rng.normal(size=(1, 5))
    assert np.array_equal(pool(rng.normal(size=5), H), H[0])
    H = rng.normal(size=(7, 5))
    assert np.allclose(pool(np.zeros(5), H), H.mean(axis=0), atol=1e-15)
    w = rng.normal(size=5)
    logits = H @ w
    a = np.exp(logits - logits.max())
    a /= a.sum()
    assert np.allclose(pool(w, H), a @ H, atol=1e-14)
    with pytest.raises(ValidationError):
        pool(w, np.zeros((0, 5)))


def test_pool_convex_and_shift_invariant():
    rng = np.random.default_rng(5)
    for _ in range(20):
        H = rng.normal(size=(6, 3))
        w = rng.normal(size=3) * 3
        C, (_, a) = K.attention_pool_forward(H, w)
        assert np.all(a >= 0) and a.sum() == pytest.approx(1.0)
        assert np.all(C <= H.max(axis=0) + 1e-12) and np.all(C >= H.min(axis=0) - 1e-12)
        shifted = K.softmax(H @ w + 17.0)
        assert np.allclose(shifted @ H, C, atol=1e-12)


def test_classify_examples():
    stack = EncoderStack(TINY_MODEL, dtype=np.float64)
    C = np.random.default_rng(6).normal(size=(3, 8))
    p = stack.params
    oracle = np.maximum(C @ p["classifier.W1"] + p["classifier.b1"], 0) @ p["classifier.W2"] + p["classifier.b2"]
    assert np.allclose(stack.classify(C, record=False), oracle, atol=1e-14)
    for k in ("classifier.W1", "classifier.b1", "classifier.W2", "classifier.b2"):
        p[k][...] = 0
    assert not stack.classify(C, record=False).any()
    with pytest.raises(ValidationError):
        stack.classify(np.zeros((1, 7)))


def test_reset_classifier_width():
    stack = EncoderStack(TINY_MODEL)
    stack.reset_classifier(6, seed=1)
    assert stack.params["classifier.W2"].shape == (16, 6)
    assert stack.config.n_classes == 6


def test_projection_calibration_centres_noise():
    stack = EncoderStack(ModelConfig())
    noise = np.clip(0.1 * np.random.default_rng(99).standard_normal((8, 8000)), -1, 1)
    mean = stack.frontend(noise).mean(axis=(0, 1))
    assert np.linalg.norm(mean) < 0.2 * np.sqrt(32)


def test_checkpoint_roundtrip_bitwise(tmp_path):
    stack = EncoderStack(TINY_MODEL)
    stack.params["pooling.w"] = np.linspace(-1, 1, 8).astype(np.float32)
    state = np.random.default_rng(3).bit_generator.state
    path = save_checkpoint(tmp_path / "m.ckpt", stack, "stage1", state, {"test_fold": 2})
    raw = path.read_bytes()
    assert raw[:4] == b"XSCL" and raw[4] == 1
    ck = load_checkpoint(path)
    assert ck.stage == "stage1" and ck.meta == {"test_fold": 2} and ck.rng_state == state
    assert ck.stack.frozen == stack.frozen
    x = np.random.default_rng(1).uniform(-1, 1, (2, 64))
    for u, v in zip(stack.forward(x).layers, ck.stack.forward(x).layers):
        assert u.tobytes() == v.tobytes()
    assert checkpoint_bytes(ck.stack, "stage1", state, {"test_fold": 2}) == raw


def test_checkpoint_rejects_bad_input(tmp_path):
    stack = EncoderStack(TINY_MODEL)
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "x.ckpt", stack, "stage9")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + bytes(10))
    with pytest.raises(ValidationError):
        load_checkpoint(bad)
    good = save_checkpoint(tmp_path / "g.ckpt", stack, "ft").read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(good[:-7])
    with pytest.raises(ValidationError):
        load_checkpoint(tmp_path / "trunc.ckpt")
    version = bytearray(good)
    version[4] = 9
    (tmp_path / "v.ckpt").write_bytes(bytes(version))
    with pytest.raises(ValidationError, match="version"):
        load_checkpoint(tmp_path / "v.ckpt")


def test_group_bookkeeping():
    stack = EncoderStack(TINY_MODEL)
    assert {stack.group_of(k) for k in stack.params} == set(GROUPS)
    assert stack.n_parameters() == sum(stack.n_parameters(g) for g in GROUPS)
    copy = stack.copy(np.float64)
    assert copy.params["encoder.0.W1"].dtype == np.float64
    copy.params["encoder.0.W1"][0, 0] += 1
    assert stack.params["encoder.0.W1"][0, 0] != copy.params["encoder.0.W1"][0, 0]


def test_fit_length():
    x = np.arange(10.0)
    assert np.array_equal(fit_length(x, 10), x)
    assert np.array_equal(fit_length(x, 6), x[2:8])
    padded = fit_length(x, 14)
    assert padded.shape == (14,) and np.array_equal(padded[2:12], x) and not padded[:2].any()


def test_dataclass_replace_keeps_config_frozen():
    cfg = dataclasses.replace(TINY_MODEL, n_classes=6)
    assert cfg.n_classes == 6 and TINY_MODEL.n_classes == 4
