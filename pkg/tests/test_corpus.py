import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xscl.corpus import (
    CASIA_LABELS,
    IEMOCAP_LABELS,
    CorpusManifest,
    SyntheticSpec,
    Utterance,
    assign_folds,
    desk_scenario,
    dominant_frequency_bin,
    generate_synthetic,
    load_manifest,
    split,
    write_manifest,
)
from xscl.errors import ManifestError, ValidationError


def _write_lines(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    return path


def test_manifest_roundtrip_four_utterances(tmp_path):
    header = {"corpus_id": "toy", "label_space": ["happy", "sad"]}
    recs = [
        {"id": f"u{i}", "label": lab, "sample_rate": 16000, "samples": [0.1 * i, -0.2, 0.3]}
        for i, lab in enumerate(["happy", "sad", "happy", "sad"])
    ]
    m = load_manifest(_write_lines(tmp_path / "toy.jsonl", [header, *recs]))
    assert len(m) == 4
    assert m.label_space == ("sad", "happy")
    assert m.utterances[1].label == "sad"


def test_manifest_label_outside_space(tmp_path):
    header = {"corpus_id": "iem", "label_space": list(IEMOCAP_LABELS)}
    recs = [{"id": "a", "label": "fear", "sample_rate": 16000, "samples": [0.0, 0.1]}]
    with pytest.raises(ValidationError, match="fear"):
        load_manifest(_write_lines(tmp_path / "m.jsonl", [header, *recs]))


def test_manifest_empty_corpus(tmp_path):
    with pytest.raises(ValidationError, match="empty corpus"):
        load_manifest(_write_lines(tmp_path / "m.jsonl", [{"label_space": ["sad"]}]))


def test_manifest_malformed_line_is_named(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(
        json.dumps({"label_space": ["sad"]})
        + "\n"
        + json.dumps({"id": "a", "label": "sad", "sample_rate": 16000, "samples": [0.0]})
        + "\n{not json\n"
    )
    with pytest.raises(ManifestError, match="line 3") as info:
        load_manifest(path)
    assert info.value.line == 3


def test_manifest_missing_field_and_both_payloads(tmp_path):
    header = {"label_space": ["sad"]}
    with pytest.raises(ManifestError, match="sample_rate"):
        load_manifest(_write_lines(tmp_path / "a.jsonl", [header, {"id": "a", "label": "sad", "samples": [0.0]}]))
    rec = {"id": "a", "label": "sad", "sample_rate": 1, "samples": [0.0], "audio_path": "x.f32"}
    with pytest.raises(ManifestError, match="exactly one"):
        load_manifest(_write_lines(tmp_path / "b.jsonl", [header, rec]))


def test_manifest_missing_audio_file(tmp_path):
    rec = {"id": "a", "label": "sad", "sample_rate": 16000, "audio_path": "nope.f32"}
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(_write_lines(tmp_path / "m.jsonl", [{"label_space": ["sad"]}, rec]))


def test_write_manifest_roundtrip_raw_audio(tmp_path):
    m = assign_folds(generate_synthetic(SyntheticSpec("c", ["sad", "happy"], 5, seed=1, duration_samples=100)), 5, 0)
    path = write_manifest(m, tmp_path / "c.jsonl")
    assert (tmp_path / "c_audio" / "c-sad-0000.f32").stat().st_size == 400
    back = load_manifest(path)
    assert back.n_folds == 5
    assert [u.id for u in back.utterances] == [u.id for u in m.utterances]
    for u, v in zip(m.utterances, back.utterances):
        assert u.samples.tobytes() == v.samples.tobytes()
        assert u.fold == v.fold
    inline = load_manifest(write_manifest(m, tmp_path / "inline.jsonl", inline=True))
    assert inline.utterances[3].samples.tobytes() == m.utterances[3].samples.tobytes()


def test_utterance_invariants():
    with pytest.raises(ValidationError):
        Utterance("a", "c", np.array([]), 16000, "sad")
    with pytest.raises(ValidationError):
        Utterance("a", "c", np.array([1.5]), 16000, "sad")
    with pytest.raises(ValidationError):
        Utterance("a", "c", np.array([np.nan]), 16000, "sad")
    with pytest.raises(ValidationError):
        Utterance("a", "c", np.array([0.1]), 16000, "bored")
    u = Utterance("a", "c", [0.5, -0.5], 16000, "sad")
    with pytest.raises(ValueError):
        u.samples[0] = 0.0


def test_duplicate_ids_rejected():
    u = Utterance("a", "c", [0.1], 16000, "sad")
    with pytest.raises(ValidationError, match="duplicate"):
        CorpusManifest("c", ["sad"], (u, u))


def test_generate_counts_and_determinism():
    spec = SyntheticSpec("casia", CASIA_LABELS, 10, seed=7, duration_samples=400)
    m = generate_synthetic(spec)
    assert len(m) == 60
    assert set(m.label_counts().values()) == {10}
    again = generate_synthetic(spec)
    assert all(u.samples.tobytes() == v.samples.tobytes() for u, v in zip(m.utterances, again.utterances))
    other = generate_synthetic(SyntheticSpec("casia", CASIA_LABELS, 10, seed=8, duration_samples=400))
    assert m.utterances[0].samples.tobytes() != other.utterances[0].samples.tobytes()


def test_generate_rejects_zero_count_and_clashing_params():
    with pytest.raises(ValidationError):
        SyntheticSpec("c", ["sad"], 0, seed=1)
    with pytest.raises(ValidationError, match="distinct"):
        SyntheticSpec("c", ["sad", "happy"], 1, seed=1, emotion_signal_params={"sad": (100, 2), "happy": (100, 2)})


def test_spec_dict_roundtrip_and_unknown_keys():
    spec = desk_scenario(3)[0]
    assert SyntheticSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValidationError):
        SyntheticSpec.from_dict({**spec.to_dict(), "noise": 0.1})
    d = spec.to_dict()
    del d["seed"]
    with pytest.raises(ValidationError, match="seed"):
        SyntheticSpec.from_dict(d)


def test_desk_scenario_shape():
    six, four = desk_scenario(0)
    assert sum(six.counts().values()) == 200 and sum(four.counts().values()) == 200
    assert set(four.label_space) < set(six.label_space)
    assert len(six.label_space) == 6 and len(four.label_space) == 4


def test_shared_emotion_dominant_frequency():
    # same emotion params, different nuisance: waveforms differ, FFT peak agrees within one bin
    a = generate_synthetic(SyntheticSpec("a", ["happy"], 8, seed=1, duration_samples=8000, tilt=0.4, noise_level=0.02))
    b = generate_synthetic(SyntheticSpec("b", ["happy"], 8, seed=2, duration_samples=8000, tilt=-0.4, noise_level=0.1))
    expected = round(270.0 * 8000 / 16000)
    for u, v in zip(a.utterances, b.utterances):
        assert not np.array_equal(u.samples, v.samples)
        assert abs(dominant_frequency_bin(u.samples) - dominant_frequency_bin(v.samples)) <= 1
        assert abs(dominant_frequency_bin(u.samples) - expected) <= 1


def test_assign_folds_sixty():
    m = assign_folds(generate_synthetic(SyntheticSpec("c", CASIA_LABELS, 10, seed=7, duration_samples=64)), 5, seed=3)
    sizes = np.bincount([u.fold for u in m.utterances], minlength=5)
    assert sizes.tolist() == [12] * 5
    for label in CASIA_LABELS:
        per = np.bincount([u.fold for u in m.utterances if u.label == label], minlength=5)
        assert per.tolist() == [2] * 5
    again = assign_folds(m, 5, seed=3)
    assert [u.fold for u in again.utterances] == [u.fold for u in m.utterances]


def test_assign_folds_too_few_names_label():
    m = generate_synthetic(SyntheticSpec("c", ["sad", "happy"], {"sad": 5, "happy": 3}, seed=1, duration_samples=64))
    with pytest.raises(ValidationError, match="happy"):
        assign_folds(m, 5)
    with pytest.raises(ValidationError):
        assign_folds(m, 1)


def test_split_sizes_and_errors():
    m = generate_synthetic(SyntheticSpec("c", CASIA_LABELS, 10, seed=7, duration_samples=64))
    with pytest.raises(ValidationError, match="folds not assigned"):
        split(m, 0)
    m = assign_folds(m, 5, seed=0)
    train, test = split(m, 0)
    assert (len(train), len(test)) == (48, 12)
    with pytest.raises(IndexError):
        split(m, 5)


@settings(max_examples=30, deadline=None)
@given(
    counts=st.lists(st.integers(min_value=2, max_value=12), min_size=1, max_size=6),
    k=st.integers(min_value=2, max_value=5),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
)
def test_folds_partition_and_stratify(counts, k, seed):
    labels = CASIA_LABELS[: len(counts)]
    counts = [max(c, k) for c in counts]
    m = generate_synthetic(SyntheticSpec("c", labels, dict(zip(labels, counts)), seed=1, duration_samples=16))
    m = assign_folds(m, k, seed)
    ids = {u.id for u in m.utterances}
    for f in range(k):
        train, test = split(m, f)
        assert {u.id for u in train} | {u.id for u in test} == ids
        assert not {u.id for u in train} & {u.id for u in test}
    for label in labels:
        per = np.bincount([u.fold for u in m.utterances if u.label == label], minlength=k)
        assert per.max() - per.min() <= 1
    sizes = np.bincount([u.fold for u in m.utterances], minlength=k)
    assert sizes.max() - sizes.min() <= 1
