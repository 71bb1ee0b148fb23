import math
import os
from pathlib import Path

import numpy as np
import pytest

import protoosr

ROOT = Path(__file__).resolve().parents[2]
MNIST = ROOT / "data" / "mnist"


def tiny_config():
    c = protoosr.Config()
    for key, value in {
        "data.train_images": MNIST / "train-images-idx3-ubyte",
        "data.train_labels": MNIST / "train-labels-idx1-ubyte",
        "data.test_images": MNIST / "t10k-images-idx3-ubyte",
        "data.test_labels": MNIST / "t10k-labels-idx1-ubyte",
        "data.train_limit": 200,
        "data.test_limit": 120,
        "encoder.height": 12,
        "encoder.width": 12,
        "encoder.stages": "4,8",
        "encoder.embedding_dim": 6,
        "optim.batch_size": 32,
        "optim.total_epochs": 2,
        "eval.validate_every": 0,
    }.items():
        c.set(key, str(value))
    return c


def test_auroc_matches_pair_count():
    rng = np.random.default_rng(3)
    known = rng.integers(0, 5, 40).astype(float)
    unknown = rng.integers(0, 5, 30).astype(float)
    pairs = (known[:, None] > unknown[None, :]) + 0.5 * (known[:, None] == unknown[None, :])
    assert protoosr.auroc(known, unknown) == pytest.approx(pairs.mean(), abs=1e-12)


def test_macro_f1_counts_unknown_as_a_class():
    truth = np.array([0, 0, 1, 1, protoosr.UNKNOWN])
    assert protoosr.macro_f1(truth, truth, 2) == 1.0
    pred = np.array([0, 0, 1, protoosr.UNKNOWN, protoosr.UNKNOWN])
    # class 1: 2/3, unknown: 2/3, class 0: 1
    assert protoosr.macro_f1(pred, truth, 2) == pytest.approx((1 + 2 / 3 + 2 / 3) / 3)


def test_openness_and_threshold():
    assert protoosr.openness(6, 10, 6) == pytest.approx(1 - math.sqrt(12 / 16))
    assert protoosr.calibrate_threshold(np.arange(101.0), 95.0) == pytest.approx(95.0)


def test_slc_is_zero_on_a_regular_simplex():
    assert abs(protoosr.slc(np.eye(4))) < 1e-12
    p = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 3.0]])
    r = np.linalg.norm(p - p.mean(axis=0), axis=1)
    assert protoosr.slc(p) == pytest.approx(r.var(ddof=1), rel=1e-9)


def test_score_nearest_prototype():
    protos = np.array([[0.0, 0.0], [3.0, 4.0]], dtype=np.float32)
    feats = np.array([[0.0, 1.0], [3.0, 3.0]], dtype=np.float32)
    dist, nearest, known = protoosr.score(feats, protos)
    assert list(nearest) == [0, 1]
    assert dist == pytest.approx([1.0, 1.0])
    assert known == pytest.approx(np.exp(-dist))


def test_config_round_trip_and_errors():
    c = tiny_config()
    again = protoosr.Config.from_text(c.to_text())
    assert again.to_text() == c.to_text()
    assert "loss.variant" in protoosr.Config.keys()
    with pytest.raises(protoosr.ConfigError):
        c.set("loss.lamda", "1")
    with pytest.raises(protoosr.ConfigError):
        c.apply("optim.batch_size=many")
    assert isinstance(protoosr.ConfigError("x"), protoosr.Error)


def test_bad_idx_is_a_format_error(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(b"\x00\x00\x08\x03garbage")
    c = tiny_config()
    c.set("data.train_images", str(bad))
    with pytest.raises(protoosr.DataFormatError):
        protoosr.prepare_data(c)


def test_train_evaluate_export(tmp_path):
    c = tiny_config()
    data = protoosr.prepare_data(c)
    assert len(data.known_classes) == 6
    seen = []
    model = protoosr.train(c, data, on_epoch=seen.append)
    assert [e["epoch"] for e in seen] == [0, 1]
    assert all(math.isfinite(e["loss"]) for e in seen)
    assert model.prototypes.shape == (6, 6)

    report = protoosr.evaluate(model, data)
    assert 0.0 <= report["auroc"] <= 1.0
    assert report["known_samples"] + report["unknown_samples"] == 120
    assert report["openness"] == pytest.approx(data.openness)

    path = tmp_path / "model.bin"
    model.save(path)
    loaded = protoosr.Checkpoint.load(path)
    assert loaded.to_bytes() == model.to_bytes()
    assert protoosr.evaluate(loaded, data) == report

    # same seed, same bytes
    assert protoosr.train(c, data).to_bytes() == model.to_bytes()

    images = np.zeros((3, 1, 12, 12), dtype=np.float32)
    assert model.embed(images).shape == (3, 6)

    csv = protoosr.export_features(model, data).splitlines()
    assert csv[0].startswith("kind,dataset,label,f0")
    assert len(csv) == 1 + 120 + 6

    points = protoosr.sweep_openness(model, data, [1, 2, 3, 4])
    assert [p[0] for p in points] == [1, 2, 3, 4]
    assert points[-1][2] == pytest.approx(report["macro_f1"])


def test_protocol_mismatch():
    c = tiny_config()
    data = protoosr.prepare_data(c)
    c.set("optim.total_epochs", "1")
    model = protoosr.train(c, data)
    other = protoosr.config_with(c, ["split.trial_seed=5"])
    with pytest.raises(protoosr.ProtocolError):
        protoosr.evaluate(model, protoosr.prepare_data(other))
