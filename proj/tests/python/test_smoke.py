import json
import math

import numpy as np
import pytest

import cbpnet


def test_gelu_and_softmax():
    assert cbpnet.gelu(0.0) == 0.0
    x = 1.3
    assert cbpnet.gelu(x) == pytest.approx(0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3))), abs=1e-12)
    p = cbpnet.softmax([1.0, 2.0, 3.0])
    e = np.exp([1.0, 2.0, 3.0])
    assert np.allclose(p, e / e.sum(), atol=1e-12)


def test_prompt_selection_and_matching():
    assert cbpnet.select_eprompt([1.0, 0.0], [[0.0, 1.0], [2.0, 0.0]]) == 1
    assert cbpnet.select_eprompt([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]]) == 0
    assert cbpnet.matching_loss([1.0, 0.0], [3.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
    assert cbpnet.matching_loss([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(2.0)
    with pytest.raises(cbpnet.StateError):
        cbpnet.select_eprompt([1.0], [])


def test_metrics_and_csv():
    rows = [[0.9], [0.7, 0.8], [0.6, 0.7, 0.9]]
    assert cbpnet.avg_accuracy(rows) == pytest.approx((0.6 + 0.7 + 0.9) / 3)
    assert cbpnet.forgetting(rows) == pytest.approx(((0.9 - 0.6) + (0.8 - 0.7)) / 2)
    back = cbpnet.parse_matrix_csv(cbpnet.matrix_csv(rows))
    assert np.allclose([v for r in back for v in r], [v for r in rows for v in r])


def test_parameter_counts():
    r = cbpnet.count_trainable(preset="vit-b16")
    assert r["backbone"] == 85_797_120
    assert r["active_ratio"] < 0.002
    tiny = cbpnet.count_trainable(preset="tiny")
    d, h = 64, 16
    assert tiny["cbp"] == d * h + h + h * h + h + h * d + d


def test_container_round_trip(tmp_path):
    ds = cbpnet.generate_synthetic(3, 4, height=8, width=8, channels=3, noise=20.0, seed=5)
    path = str(tmp_path / "d.clds")
    cbpnet.save_container(path, ds["images"], ds["labels"], ds["class_count"])
    back = cbpnet.load_container(path)
    assert np.array_equal(back["images"], ds["images"])
    assert np.array_equal(back["labels"], ds["labels"])
    with open(path, "r+b") as f:
        f.write(b"XXXX")
    with pytest.raises(cbpnet.FormatError):
        cbpnet.load_container(path)


def small_config():
    cfg = json.loads(cbpnet.default_config())
    cfg["backbone"].update({"image_size": 16, "patch_size": 4, "depth": 3, "dim": 16, "heads": 2})
    cfg["prompts"].update({"g_layers": [0], "e_layers": [1, 2], "g_length": 2, "e_length": 2})
    cfg["cbp"].update({"hidden": 4, "output_dim": 16})
    cfg["train"].update({"epochs": 1, "pretrain_epochs": 1, "lr": 0.01})
    cfg["data"].update({"classes": 12, "per_class": 8, "base": 4, "tasks": 4})
    return json.dumps(cfg)


def test_run_sequence_is_deterministic():
    a = cbpnet.run_sequence(small_config(), seed=3)
    b = cbpnet.run_sequence(small_config(), seed=3)
    assert a["matrix_csv"] == b["matrix_csv"]
    assert len(a["matrix"]) == 4
    assert all(len(row) == i + 1 for i, row in enumerate(a["matrix"]))
    assert 0.0 <= a["avg_accuracy"] <= 1.0


def test_bad_config_raises():
    with pytest.raises(cbpnet.ConfigError):
        cbpnet.run_sequence(json.dumps({"cbp": {"rho": 2.0}}))
