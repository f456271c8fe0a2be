import os

import numpy as np
import pytest

import xbarnet

MNIST = os.environ.get("XBARNET_MNIST_DIR", "/root/data/mnist")


def test_config_defaults_and_rejection():
    cfg = xbarnet.normalize_config({"schema_version": 1, "kind": "rvw-compare"})
    assert cfg["device"]["num_levels"] == 32
    assert cfg["rsa"]["fraction"] == 0.05
    with pytest.raises(xbarnet.ConfigError):
        xbarnet.normalize_config({"schema_version": 1, "bogus": 1})
    with pytest.raises(ValueError):
        xbarnet.normalize_config({"schema_version": 7})


def test_mlp_infer_and_checkpoint(tmp_path):
    net = xbarnet.make_mlp([5, 4, 3], seed=2)
    x = np.linspace(-1, 1, 10).reshape(2, 5)
    y = net.infer(x)
    assert y.shape == (2, 3)
    path = str(tmp_path / "net.json")
    digest = net.save(path)
    assert len(digest) == 16
    back = xbarnet.load_checkpoint(path)
    np.testing.assert_array_equal(back.infer(x), y)
    assert back.weight_count() == 5 * 4 + 4 * 3
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(xbarnet.CheckpointError):
        xbarnet.load_checkpoint(str(tmp_path / "bad.json"))


def test_dense_path_metrics():
    net = xbarnet.make_mlp([7, 5, 3])
    assert net.path_metrics() == [(7.0, 3.0), (5.0, 3.0)]


def test_selection_is_row_and_column_regular():
    cols = xbarnet.select_cells(40, 100, 0.05, seed=3)
    assert cols.shape == (40, 5)
    assert all(len(set(row)) == 5 for row in cols.tolist())
    counts = np.bincount(cols.ravel(), minlength=100)
    assert counts.max() - counts.min() <= 1


def test_fault_rates():
    fm = xbarnet.inject_faults(200, 200, {"sf1_rate": 0.1, "sf0_rate": 0.02}, seed=4)
    n = fm.size
    assert abs((fm == xbarnet.SF1).sum() / n - 0.1) < 3 * np.sqrt(0.1 * 0.9 / n)
    assert abs((fm == xbarnet.SF0).sum() / n - 0.02) < 3 * np.sqrt(0.02 * 0.98 / n)


@pytest.mark.skipif(not os.path.exists(os.path.join(MNIST, "t10k-images-idx3-ubyte")), reason="MNIST not available")
def test_small_compare_run(tmp_path):
    rec = xbarnet.run_experiment(
        {
            "schema_version": 1,
            "kind": "rvw-compare",
            "dataset": {"dir": MNIST, "subset": 3000, "validation_size": 500},
            "architecture": {"widths": [784, 32, 10]},
            "training": {"epochs": 2},
            "rsa": {"optimizer": {"epochs": 1}},
            "output_dir": str(tmp_path),
        }
    )
    assert rec["status"] == "ok"
    assert rec["summary"]["rsa_write_pulses"] == 0
    csv = xbarnet.export_plot_data([rec], "fig4")
    assert csv.startswith("arm,modeled_time,accuracy\n")
