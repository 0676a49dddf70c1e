import numpy as np
import pytest

from gntk_lab import experiments
from gntk_lab.errors import ConfigurationError, TrainingError
from gntk_lab.experiments import (ExperimentConfig, drift_rows, init_scale_check, row_seed, run_concentration,
                                  run_drift, run_equivalence, run_node_equivalence)


def small(**kw):
    base = dict(widths=[16, 64], seeds=[0, 1], T=50, trace_every=25)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_round_trip(self):
        cfg = small()
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("bad", [dict(widths=[64, 16]), dict(seeds=[]), dict(eta=-1.0),
                                     dict(mode="edge"), dict(T=-1)])
    def test_rejects(self, bad):
        with pytest.raises((ConfigurationError, ValueError)):
            small(**bad)

    def test_unknown_field(self):
        with pytest.raises(ConfigurationError, match="widthz"):
            ExperimentConfig.from_dict({"widthz": [1]})


def test_row_seed_depends_on_width_value():
    a = np.random.default_rng(row_seed(3, 64, 0)).random()
    assert a == np.random.default_rng(row_seed(3, 64, 0)).random()
    assert a != np.random.default_rng(row_seed(3, 128, 0)).random()
    assert a != np.random.default_rng(row_seed(3, 64, 1)).random()


def test_equivalence_rows_and_summary(reference_dataset):
    rep = run_equivalence(small(), reference_dataset)
    assert [(r["m"], r["seed"]) for r in rep.rows] == [(16, 0), (16, 1), (64, 0), (64, 1)]
    assert not rep.errors
    assert rep.summary["lambda_min"] > 0
    for r in rep.rows:
        assert r["gap_gnn_vs_exact"] >= 0 and np.isfinite(r["init_term"])
    assert set(rep.median_gaps()) == {16, 64}
    assert rep.to_csv().startswith("# ")


def test_equivalence_with_bias_uses_monte_carlo(reference_dataset):
    rep = run_equivalence(small(bias=0.5, m_mc=20_000), reference_dataset)
    assert rep.summary["lambda_min"] > 0


def test_unstable_step_rejected_up_front(reference_dataset):
    with pytest.raises(ConfigurationError):
        run_equivalence(small(eta=1e6, T=300), reference_dataset)


def test_failed_rows_are_reported_not_raised(reference_dataset, monkeypatch):
    def boom(*args, **kwargs):
        raise TrainingError("non-finite loss", step=3)

    monkeypatch.setattr(experiments, "train_blocks", boom)
    rep = run_equivalence(small(), reference_dataset)
    assert len(rep.errors) == 4 and "TrainingError" in rep.errors[0]["error"]
    assert np.isnan(rep.median_gaps()[16])


def test_node_equivalence(node_dataset):
    rep = run_node_equivalence(small(mode="node"), node_dataset)
    assert rep.summary["test_node"] == 7 and not rep.errors


def test_node_mode_mismatch(reference_dataset):
    with pytest.raises(ConfigurationError):
        run_node_equivalence(small(mode="node"), reference_dataset)


def test_concentration(reference_dataset):
    rows, slope = run_concentration(small(widths=[100, 1000, 10000], seeds=[0, 1, 2]), reference_dataset)
    assert len(rows) == 10 and rows[-1]["m"] == "slope"
    assert -0.8 < slope < -0.2


def test_drift(reference_dataset):
    res = run_drift(small(), reference_dataset)
    assert len(res) == 4 and all(rep is not None for _, _, rep, _ in res)
    rows = drift_rows(res)
    assert len(rows) == 4 * 3


def test_init_scale(reference_dataset):
    out = init_scale_check(reference_dataset, 256, range(5))
    assert all(r["holds"] for r in out)
