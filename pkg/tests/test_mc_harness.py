import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from netgames import mc_harness
from netgames.errors import ConfigError, FailureBudgetExceeded, SolverFailure
from netgames.mc_harness import (
    ExperimentConfig,
    fitted_rate,
    run_ane_comparison,
    run_convergence_experiment,
    run_coverage_experiment,
)

SMALL = ExperimentConfig(sizes=(150,), params=(2.0,), beta0=(0.0, 0.4), R=4, base_seed=99, grid_step=0.01)


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(R=0)
    with pytest.raises(ConfigError) as err:
        ExperimentConfig(beta0=(0.2, 1.0))
    assert err.value.where == "beta0"
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"R": 3, "colour": "red"})
    c = ExperimentConfig.from_dict(SMALL.to_dict())
    assert c == SMALL and c.config_hash() == SMALL.config_hash()
    assert replace(SMALL, threads=4).config_hash() == SMALL.config_hash()
    assert replace(SMALL, R=5).config_hash() != SMALL.config_hash()


@pytest.fixture(scope="module")
def base_report():
    return run_coverage_experiment(SMALL)


def test_single_replication_is_replayable(tmp_path):
    one = replace(SMALL, R=1)
    a = run_coverage_experiment(one, out_dir=tmp_path / "a")
    b = run_coverage_experiment(one, out_dir=tmp_path / "b")
    assert len(a.cells) == 2
    for name in ("coverage.csv", "lengths.csv", "replications.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("order", [[3, 2, 1, 0], [1, 3, 0, 2]])
def test_replication_order_does_not_matter(base_report, order):
    other = run_coverage_experiment(SMALL, reps=order)
    assert other.records == base_report.records
    assert other.cells == base_report.cells


def test_parallel_run_matches_serial(base_report):
    par = run_coverage_experiment(replace(SMALL, threads=2))
    assert par.records == base_report.records


def test_report_contents(base_report, tmp_path):
    base_report.write(tmp_path)
    for c in base_report.cells:
        assert 0.0 <= c["coverage_beta"] <= 1.0 and c["failures"] == 0
    with open(tmp_path / "coverage.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert all(r["config_hash"] == SMALL.config_hash() and r["base_seed"] == "99" for r in rows)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["R"] == 4 and man["failure_seeds"] == {}


def test_wider_level_gives_wider_sets():
    from netgames.dgp import MC_PARAMS, assemble_dataset, rng_streams, simulate_types
    from netgames.inference import confidence_set_beta, evaluate_grid, make_grid, make_model

    for rep in range(3):
        s = rng_streams(5, rep)
        g = mc_harness.make_graph("er", 300, 2.0, s.graph)
        d = simulate_types(300, 3, 2, None, s)
        y = assemble_dataset(g, d, MC_PARAMS.with_beta(0.3))
        grid = evaluate_grid(make_model(g, d.with_outcome(y)), make_grid(0.01))
        inner = confidence_set_beta(grid, 0.05)
        outer = confidence_set_beta(grid, 0.01)
        for lo, hi in inner:
            assert any(a <= lo and hi <= b for a, b in outer)


def test_failures_are_recorded_and_budget_enforced(monkeypatch, tmp_path):
    real = mc_harness.evaluate_grid
    calls = {"k": 0}

    def flaky(*args, **kwargs):
        calls["k"] += 1
        if calls["k"] % 3 == 0:
            raise SolverFailure("injected")
        return real(*args, **kwargs)

    monkeypatch.setattr(mc_harness, "evaluate_grid", flaky)
    with pytest.raises(FailureBudgetExceeded):
        run_coverage_experiment(SMALL, out_dir=tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    seeds = [x for v in man["failure_seeds"].values() for x in v]
    assert seeds and all(x["seed"] == 99 and "injected" in x["error"] for x in seeds)
    calls["k"] = 0
    rep = run_coverage_experiment(SMALL, strict=False)
    assert sum(c["failures"] for c in rep.cells) == len(seeds)


def test_ane_comparison_shape(tmp_path):
    res = run_ane_comparison("er", draws=1, n_big=2000, out_dir=tmp_path)
    with open(tmp_path / "ane_curves.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 19 * 6 * 3
    zero = [float(r["ane"]) for r in rows if float(r["beta"]) == 0.0]
    assert zero and all(v == 0.0 for v in zero)
    assert res.sizes["A"]["n"] <= res.sizes["B"]["n"] <= res.sizes["C"]["n"]


def test_convergence_experiment(tmp_path):
    res = run_convergence_experiment(n=120, betas=(0.0, 0.5), m_max=40, out_dir=tmp_path)
    assert np.all(res.deviation[0] == 0.0)
    assert res.deviation[1, -1] < 1e-6
    assert 0.4 <= res.rates[1] <= 0.6
    assert (tmp_path / "convergence.csv").exists()


def test_fitted_rate():
    m = np.arange(10)
    assert fitted_rate(0.3**m, m) == pytest.approx(0.3)
    assert np.isnan(fitted_rate(np.zeros(10), m))
