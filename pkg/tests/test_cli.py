"""End-to-end tests for the command-line interface."""

import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from vibo_irt import baselines, engine, evaluation
from vibo_irt.checkpoint import load_checkpoint
from vibo_irt.cli import main
from vibo_irt.data import read_response_csv
from vibo_irt.engine import ViboConfig
from vibo_irt.models import prob_matrix


def _run(args, env=None):
    runner = CliRunner()
    return runner.invoke(main, args, env=env, catch_exceptions=False)


def _stdout_json(result):
    return json.loads(result.output.strip().splitlines()[-1])


def _error_json(result):
    text = getattr(result, "stderr", "") or result.output
    return json.loads(text.strip().splitlines()[-1])["error"]


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    result = _run(["--out-dir", str(d), "simulate", "--family", "2pl",
                   "--n", "40", "--m", "8", "--seed", "5", "--missing", "0.1"])
    assert result.exit_code == 0, result.output
    return Path(_stdout_json(result)["dataset"])


@pytest.fixture(scope="module")
def vibo_run(tmp_path_factory, sim_csv):
    d = tmp_path_factory.mktemp("fit_vibo")
    result = _run(["--out-dir", str(d), "fit", "--data", str(sim_csv),
                   "--algorithm", "vibo", "--epochs", "3",
                   "--holdout-fraction", "0.1"])
    assert result.exit_code == 0, result.output
    return d, _stdout_json(result)


@pytest.fixture(scope="module")
def jmle_run(tmp_path_factory, sim_csv):
    d = tmp_path_factory.mktemp("fit_jmle")
    result = _run(["--out-dir", str(d), "fit", "--data", str(sim_csv),
                   "--algorithm", "jmle", "--epochs", "3"])
    assert result.exit_code == 0, result.output
    return d, _stdout_json(result)


@pytest.fixture(scope="module")
def em_run(tmp_path_factory, sim_csv):
    d = tmp_path_factory.mktemp("fit_em")
    result = _run(["--out-dir", str(d), "fit", "--data", str(sim_csv),
                   "--algorithm", "em", "--max-iterations", "4",
                   "--n-nodes", "21"])
    assert result.exit_code == 0, result.output
    return d, _stdout_json(result)


class TestSimulate:
    def test_writes_dataset_and_sidecars(self, sim_csv):
        assert sim_csv.exists()
        stem = sim_csv.with_suffix("")
        assert Path(str(stem) + ".abilities.csv").exists()
        assert Path(str(stem) + ".items.csv").exists()
        ds = read_response_csv(sim_csv)
        assert ds.values.shape == (40, 8)
        assert abs(ds.mask.mean() - 0.9) < 0.08

    def test_deterministic_given_seed(self, tmp_path):
        args = ["simulate", "--family", "idl", "--n", "25", "--m", "6",
                "--seed", "11"]
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        _run(["--out-dir", str(a)] + args)
        _run(["--out-dir", str(b)] + args)
        _run(["--out-dir", str(c), "simulate", "--family", "idl", "--n", "25",
              "--m", "6", "--seed", "12"])
        assert (a / "sim.csv").read_bytes() == (b / "sim.csv").read_bytes()
        assert (a / "sim.csv").read_bytes() != (c / "sim.csv").read_bytes()

    def test_global_seed_used_when_flag_absent(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        _run(["--seed", "21", "--out-dir", str(a), "simulate", "--n", "10",
              "--m", "4"])
        _run(["--out-dir", str(b), "simulate", "--n", "10", "--m", "4",
              "--seed", "21"])
        assert (a / "sim.csv").read_bytes() == (b / "sim.csv").read_bytes()

    def test_rejects_unsupported_family(self, tmp_path):
        result = _run(["--out-dir", str(tmp_path), "simulate", "--family",
                       "3pl"])
        assert result.exit_code != 0


class TestFit:
    def test_vibo_artifacts(self, vibo_run):
        d, summary = vibo_run
        assert summary["algorithm"] == "vibo"
        for key in ("checkpoint", "report", "items", "posterior"):
            assert Path(summary[key]).exists()
        posterior = (d / "posterior.csv").read_text().strip().splitlines()
        assert posterior[0] == "person_id,mu_1,var_1"
        assert len(posterior) == 41

    def test_vibo_report_contract(self, vibo_run):
        d, _ = vibo_run
        report = json.loads((d / "report.json").read_text())
        assert report["algorithm"] == "vibo"
        assert report["config"]["epochs"] == 3
        assert len(report["epochs"]) == 3
        for entry in report["epochs"]:
            for key in ("vibo", "recon", "kl_ability", "kl_item", "seconds"):
                assert np.isfinite(entry[key])

    def test_checkpoint_matches_direct_fit(self, vibo_run, sim_csv):
        d, _ = vibo_run
        result, _ = load_checkpoint(d / "checkpoint.json")
        ds = read_response_csv(sim_csv)
        train, _ = evaluation.make_holdout(ds, 0.1, 0)
        direct = engine.fit(train, result.model.spec,
                            ViboConfig(epochs=3, seed=0))
        got = engine.predicted_probabilities(result, train.values, train.mask)
        want = engine.predicted_probabilities(direct, train.values, train.mask)
        assert np.array_equal(got, want)

    def test_holdout_recorded_in_checkpoint(self, vibo_run):
        d, _ = vibo_run
        payload = json.loads((d / "checkpoint.json").read_text())
        assert payload["holdout"] == {"fraction": 0.1, "seed": 0}

    def test_jmle_posterior_var_zero(self, jmle_run):
        d, summary = jmle_run
        assert summary["algorithm"] == "jmle"
        rows = (d / "posterior.csv").read_text().strip().splitlines()[1:]
        assert all(float(r.split(",")[2]) == 0.0 for r in rows)
        report = json.loads((d / "report.json").read_text())
        assert len(report["trace"]) == 3

    def test_em_report(self, em_run):
        d, _ = em_run
        report = json.loads((d / "report.json").read_text())
        assert isinstance(report["converged"], bool)
        assert report["log_marginal"] < 0
        trace = report["trace"]
        assert all(b >= a - 1e-8 for a, b in zip(trace, trace[1:]))
        items = (d / "items.csv").read_text().strip().splitlines()
        assert len(items) == 9

    def test_repeat_runs_bit_identical(self, tmp_path, sim_csv):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["fit", "--data", str(sim_csv), "--algorithm", "jmle",
                "--epochs", "2"]
        _run(["--seed", "9", "--out-dir", str(a)] + args)
        _run(["--seed", "9", "--out-dir", str(b)] + args)
        assert (a / "items.csv").read_bytes() == (b / "items.csv").read_bytes()
        assert (a / "posterior.csv").read_bytes() == (b / "posterior.csv").read_bytes()


class TestImpute:
    def test_uses_recorded_holdout(self, vibo_run, sim_csv):
        d, _ = vibo_run
        result = _run(["--out-dir", str(d), "impute", "--checkpoint",
                       str(d / "checkpoint.json"), "--data", str(sim_csv)])
        assert result.exit_code == 0, result.output
        metrics = _stdout_json(result)
        assert metrics["fraction"] == 0.1
        ds = read_response_csv(sim_csv)
        assert metrics["n_holdout"] == int(round(0.1 * ds.mask.sum()))
        assert 0.0 <= metrics["accuracy"] <= 1.0
        on_disk = json.loads((d / "impute.json").read_text())
        assert on_disk == metrics

    def test_fraction_override(self, vibo_run, sim_csv):
        d, _ = vibo_run
        result = _run(["--out-dir", str(d), "impute", "--checkpoint",
                       str(d / "checkpoint.json"), "--data", str(sim_csv),
                       "--fraction", "0.2", "--holdout-seed", "4"])
        metrics = _stdout_json(result)
        ds = read_response_csv(sim_csv)
        assert metrics["n_holdout"] == int(round(0.2 * ds.mask.sum()))
        assert metrics["holdout_seed"] == 4

    def test_no_holdout_anywhere_errors(self, jmle_run, sim_csv, tmp_path):
        d, _ = jmle_run
        result = _run(["--out-dir", str(tmp_path), "impute", "--checkpoint",
                       str(d / "checkpoint.json"), "--data", str(sim_csv)])
        assert result.exit_code == 1
        err = _error_json(result)
        assert err["code"] == "invalid_input"
        assert "holdout" in err["message"]


class TestEval:
    def test_vibo_metrics(self, vibo_run, sim_csv, tmp_path):
        d, _ = vibo_run
        result = _run(["--out-dir", str(tmp_path), "eval", "--checkpoint",
                       str(d / "checkpoint.json"), "--data", str(sim_csv),
                       "--samples", "50", "--sims", "10"])
        assert result.exit_code == 0, result.output
        report = _stdout_json(result)
        assert report["log_marginal"] < 0
        assert len(report["ppc"]["row_means"]) == 40
        assert len(report["ppc"]["col_means"]) == 8
        assert all(0.0 <= v <= 1.0 for v in report["ppc"]["row_means"])
        assert json.loads((tmp_path / "eval.json").read_text()) == report

    def test_metric_filter(self, vibo_run, sim_csv, tmp_path):
        d, _ = vibo_run
        result = _run(["--out-dir", str(tmp_path), "eval", "--checkpoint",
                       str(d / "checkpoint.json"), "--data", str(sim_csv),
                       "--metrics", "ppc", "--sims", "5"])
        report = _stdout_json(result)
        assert "ppc" in report and "log_marginal" not in report

    def test_jmle_log_marginal_is_null(self, jmle_run, sim_csv, tmp_path):
        d, _ = jmle_run
        result = _run(["--out-dir", str(tmp_path), "eval", "--checkpoint",
                       str(d / "checkpoint.json"), "--data", str(sim_csv),
                       "--metrics", "log_marginal"])
        assert _stdout_json(result)["log_marginal"] is None

    def test_em_log_marginal_matches_quadrature(self, em_run, sim_csv, tmp_path):
        d, _ = em_run
        result = _run(["--out-dir", str(tmp_path), "eval", "--checkpoint",
                       str(d / "checkpoint.json"), "--data", str(sim_csv),
                       "--metrics", "log_marginal"])
        got = _stdout_json(result)["log_marginal"]
        fitted, _ = load_checkpoint(d / "checkpoint.json")
        ds = read_response_csv(sim_csv)
        rule = baselines.gauss_hermite_rule(61, 1)
        _, want, _ = baselines.em_e_step(ds, fitted.model, rule,
                                         fitted.items_raw)
        assert got == pytest.approx(want, abs=1e-9)

    def test_unknown_metric_errors(self, vibo_run, sim_csv, tmp_path):
        d, _ = vibo_run
        result = _run(["--out-dir", str(tmp_path), "eval", "--checkpoint",
                       str(d / "checkpoint.json"), "--data", str(sim_csv),
                       "--metrics", "bogus"])
        assert result.exit_code == 1
        assert _error_json(result)["code"] == "invalid_input"


@pytest.fixture(scope="module")
def residual_run(tmp_path_factory, sim_csv):
    d = tmp_path_factory.mktemp("fit_residual")
    result = _run(["--out-dir", str(d), "fit", "--data", str(sim_csv),
                   "--algorithm", "vibo", "--family", "residual",
                   "--epochs", "2", "--hidden-size", "16"])
    assert result.exit_code == 0, result.output
    return d


@pytest.fixture(scope="module")
def mirt_run(tmp_path_factory, sim_csv):
    d = tmp_path_factory.mktemp("fit_mirt")
    result = _run(["--out-dir", str(d), "fit", "--data", str(sim_csv),
                   "--algorithm", "vibo", "--family", "mirt",
                   "--k-dim", "2", "--epochs", "1"])
    assert result.exit_code == 0, result.output
    return d


class TestIcc:
    def test_custom_item_matches_library_exactly(self, residual_run):
        d = residual_run
        result = _run(["--out-dir", str(d), "icc", "--checkpoint",
                       str(d / "checkpoint.json"), "--item-vector", "1.0,0.0",
                       "--grid-min", "-5", "--grid-max", "5",
                       "--points", "101"])
        assert result.exit_code == 0, result.output
        lines = (d / "icc.csv").read_text().strip().splitlines()
        assert lines[0] == "item,a,prob"
        assert len(lines) == 102
        fitted, _ = load_checkpoint(d / "checkpoint.json")
        grid = np.linspace(-5.0, 5.0, 101)
        want = prob_matrix(fitted.model, grid[:, None],
                           np.array([[1.0, 0.0]]))[:, 0]
        for line, a, p in zip(lines[1:], grid, want):
            label, a_txt, p_txt = line.split(",")
            assert label == "custom"
            assert float(a_txt) == a
            assert float(p_txt) == p

    def test_item_subset_uses_fitted_bank(self, residual_run):
        d = residual_run
        result = _run(["--out-dir", str(d), "icc", "--checkpoint",
                       str(d / "checkpoint.json"), "--items", "0,2",
                       "--points", "11", "--out", "subset.csv"])
        summary = _stdout_json(result)
        assert summary["rows"] == 22
        lines = (d / "subset.csv").read_text().strip().splitlines()
        assert len(lines) == 23
        labels = {line.split(",")[0] for line in lines[1:]}
        assert labels == {"0", "2"}
        fitted, _ = load_checkpoint(d / "checkpoint.json")
        bank = engine.item_point_estimates(fitted.state)
        grid = np.linspace(-5.0, 5.0, 11)
        want = prob_matrix(fitted.model, grid[:, None], bank[[0, 2]])
        got = np.array([float(l.split(",")[2]) for l in lines[1:]])
        assert np.array_equal(got, np.concatenate([want[:, 0], want[:, 1]]))

    def test_two_dimensional_grid(self, mirt_run):
        d = mirt_run
        result = _run(["--out-dir", str(d), "icc", "--checkpoint",
                       str(d / "checkpoint.json"), "--items", "0",
                       "--points", "5", "--out", "grid.csv"])
        assert result.exit_code == 0, result.output
        lines = (d / "grid.csv").read_text().strip().splitlines()
        assert lines[0] == "item,a_1,a_2,prob"
        assert len(lines) == 26

    def test_diagonal_sweep(self, mirt_run):
        d = mirt_run
        result = _run(["--out-dir", str(d), "icc", "--checkpoint",
                       str(d / "checkpoint.json"), "--items", "0",
                       "--points", "7", "--diagonal", "--out", "diag.csv"])
        assert result.exit_code == 0, result.output
        lines = (d / "diag.csv").read_text().strip().splitlines()
        assert lines[0] == "item,a,prob"
        assert len(lines) == 8

    def test_bad_item_vector_length(self, residual_run, tmp_path):
        d = residual_run
        result = _run(["--out-dir", str(tmp_path), "icc", "--checkpoint",
                       str(d / "checkpoint.json"), "--item-vector", "1.0"])
        assert result.exit_code == 1
        assert _error_json(result)["code"] == "invalid_input"

    def test_item_index_out_of_range(self, residual_run, tmp_path):
        d = residual_run
        result = _run(["--out-dir", str(tmp_path), "icc", "--checkpoint",
                       str(d / "checkpoint.json"), "--items", "99"])
        assert result.exit_code == 1
        assert "out of range" in _error_json(result)["message"]


class TestConfigPrecedence:
    def _config(self, tmp_path, sim_csv, body=None):
        cfg = {"algorithm": "jmle", "data": str(sim_csv),
               "out_dir": str(tmp_path / "out"),
               "model": {"family": "1pl"},
               "jmle": {"epochs": 2, "seed": 3}}
        cfg.update(body or {})
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        return path

    def test_config_supplies_defaults(self, tmp_path, sim_csv):
        cfg = self._config(tmp_path, sim_csv)
        result = _run(["--config", str(cfg), "fit"])
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["spec"]["family"] == "1pl"
        assert report["options"] == {"epochs": 2, "batch_size": 16,
                                     "learning_rate": 0.005, "seed": 3}

    def test_flag_beats_config(self, tmp_path, sim_csv):
        cfg = self._config(tmp_path, sim_csv)
        result = _run(["--config", str(cfg), "fit", "--epochs", "4"])
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert len(report["trace"]) == 4
        assert report["options"]["seed"] == 3

    def test_env_beats_config(self, tmp_path, sim_csv):
        cfg = self._config(tmp_path, sim_csv)
        result = _run(["--config", str(cfg), "fit"],
                      env={"VIBO_IRT_FIT_EPOCHS": "5"})
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert len(report["trace"]) == 5

    def test_unknown_key_rejected(self, tmp_path, sim_csv):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"data": str(sim_csv), "bogus": 1}))
        result = _run(["--config", str(cfg), "fit"])
        assert result.exit_code == 1
        assert _error_json(result)["code"] == "config_schema"

    def test_wrong_type_rejected(self, tmp_path, sim_csv):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"data": str(sim_csv),
                                   "jmle": {"epochs": "ten"}}))
        result = _run(["--config", str(cfg), "fit"])
        assert result.exit_code == 1
        assert _error_json(result)["code"] == "config_schema"

    def test_nested_unknown_key_rejected(self, tmp_path, sim_csv):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"data": str(sim_csv),
                                   "vibo": {"warmup": 10}}))
        result = _run(["--config", str(cfg), "fit"])
        assert result.exit_code == 1

    def test_missing_data_file(self, tmp_path):
        result = _run(["--out-dir", str(tmp_path), "fit", "--data",
                       str(tmp_path / "nope.csv")])
        assert result.exit_code == 1
        assert _error_json(result)["code"] == "missing_file"

    def test_missing_checkpoint(self, tmp_path, sim_csv):
        result = _run(["--out-dir", str(tmp_path), "eval", "--data",
                       str(sim_csv)])
        assert result.exit_code == 1
        assert _error_json(result)["code"] == "invalid_input"
