import json
import subprocess

import numpy as np
import pytest

from tarma.cli import main
from tarma.evaluation import BENCHMARK_CASES

from conftest import make_series


def run(argv):
    return main([str(a) for a in argv])


def write_params(tmp_path, case_id=1, name="params.json"):
    path = tmp_path / name
    path.write_text(json.dumps(BENCHMARK_CASES[case_id].to_dict()))
    return path


def write_series_csv(tmp_path, values, name="series.csv"):
    path = tmp_path / name
    rows = "\n".join(f"{t},{float(v)!r}" for t, v in enumerate(values))
    path.write_text(f"t,x\n{rows}\n")
    return path


def fit_config(tmp_path, alpha=0.5, r=0.2, name="config.json", **extra):
    cfg = {"loss": {"family": "power_divergence", "alpha": alpha},
           "threshold_grid": {"kind": "fixed", "r": r},
           "delay_set": [1]}
    cfg.update(extra)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def fitted(tmp_path):
    """Series CSV plus a robust fit JSON produced through the CLI."""
    data = write_series_csv(tmp_path, make_series(1, 324, seed=8).values)
    cfg = fit_config(tmp_path, alpha=0.5)
    out = tmp_path / "fit_out"
    assert run(["fit", "--data", data, "--config", cfg, "--out-dir", out]) == 0
    return data, out / "fit.json"


class TestSimulate:
    def test_writes_series_and_manifest(self, tmp_path):
        params = write_params(tmp_path)
        out = tmp_path / "out"
        code = run(["simulate", "--params", params, "--n", 200, "--seed", 42,
                    "--out-dir", out])
        assert code == 0
        lines = (out / "series.csv").read_text().splitlines()
        assert lines[0] == "t,x"
        assert len(lines) == 201
        manifest = json.loads((out / "simulate_manifest.json").read_text())
        assert manifest["subcommand"] == "simulate"
        assert manifest["master_seed"] == 42

    def test_deterministic_across_invocations(self, tmp_path):
        params = write_params(tmp_path)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run(["simulate", "--params", params, "--n", 150,
                        "--seed", 7, "--out-dir", out]) == 0
            outs.append((out / "series.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_malformed_params_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"p": 1, "q": 1}')
        assert run(["simulate", "--params", bad, "--n", 10, "--seed", 1,
                    "--out-dir", tmp_path]) == 2

    def test_zero_n_exits_2(self, tmp_path):
        params = write_params(tmp_path)
        assert run(["simulate", "--params", params, "--n", 0, "--seed", 1,
                    "--out-dir", tmp_path]) == 2

    def test_seed_required(self, tmp_path, capsys):
        params = write_params(tmp_path)
        with pytest.raises(SystemExit) as exc:
            run(["simulate", "--params", params, "--n", 10,
                 "--out-dir", tmp_path])
        assert exc.value.code == 2


class TestSeriesJsonInterchange:
    def test_fit_accepts_timeseries_json(self, tmp_path):
        from tarma.series import TimeSeries
        series = TimeSeries(make_series(1, 200, seed=9).values)
        path = tmp_path / "series.json"
        path.write_text(series.to_json())
        cfg = fit_config(tmp_path, alpha=0.3)
        assert run(["fit", "--data", path, "--config", cfg,
                    "--out-dir", tmp_path]) == 0
        payload = json.loads((tmp_path / "fit.json").read_text())
        assert payload["convergence"]["converged"] is True


class TestContaminate:
    def test_outlier_indices_written(self, tmp_path):
        data = write_series_csv(tmp_path, np.zeros(40))
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"kind": "AO", "epsilon": 0.1, "k": 5.0}))
        out = tmp_path / "out"
        assert run(["contaminate", "--data", data, "--spec", spec,
                    "--seed", 3, "--out-dir", out]) == 0
        idx = (out / "outlier_indices.csv").read_text().splitlines()[1:]
        assert [int(v) for v in idx] == [9, 19, 29, 39]


class TestFit:
    def test_json_schema(self, fitted):
        _, fit_path = fitted
        payload = json.loads(fit_path.read_text())
        assert len(payload["params"]["phi1"]) == 2
        assert len(payload["std_errors"]) == 6
        assert payload["sigma_hat"] > 0
        assert "objective" in payload
        assert payload["convergence"]["converged"] is True

    def test_summary_printed(self, tmp_path, capsys):
        data = write_series_csv(tmp_path, make_series(1, 200, seed=9).values)
        cfg = fit_config(tmp_path, alpha=0.3)
        assert run(["fit", "--data", data, "--config", cfg,
                    "--out-dir", tmp_path]) == 0
        out = capsys.readouterr().out
        assert "sigma" in out and "phi1_0" in out

    def test_alpha_defaults_to_zero_with_warning(self, tmp_path, capsys):
        data = write_series_csv(tmp_path, make_series(1, 200, seed=9).values)
        assert run(["fit", "--data", data, "--out-dir", tmp_path]) == 0
        out = capsys.readouterr().out
        assert "defaulting to 0" in out
        payload = json.loads((tmp_path / "fit.json").read_text())
        assert payload["loss"]["alpha"] == 0.0

    def test_empty_admissible_grid_exits_2(self, tmp_path, capsys):
        data = write_series_csv(tmp_path, make_series(1, 100, seed=9).values)
        cfg = fit_config(tmp_path, alpha=0.0, r=99.0)
        assert run(["fit", "--data", data, "--config", cfg,
                    "--out-dir", tmp_path]) == 2
        assert "empty admissible grid" in capsys.readouterr().err

    def test_degenerate_residuals_exit_3(self, tmp_path):
        x = np.empty(80)
        x[::2] = 1.0
        x[1::2] = -1.0
        data = write_series_csv(tmp_path, x)
        cfg = fit_config(tmp_path, alpha=0.0, r=0.0)
        assert run(["fit", "--data", data, "--config", cfg,
                    "--out-dir", tmp_path]) == 3


class TestForecast:
    def test_with_actuals_reports_mape(self, fitted, tmp_path):
        data, fit_path = fitted
        actuals = write_series_csv(tmp_path, make_series(1, 12, seed=99).values,
                                   name="actuals.csv")
        out = tmp_path / "fc"
        assert run(["forecast", "--data", data, "--fit", fit_path,
                    "--horizon", 12, "--actuals", actuals,
                    "--out-dir", out]) == 0
        rows = (out / "forecasts.csv").read_text().splitlines()
        assert rows[0] == "step,forecast,actual"
        assert len(rows) == 13
        summary = json.loads((out / "forecast_summary.json").read_text())
        assert summary["mape"] > 0

    def test_without_actuals_mape_null(self, fitted, tmp_path):
        data, fit_path = fitted
        out = tmp_path / "fc2"
        assert run(["forecast", "--data", data, "--fit", fit_path,
                    "--horizon", 5, "--out-dir", out]) == 0
        summary = json.loads((out / "forecast_summary.json").read_text())
        assert summary["mape"] is None
        rows = (out / "forecasts.csv").read_text().splitlines()
        assert rows[0] == "step,forecast"
        assert len(rows) == 6

    def test_zero_horizon_exits_2(self, fitted, tmp_path):
        data, fit_path = fitted
        assert run(["forecast", "--data", data, "--fit", fit_path,
                    "--horizon", 0, "--out-dir", tmp_path]) == 2


class TestOutliers:
    def test_top_m_rows_sorted_by_weight(self, fitted, tmp_path):
        data, fit_path = fitted
        out = tmp_path / "ol"
        assert run(["outliers", "--data", data, "--fit", fit_path,
                    "--top-m", 15, "--out-dir", out]) == 0
        lines = (out / "outliers.csv").read_text().splitlines()
        assert lines[0] == "t,x_t,residual,weight"
        assert len(lines) == 16
        weights = [float(line.split(",")[3]) for line in lines[1:]]
        assert weights == sorted(weights)

    def test_top_m_too_large_exits_2(self, fitted, tmp_path):
        data, fit_path = fitted
        assert run(["outliers", "--data", data, "--fit", fit_path,
                    "--top-m", 100000, "--out-dir", tmp_path]) == 2

    def test_ls_fit_exits_2(self, tmp_path, capsys):
        data = write_series_csv(tmp_path, make_series(1, 200, seed=3).values)
        cfg = fit_config(tmp_path, alpha=0.0)
        assert run(["fit", "--data", data, "--config", cfg,
                    "--out-dir", tmp_path]) == 0
        assert run(["outliers", "--data", data,
                    "--fit", tmp_path / "fit.json",
                    "--top-m", 5, "--out-dir", tmp_path]) == 2
        assert "ranking" in capsys.readouterr().err


class TestMonteCarlo:
    def mc_config(self, tmp_path, alphas, reps=2):
        cfg = {"case": 1, "alpha_grid": alphas, "n": [100],
               "replications": reps,
               "contamination": {"kind": "AO", "epsilon": 0.1, "k": 10.0},
               "fix_threshold_delay": True}
        path = tmp_path / "mc.json"
        path.write_text(json.dumps(cfg))
        return path

    def test_smoke_shape(self, tmp_path):
        cfg = self.mc_config(tmp_path, [0.0, 0.3, 0.6, 0.9, 1.2, 1.5])
        out = tmp_path / "mc"
        assert run(["montecarlo", "--config", cfg, "--seed", 5,
                    "--out-dir", out]) == 0
        lines = (out / "mc_report.csv").read_text().splitlines()
        assert lines[0] == "case,kind,alpha,n,epsilon,k,metric,value"
        # 6 alphas x 1 sample size x 6 metrics
        assert len(lines) == 1 + 6 * 6
        payload = json.loads((out / "mc_report.json").read_text())
        assert {row["alpha"] for row in payload["rows"]} == {
            0.0, 0.3, 0.6, 0.9, 1.2, 1.5}

    def test_byte_identical_reruns(self, tmp_path):
        cfg = self.mc_config(tmp_path, [0.0, 0.6])
        blobs = []
        for name in ("m1", "m2"):
            out = tmp_path / name
            assert run(["montecarlo", "--config", cfg, "--seed", 5,
                        "--out-dir", out]) == 0
            blobs.append((out / "mc_report.csv").read_bytes()
                         + (out / "mc_report.json").read_bytes())
        assert blobs[0] == blobs[1]


class TestBiasCurve:
    def test_smoke(self, tmp_path):
        cfg = tmp_path / "bc.json"
        cfg.write_text(json.dumps({
            "case": 2, "kind": "AO", "epsilons": [0.1], "ks": [0.0, 10.0],
            "alphas": [0.0, 1.0], "n_large": 5000,
            "fit": {"threshold_grid": {"kind": "data_quantiles",
                                       "max_points": 30},
                    "delay_set": [1]}}))
        out = tmp_path / "bc"
        assert run(["biascurve", "--config", cfg, "--seed", 11,
                    "--out-dir", out]) == 0
        payload = json.loads((out / "bias_curves.json").read_text())
        assert len(payload["rows"]) == 4
        ks0 = [r for r in payload["rows"] if r["k"] == 0.0]
        assert all(r["B"] < 0.05 for r in ks0)


class TestSelectAlphaCommand:
    def test_selects_and_tabulates(self, tmp_path):
        series = make_series(2, 212, seed=12)
        train = write_series_csv(tmp_path, series.values[:200], "train.csv")
        test = write_series_csv(tmp_path, series.values[200:], "test.csv")
        cfg = fit_config(tmp_path, alpha=0.0, r=0.2)
        out = tmp_path / "sel"
        assert run(["select-alpha", "--train", train, "--test", test,
                    "--alphas", "0.1,0.5", "--config", cfg,
                    "--out-dir", out]) == 0
        payload = json.loads((out / "alpha_selection.json").read_text())
        assert payload["alpha_star"] in (0.1, 0.5)
        assert len(payload["table"]) == 2


class TestReportAndReplay:
    def test_report_renders_figures(self, tmp_path, fitted):
        data, fit_path = fitted
        cfg = self_cfg = tmp_path / "mc.json"
        self_cfg.write_text(json.dumps({
            "case": 1, "alpha_grid": [0.0, 0.6], "n": [100],
            "replications": 2, "fix_threshold_delay": True,
            "contamination": {"kind": "AO", "epsilon": 0.1, "k": 10.0}}))
        mc_out = tmp_path / "mc"
        assert run(["montecarlo", "--config", cfg, "--seed", 5,
                    "--out-dir", mc_out]) == 0
        figs = tmp_path / "figs"
        assert run(["report", "--kind", "mc",
                    "--input", mc_out / "mc_report.json",
                    "--out-dir", figs]) == 0
        assert list(figs.glob("mc_*.png"))
        figs2 = tmp_path / "figs2"
        assert run(["report", "--kind", "fit", "--input", fit_path,
                    "--data", data, "--out-dir", figs2]) == 0
        assert (figs2 / "fit_diagnostics.png").exists()

    def test_replay_reproduces_bytes(self, tmp_path):
        params = write_params(tmp_path)
        first = tmp_path / "first"
        assert run(["simulate", "--params", params, "--n", 120, "--seed", 21,
                    "--out-dir", first]) == 0
        second = tmp_path / "second"
        assert run(["replay", "--manifest", first / "simulate_manifest.json",
                    "--out-dir", second]) == 0
        assert ((first / "series.csv").read_bytes()
                == (second / "series.csv").read_bytes())
        assert ((first / "simulate_manifest.json").read_bytes()
                == (second / "simulate_manifest.json").read_bytes())


def test_console_entry_point_runs():
    out = subprocess.run(["tarma", "--version"], capture_output=True,
                         text=True)
    assert out.returncode == 0
    assert out.stdout.strip()
