"""File-format round trips, parse failure reporting, and CLI end-to-end runs."""

import csv
import json

import numpy as np
import pytest

from dccox import KernelSpec, SolverConfig, TimeGrid, enrich_fit, fit_curve
from dccox import io as dio
from dccox.cli import main
from dccox.errors import ParseError

from conftest import random_instance

CFG = SolverConfig(gauss_seidel=True, gamma_uses_updated=True)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestEventsIO:
    def test_numeric_round_trip(self, tmp_path):
        es, _ = random_instance(n=5, p=0, seed=3, m=40)
        path = tmp_path / "ev.csv"
        dio.emit_events(path, es)
        back, mapping = dio.read_events(path, tau=es.tau, n=es.n)
        assert mapping is None
        assert back.n == es.n
        assert back.tau == es.tau
        assert np.array_equal(back.sender, es.sender)
        assert np.array_equal(back.receiver, es.receiver)
        # %.17g prints doubles losslessly
        assert np.array_equal(back.time, es.time)

    def test_infers_n_and_tau(self, tmp_path):
        path = _write(tmp_path / "ev.csv",
                      "sender,receiver,time\n2,7,0.25\n7,3,0.5\n")
        es, mapping = dio.read_events(path)
        assert mapping is None
        assert es.n == 7
        assert es.tau == 0.5

    def test_label_mapping_round_trip(self, tmp_path):
        text = "sender,receiver,time\nbob,ada,0.25\nada,cal,0.5\ncal,bob,1\n"
        path = _write(tmp_path / "ev.csv", text)
        es, mapping = dio.read_events(path)
        assert mapping == {"ada": 1, "bob": 2, "cal": 3}
        assert list(es.sender) == [2, 1, 3]
        assert list(es.receiver) == [1, 3, 2]
        out = tmp_path / "again.csv"
        dio.emit_events(out, es, mapping=mapping)
        assert out.read_text() == text

    def test_jsonl_matches_csv(self, tmp_path):
        csv_path = _write(tmp_path / "ev.csv",
                          "sender,receiver,time\n1,2,0.3\n3,1,0.8\n")
        jl_path = _write(tmp_path / "ev.jsonl",
                         '{"s": 1, "r": 2, "t": 0.3}\n{"s": 3, "r": 1, "t": 0.8}\n')
        a, _ = dio.read_events(csv_path, tau=1.0)
        b, _ = dio.read_events(jl_path, tau=1.0)
        assert np.array_equal(a.sender, b.sender)
        assert np.array_equal(a.receiver, b.receiver)
        assert np.array_equal(a.time, b.time)


class TestEventParseErrors:
    def _expect(self, tmp_path, text, line, column, match, **kw):
        path = _write(tmp_path / "bad.csv", text)
        with pytest.raises(ParseError, match=match) as ei:
            dio.read_events(path, **kw)
        assert ei.value.line == line
        assert ei.value.column == column

    def test_bad_header(self, tmp_path):
        self._expect(tmp_path, "from,to,when\n1,2,0.5\n", 1, 1, "expected header")

    def test_field_count(self, tmp_path):
        self._expect(tmp_path, "sender,receiver,time\n1,2\n", 2, 1, "3 fields")

    def test_bad_time_token(self, tmp_path):
        self._expect(tmp_path, "sender,receiver,time\n1,2,soon\n", 2, 3, "bad time")

    def test_self_loop(self, tmp_path):
        self._expect(tmp_path, "sender,receiver,time\n1,2,0.5\n2,2,0.6\n",
                     3, 1, "self-loop")

    def test_time_outside_window(self, tmp_path):
        self._expect(tmp_path, "sender,receiver,time\n1,2,0.5\n2,1,0.9\n",
                     3, 3, "outside", tau=0.7)

    def test_zero_time(self, tmp_path):
        self._expect(tmp_path, "sender,receiver,time\n1,2,0\n", 2, 3, "outside")

    def test_empty_file(self, tmp_path):
        self._expect(tmp_path, "sender,receiver,time\n", 1, 1, "no events")

    def test_bad_json_record(self, tmp_path):
        path = _write(tmp_path / "bad.jsonl", '{"s": 1, "r": 2}\n')
        with pytest.raises(ParseError, match="bad JSON") as ei:
            dio.read_events(path)
        assert ei.value.line == 1

    def test_n_too_small(self, tmp_path):
        path = _write(tmp_path / "ev.csv", "sender,receiver,time\n1,5,0.5\n")
        with pytest.raises(ParseError, match="n >= 5"):
            dio.read_events(path, n=3)


class TestCovariateIO:
    def test_explicit_round_trip(self, tmp_path):
        _, zs = random_instance(n=4, p=2, seed=9, m=10)
        path = tmp_path / "z.csv"
        dio.emit_covariates(path, zs)
        back = dio.ingest_covariates(path, zs.n)
        assert back.n == zs.n and back.p == zs.p
        d0 = np.array([i * 4 + j for i in range(4) for j in range(4) if i != j])
        for t in (0.05, 0.4, 0.97):
            assert np.array_equal(back.values_at(d0, t), zs.values_at(d0, t))
        again = tmp_path / "z2.csv"
        dio.emit_covariates(again, back)
        assert again.read_bytes() == path.read_bytes()

    def test_default_rows_with_exception(self, tmp_path):
        path = _write(tmp_path / "z.csv",
                      "sender,receiver,from_time,z1\n"
                      "0,0,0,1.5\n0,0,0.5,2.5\n1,2,0,9\n")
        zs = dio.ingest_covariates(path, 3)
        assert zs.p == 1
        assert zs.value_at(1, 2, 0.3)[0] == 9.0
        assert zs.value_at(1, 2, 0.9)[0] == 9.0
        assert zs.value_at(2, 1, 0.3)[0] == 1.5
        assert zs.value_at(2, 1, 0.7)[0] == 2.5
        assert zs.value_at(3, 2, 0.7)[0] == 2.5

    def test_label_mapping(self, tmp_path):
        mapping = {"ada": 1, "bob": 2}
        path = _write(tmp_path / "z.csv",
                      "sender,receiver,from_time,z1\nada,bob,0,3\nbob,ada,0,4\n")
        zs = dio.ingest_covariates(path, 2, mapping=mapping)
        assert zs.value_at(1, 2, 0.5)[0] == 3.0
        assert zs.value_at(2, 1, 0.5)[0] == 4.0

    def test_unknown_label(self, tmp_path):
        path = _write(tmp_path / "z.csv",
                      "sender,receiver,from_time,z1\nada,eve,0,3\n")
        with pytest.raises(ParseError, match="unknown node label 'eve'") as ei:
            dio.ingest_covariates(path, 2, mapping={"ada": 1, "bob": 2})
        assert ei.value.line == 2

    def test_wrong_header(self, tmp_path):
        path = _write(tmp_path / "z.csv", "i,j,t0,z1\n")
        with pytest.raises(ParseError, match="expected header"):
            dio.ingest_covariates(path, 3)

    def test_column_count_mismatch(self, tmp_path):
        path = _write(tmp_path / "z.csv", "sender,receiver,from_time,z1\n0,0,0,1\n")
        with pytest.raises(ParseError, match="expected 3") as ei:
            dio.ingest_covariates(path, 3, p=3)
        assert ei.value.column == 4

    def test_misnamed_z_columns(self, tmp_path):
        path = _write(tmp_path / "z.csv", "sender,receiver,from_time,x1\n0,0,0,1\n")
        with pytest.raises(ParseError, match="named z1"):
            dio.ingest_covariates(path, 3)

    def test_default_row_shape(self, tmp_path):
        path = _write(tmp_path / "z.csv", "sender,receiver,from_time,z1\n0,1,0,1\n")
        with pytest.raises(ParseError, match="sender=0,receiver=0") as ei:
            dio.ingest_covariates(path, 3)
        assert ei.value.column == 2

    def test_overlapping_pieces(self, tmp_path):
        path = _write(tmp_path / "z.csv",
                      "sender,receiver,from_time,z1\n0,0,0,1\n0,0,0.4,2\n0,0,0.4,3\n")
        with pytest.raises(ParseError, match="overlapping") as ei:
            dio.ingest_covariates(path, 3)
        assert ei.value.line == 4
        assert ei.value.column == 3

    def test_first_piece_not_at_zero(self, tmp_path):
        path = _write(tmp_path / "z.csv",
                      "sender,receiver,from_time,z1\n0,0,0,1\n1,2,0.3,2\n")
        with pytest.raises(ParseError, match="must start at 0") as ei:
            dio.ingest_covariates(path, 3)
        assert ei.value.line == 3

    def test_missing_dyads_without_default(self, tmp_path):
        path = _write(tmp_path / "z.csv", "sender,receiver,from_time,z1\n1,2,0,2\n")
        with pytest.raises(ParseError, match="5 dyads lack"):
            dio.ingest_covariates(path, 3)

    def test_diagonal_dyad(self, tmp_path):
        path = _write(tmp_path / "z.csv", "sender,receiver,from_time,z1\n2,2,0,2\n")
        with pytest.raises(ParseError, match="diagonal"):
            dio.ingest_covariates(path, 3)

    def test_id_out_of_range(self, tmp_path):
        path = _write(tmp_path / "z.csv", "sender,receiver,from_time,z1\n1,7,0,2\n")
        with pytest.raises(ParseError, match=r"outside \[1..3\]"):
            dio.ingest_covariates(path, 3)

    def test_non_integer_id_without_map(self, tmp_path):
        path = _write(tmp_path / "z.csv", "sender,receiver,from_time,z1\nada,2,0,2\n")
        with pytest.raises(ParseError, match="integer node ids"):
            dio.ingest_covariates(path, 3)


@pytest.fixture(scope="module")
def small_fit():
    es, zs = random_instance(n=4, p=2, seed=11, m=80)
    k = KernelSpec(family="gaussian", h1=0.35, h2=0.3)
    fit = fit_curve(es, zs, k, TimeGrid(np.linspace(0.2, 0.8, 4)), cfg=CFG)
    enrich_fit(fit, es, zs, k)
    return fit


class TestEmitFit:
    def test_layout(self, tmp_path, small_fit):
        fit = small_fit
        path = tmp_path / "fit.csv"
        dio.emit_fit(path, fit)
        rows = _rows(path)
        assert rows[0] == ["t", "coordinate", "estimate", "se", "ci_low",
                           "ci_high", "bias_correction", "converged"]
        per_t = 2 * fit.n - 1 + fit.p
        assert len(rows) == 1 + len(fit.grid) * per_t
        names = [r[1] for r in rows[1:1 + per_t]]
        assert names == dio.coordinate_names(fit.n, fit.p)
        assert names[:4] == ["alpha_1", "alpha_2", "alpha_3", "alpha_4"]
        assert names[-1] == "gamma_2"

    def test_values_round_trip(self, tmp_path, small_fit):
        fit = small_fit
        path = tmp_path / "fit.csv"
        dio.emit_fit(path, fit)
        body = _rows(path)[1:]
        per_t = 2 * fit.n - 1 + fit.p
        for r in range(len(fit.grid)):
            block = body[r * per_t:(r + 1) * per_t]
            assert all(row[0] == block[0][0] for row in block)
            assert float(block[0][0]) == fit.grid.points[r]
            eta = np.array([float(row[2]) for row in block[:2 * fit.n - 1]])
            assert np.array_equal(eta, np.concatenate(
                [fit.alpha[r], fit.beta[r, :fit.n - 1]]))
            gam = np.array([float(row[2]) for row in block[2 * fit.n - 1:]])
            assert np.array_equal(gam, fit.gamma[r])
            assert float(block[0][3]) == fit.se_eta[r, 0]
            assert float(block[0][4]) == fit.eta_ci_low[r, 0]
            assert float(block[0][5]) == fit.eta_ci_high[r, 0]
            assert float(block[-1][6]) == fit.gamma_bias[r, -1]
            assert all(row[7] == "true" for row in block)

    def test_bias_column_only_for_gamma(self, tmp_path, small_fit):
        path = tmp_path / "fit.csv"
        dio.emit_fit(path, small_fit)
        for row in _rows(path)[1:]:
            if row[1].startswith("gamma"):
                assert row[6] != ""
            else:
                assert row[6] == ""

    def test_blank_se_before_enrichment(self, tmp_path):
        es, zs = random_instance(n=4, p=1, seed=2, m=50)
        k = KernelSpec(family="gaussian", h1=0.4, h2=0.4)
        fit = fit_curve(es, zs, k, TimeGrid(np.array([0.5])), cfg=CFG)
        path = tmp_path / "fit.csv"
        dio.emit_fit(path, fit)
        for row in _rows(path)[1:]:
            assert row[3] == row[4] == row[5] == row[6] == ""

    def test_summary_json(self, tmp_path, small_fit):
        path = tmp_path / "fit_summary.json"
        dio.emit_fit_summary(path, small_fit, extra={"h1": 0.35})
        text = path.read_text()
        assert text.endswith("}\n")
        assert '\n  "' in text
        body = json.loads(text)
        assert body["n"] == 4 and body["p"] == 2
        assert body["grid_points"] == 4
        assert body["converged_points"] == 4
        assert body["diverged_points"] == 0
        assert body["h1"] == 0.35
        want = max(float(d.final_residual_F) for d in small_fit.diagnostics)
        assert body["max_residual_F"] == want


class TestEmitMisc:
    def test_node_map_sorted_by_id(self, tmp_path):
        path = tmp_path / "map.csv"
        dio.emit_node_map(path, {"zoe": 2, "ada": 1, "max": 3})
        assert _rows(path) == [["label", "internal_id"],
                               ["ada", "1"], ["zoe", "2"], ["max", "3"]]

    def test_truth_csv(self, tmp_path):
        from dccox.simulator import TruthCurves, scenario_sine_linear
        sc = scenario_sine_linear(5)
        truth = TruthCurves(sc.n, sc.p, sc.tau, sc.alpha_fn, sc.beta_fn, sc.gamma_fn)
        grid = TimeGrid(np.array([0.25, 0.75]))
        path = tmp_path / "truth.csv"
        dio.emit_truth(path, truth, grid)
        rows = _rows(path)
        assert rows[0] == ["t", "coordinate", "value"]
        assert len(rows) == 1 + 2 * (2 * 5 - 1 + 2)
        names = [r[1] for r in rows[1:12]]
        assert names == dio.coordinate_names(5, 2)
        got = float(rows[2][2])
        assert got == pytest.approx(truth.alpha(0.25, 2), rel=1e-12)


@pytest.fixture(scope="module")
def simdir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    rc = main(["simulate", "--scenario", "sine-linear", "--n", "8",
               "--seed", "5", "--out", str(out)])
    assert rc == 0
    return out


FIT_FLAGS = ["--h1", "0.45", "--h2", "0.35", "--tau", "1", "--grid", "8"]


class TestCli:
    def test_simulate_outputs(self, simdir):
        for name in ("events.csv", "covariates.csv", "truth.csv", "scenario.json"):
            assert (simdir / name).exists()
        meta = json.loads((simdir / "scenario.json").read_text())
        assert meta["scenario"] == "sine-linear"
        assert meta["n"] == 8 and meta["p"] == 2 and meta["seed"] == 5
        es, mapping = dio.read_events(simdir / "events.csv", tau=1.0, n=8)
        assert mapping is None
        assert meta["events"] == len(es) > 0

    def test_fit(self, simdir, tmp_path):
        rc = main(["fit", "--events", str(simdir / "events.csv"),
                   "--covariates", str(simdir / "covariates.csv"),
                   "--out", str(tmp_path)] + FIT_FLAGS)
        assert rc == 0
        rows = _rows(tmp_path / "fit.csv")
        # --grid 8 evaluates at i/8 for i = 1..7
        assert len(rows) == 1 + 7 * (2 * 8 - 1 + 2)
        assert rows[1][3] != ""  # bands come with the fit
        body = json.loads((tmp_path / "fit_summary.json").read_text())
        assert body["h1"] == 0.45 and body["kernel"] == "gaussian"
        assert body["converged_points"] == 7
        assert not (tmp_path / "node_map.csv").exists()

    def test_fit_threads_byte_identical(self, simdir, tmp_path):
        outs = []
        for threads in ("1", "4"):
            out = tmp_path / threads
            rc = main(["fit", "--events", str(simdir / "events.csv"),
                       "--covariates", str(simdir / "covariates.csv"),
                       "--out", str(out), "--threads", threads] + FIT_FLAGS)
            assert rc == 0
            outs.append((out / "fit.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_fit_unconverged_exit_code(self, simdir, tmp_path):
        cfgfile = _write(tmp_path / "dccox.ini", "[fit]\nmax_iter = 1\n")
        args = ["fit", "--events", str(simdir / "events.csv"),
                "--covariates", str(simdir / "covariates.csv"),
                "--config", cfgfile, "--out", str(tmp_path)] + FIT_FLAGS
        assert main(args) == 3
        relaxed = _write(tmp_path / "relaxed.ini",
                         "[fit]\nmax_iter = 1\nallow_unconverged = yes\n")
        args[args.index(cfgfile)] = relaxed
        assert main(args) == 0

    def test_flag_overrides_config(self, simdir, tmp_path):
        cfgfile = _write(tmp_path / "dccox.ini", "[fit]\nh1 = 0.2\nh2 = 0.35\n")
        rc = main(["fit", "--events", str(simdir / "events.csv"),
                   "--covariates", str(simdir / "covariates.csv"),
                   "--config", cfgfile, "--h1", "0.45", "--tau", "1",
                   "--grid", "4", "--out", str(tmp_path)])
        assert rc == 0
        body = json.loads((tmp_path / "fit_summary.json").read_text())
        assert body["h1"] == 0.45
        assert body["h2"] == 0.35

    def test_unknown_config_key(self, simdir, tmp_path):
        cfgfile = _write(tmp_path / "dccox.ini", "[fit]\nbogus = 1\n")
        rc = main(["fit", "--events", str(simdir / "events.csv"),
                   "--config", cfgfile, "--out", str(tmp_path)] + FIT_FLAGS)
        assert rc == 1
        err = json.loads((tmp_path / "error.json").read_text())
        assert err["error"] == "ConfigError"
        assert "bogus" in err["message"]

    def test_parse_error_artifact(self, tmp_path):
        bad = _write(tmp_path / "ev.csv", "sender,receiver,time\n1,1,0.5\n")
        rc = main(["fit", "--events", bad, "--h1", "0.3",
                   "--out", str(tmp_path)])
        assert rc == 1
        err = json.loads((tmp_path / "error.json").read_text())
        assert err["error"] == "ParseError"
        assert err["line"] == 2 and err["column"] == 1

    def test_missing_events(self, tmp_path):
        rc = main(["fit", "--h1", "0.3", "--out", str(tmp_path)])
        assert rc == 1
        err = json.loads((tmp_path / "error.json").read_text())
        assert err["error"] == "ConfigError"

    def test_cv(self, simdir, tmp_path):
        cfgfile = _write(tmp_path / "dccox.ini",
                         "[cv]\nh1_grid = 0.3, 0.5\nh2_grid = 0.35\n"
                         "folds = 3\nseed = 1\ngrid = 6\n")
        rc = main(["cv", "--events", str(simdir / "events.csv"),
                   "--covariates", str(simdir / "covariates.csv"),
                   "--tau", "1", "--config", cfgfile, "--out", str(tmp_path)])
        assert rc == 0
        rows = _rows(tmp_path / "cv_surface.csv")
        assert rows[0][:3] == ["h1", "h2", "pe_total"]
        assert rows[0][3:] == ["pe_fold_1", "pe_fold_2", "pe_fold_3",
                               "flagged_fold_1", "flagged_fold_2", "flagged_fold_3"]
        assert len(rows) == 3
        body = json.loads((tmp_path / "cv_summary.json").read_text())
        assert body["best_h1"] in (0.3, 0.5)
        assert body["best_h2"] == 0.35
        assert body["K"] == 3 and body["pairs_evaluated"] == 2

    def test_test_subcommand(self, simdir, tmp_path):
        cfgfile = _write(tmp_path / "dccox.ini",
                         "[test]\ntest_times = 0.3, 0.6\nnboot = 30\n")
        rc = main(["test", "--kind", "temporal-eta",
                   "--events", str(simdir / "events.csv"),
                   "--covariates", str(simdir / "covariates.csv"),
                   "--tau", "1", "--h1", "0.45", "--h2", "0.35",
                   "--seed", "2", "--config", cfgfile, "--out", str(tmp_path)])
        assert rc == 0
        body = json.loads((tmp_path / "test_report.json").read_text())
        assert body["name"] == "temporal-eta"
        assert body["grid_times"] == [0.3, 0.6]
        assert body["n_boot"] == 30 and body["seed"] == 2
        assert len(body["coordinate_max"]) == 2 * 8 - 1
        assert body["reject"] == (body["statistic"] > body["critical_value"])

    def test_test_requires_kind(self, simdir, tmp_path):
        rc = main(["test", "--events", str(simdir / "events.csv"),
                   "--h1", "0.45", "--out", str(tmp_path)])
        assert rc == 1
        err = json.loads((tmp_path / "error.json").read_text())
        assert err["error"] == "ConfigError"
        assert "kind" in err["message"]

    def test_gof(self, simdir, tmp_path):
        rc = main(["gof", "--events", str(simdir / "events.csv"),
                   "--covariates", str(simdir / "covariates.csv"),
                   "--out", str(tmp_path)] + FIT_FLAGS)
        assert rc == 0
        rows = _rows(tmp_path / "gof.csv")
        assert rows[0] == ["node", "direction", "t", "observed", "fitted"]
        body = json.loads((tmp_path / "gof_summary.json").read_text())
        assert len(body["series"]) == 2 * 8
        assert {s["direction"] for s in body["series"]} == {"out", "in"}

    def test_unknown_scenario(self, tmp_path):
        rc = main(["simulate", "--scenario", "nope", "--n", "8",
                   "--out", str(tmp_path)])
        assert rc == 1
        err = json.loads((tmp_path / "error.json").read_text())
        assert err["error"] == "ConfigError"

    def test_label_events_emit_node_map(self, tmp_path):
        lines = ["sender,receiver,time"]
        t = 0.05
        for a, b in [("ada", "bob"), ("bob", "cal"), ("cal", "ada"),
                     ("bob", "ada"), ("ada", "cal"), ("cal", "bob")]:
            for k in range(3):
                lines.append(f"{a},{b},{t}")
                t += 0.05
        events = _write(tmp_path / "ev.csv", "\n".join(lines) + "\n")
        rc = main(["fit", "--events", events, "--tau", "1", "--h1", "0.6",
                   "--grid", "4", "--out", str(tmp_path)])
        assert rc == 0
        assert _rows(tmp_path / "node_map.csv") == [
            ["label", "internal_id"], ["ada", "1"], ["bob", "2"], ["cal", "3"]]
        names = {r[1] for r in _rows(tmp_path / "fit.csv")[1:]}
        assert names == set(dio.coordinate_names(3, 0))
