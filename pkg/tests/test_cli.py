import json
import shutil

import pytest

from tandem.cli import BENCH_HEADER, EXIT_INPUT, EXIT_NO_CONVERGENCE, EXIT_OK, main


def run(args):
    return main([str(a) for a in args])


@pytest.fixture()
def workdir(tmp_path, data_dir):
    """Copy of the bundled data next to a fresh output directory."""
    for name in (
        "case2.m", "case9.m", "case27.m", "case_radial7.m",
        "feeder_small.json", "feeder_medium.json", "feeder_stressed.json",
        "case9_feeder1.json", "case9_feeder4.json", "case9_stressed.json",
    ):
        shutil.copy(data_dir / name, tmp_path / name)
    return tmp_path


class TestSolve:
    def test_two_bus_poi_free(self, workdir, capsys):
        out = workdir / "out"
        rc = run(["solve", "--case", workdir / "case2.m", "--out", out])
        assert rc == EXIT_OK
        summary = (out / "summary.txt").read_text()
        assert "POI-free" in summary
        report = json.loads((out / "report.json").read_text())
        assert report["schema"] == 1
        assert report["final_residual"] <= 1e-6
        solution = json.loads((out / "solution.json").read_text())
        assert solution["schema"] == 1
        assert {"bus", "label", "phase", "vm", "va_deg"} <= set(solution["nodes"][0])

    def test_combined_direct_vs_gsn_summary(self, workdir):
        out_d = workdir / "direct"
        out_g = workdir / "gsn"
        assert run(["solve", "--case", workdir / "case9.m",
                    "--coupling", workdir / "case9_feeder1.json", "--out", out_d]) == EXIT_OK
        assert run(["solve", "--case", workdir / "case9.m",
                    "--coupling", workdir / "case9_feeder1.json",
                    "--solver", "gsn", "--out", out_g]) == EXIT_OK

        def poi_lines(p):
            return [
                l for l in (p / "summary.txt").read_text().splitlines()
                if l.startswith(("max voltage", "min voltage"))
            ]

        def magnitudes(lines):
            return [float(l.split()[-1]) for l in lines]

        d, g = magnitudes(poi_lines(out_d)), magnitudes(poi_lines(out_g))
        assert d == pytest.approx(g, abs=1e-3)

    def test_missing_case_input_error(self, workdir):
        rc = run(["solve", "--case", workdir / "nope.m", "--out", workdir / "o"])
        assert rc == EXIT_INPUT
        err = json.loads((workdir / "o" / "error.json").read_text())
        assert err["exit_code"] == EXIT_INPUT

    def test_non_convergence_exit_code(self, workdir):
        out = workdir / "o"
        # push the radial case beyond its nose
        case = workdir / "case_radial7.m"
        body = case.read_text().replace("35.0\t35.0", "80.0\t80.0")
        hot = workdir / "case_hot.m"
        hot.write_text(body)
        rc = run(["solve", "--case", hot, "--out", out])
        assert rc == EXIT_NO_CONVERGENCE
        assert (out / "error.json").exists()

    def test_options_file_and_flags(self, workdir):
        out = workdir / "o"
        opts = workdir / "opts.json"
        opts.write_text(json.dumps({"tol": 1e-8, "dv_max": 0.2}))
        rc = run(["solve", "--case", workdir / "case9.m", "--options", opts,
                  "--tol", "1e-9", "--out", out])
        assert rc == EXIT_OK
        rep = json.loads((out / "report.json").read_text())
        assert rep["final_residual"] <= 1e-9

    def test_unknown_option_rejected(self, workdir):
        opts = workdir / "opts.json"
        opts.write_text(json.dumps({"bogus": 1}))
        rc = run(["solve", "--case", workdir / "case9.m", "--options", opts,
                  "--out", workdir / "o"])
        assert rc == EXIT_INPUT

    def test_outputs_deterministic_with_one_worker(self, workdir):
        outs = []
        for name in ("a", "b"):
            out = workdir / name
            rc = run(["solve", "--case", workdir / "case9.m",
                      "--coupling", workdir / "case9_feeder1.json",
                      "--solver", "gsn", "--workers", "1", "--out", out])
            assert rc == EXIT_OK
            outs.append(out)
        for fname in ("solution.json", "report.json", "summary.txt", "epochs.jsonl"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_matrix_dump_debug_option(self, workdir):
        opts = workdir / "opts.json"
        dump = workdir / "mtx"
        opts.write_text(json.dumps({"debug_matrix_dir": str(dump)}))
        rc = run(["solve", "--case", workdir / "case2.m", "--options", opts,
                  "--out", workdir / "o"])
        assert rc == EXIT_OK
        dumped = sorted(dump.glob("system_*.mtx"))
        assert dumped and "MatrixMarket" in dumped[0].read_text()


class TestPvcurve:
    def test_single_point_matches_solve(self, workdir):
        out = workdir / "pv"
        rc = run(["pvcurve", "--case", workdir / "case9.m",
                  "--coupling", workdir / "case9_feeder1.json",
                  "--lf-start", "1.0", "--lf-stop", "1.0", "--lf-step", "0.5",
                  "--out", out])
        assert rc == EXIT_OK
        lines = (out / "pvcurve.csv").read_text().splitlines()
        assert lines[0] == "lf,v_poi_der1"
        lf, v = lines[1].split(",")
        assert float(lf) == 1.0

        out2 = workdir / "sv"
        run(["solve", "--case", workdir / "case9.m",
             "--coupling", workdir / "case9_feeder1.json", "--out", out2])
        summary = (out2 / "summary.txt").read_text()
        poi_v = float(
            next(l for l in summary.splitlines() if l.startswith("max voltage")).split()[-1]
        )
        assert float(v) == pytest.approx(poi_v, abs=1e-4)

    def test_requires_port(self, workdir):
        rc = run(["pvcurve", "--case", workdir / "case9.m", "--out", workdir / "pv"])
        assert rc == EXIT_INPUT

    def test_stressed_curve_monotone_and_der_lift(self, workdir):
        out = workdir / "pv"
        rc = run(["pvcurve", "--case", workdir / "case9.m",
                  "--coupling", workdir / "case9_stressed.json",
                  "--lf-start", "1.0", "--lf-stop", "3.0", "--lf-step", "0.1",
                  "--der-scale", "0,1", "--out", out])
        assert rc == EXIT_OK
        lines = (out / "pvcurve.csv").read_text().splitlines()
        assert lines[0] == "lf,v_poi_der0,v_poi_der1"
        base, der = {}, {}
        for row in lines[1:]:
            lf, b, d = row.split(",")
            if b:
                base[float(lf)] = float(b)
            if d:
                der[float(lf)] = float(d)
        bvals = [base[k] for k in sorted(base)]
        assert all(x > y for x, y in zip(bvals, bvals[1:]))  # monotone fall to the nose
        for lf in base:
            assert der[lf] > base[lf]  # DER支 lifts the curve
        assert max(der) > max(base)  # and extends the convergent range
        assert (out / "pvcurve.svg").read_text().startswith("<svg")

    def test_contingency_column_lower(self, workdir):
        # drop one of the two corridors into the POI bus: the contingency
        # curve must sit below the base curve at every shared point
        out = workdir / "pv"
        rc = run(["pvcurve", "--case", workdir / "case9.m",
                  "--coupling", workdir / "case9_stressed.json",
                  "--lf-start", "1.0", "--lf-stop", "1.4", "--lf-step", "0.2",
                  "--contingency", "branch:1", "--out", out])
        assert rc == EXIT_OK
        lines = (out / "pvcurve.csv").read_text().splitlines()
        assert lines[0] == "lf,v_poi_der1,v_poi_cont_der1"
        shared = 0
        for row in lines[1:]:
            _, b, c = row.split(",")
            if b and c:
                assert float(c) < float(b)
                shared += 1
        assert shared >= 2


class TestGenerate:
    def test_bundle_manifest(self, workdir):
        out = workdir / "bundle"
        rc = run(["generate", "--case", workdir / "case9.m",
                  "--coupling", workdir / "case9_feeder4.json", "--out", out])
        assert rc == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["schema"] == 1
        assert manifest["ports"] == 4
        assert manifest["feeders"] == ["feeder_medium.json"]
        assert set(manifest["checksums"]) == {
            "case9.m", "case9_feeder4.json", "feeder_medium.json"
        }
        assert (out / "feeder_medium.json").exists()

    def test_repeated_feeder_distinct_buses(self, workdir):
        # one feeder file reused at many buses: port count equals pair count
        out = workdir / "bundle"
        rc = run(["generate", "--case", workdir / "case9.m",
                  "--coupling", workdir / "case9_feeder4.json", "--out", out])
        assert rc == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["couplings"]) == manifest["ports"] == 4

    def test_malformed_map_rejected(self, workdir):
        bad = workdir / "bad_map.json"
        bad.write_text(json.dumps({"schema": 1, "couplings": [
            {"feeder": "feeder_small.json", "bus": 5},
            {"feeder": "feeder_small.json", "bus": 5},
        ]}))
        rc = run(["generate", "--case", workdir / "case9.m",
                  "--coupling", bad, "--out", workdir / "b"])
        assert rc == EXIT_INPUT


class TestBench:
    def test_two_points(self, workdir):
        out = workdir / "bench"
        rc = run(["bench", "--case", workdir / "case9.m",
                  "--feeder", workdir / "feeder_small.json",
                  "--counts", "1,4", "--out", out])
        assert rc == EXIT_OK
        lines = (out / "bench.csv").read_text().splitlines()
        assert lines[0] == BENCH_HEADER
        assert len(lines) == 3
        k1 = lines[1].split(",")
        assert k1[0] == "1" and int(k1[1]) > 0
        epochs = int(lines[1].split(",")[3])
        assert 1 <= epochs <= 100

    def test_too_many_feeders_rejected(self, workdir):
        rc = run(["bench", "--case", workdir / "case9.m",
                  "--feeder", workdir / "feeder_small.json",
                  "--counts", "1,99", "--out", workdir / "bench"])
        assert rc == EXIT_INPUT
