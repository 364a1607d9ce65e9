import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from loopforge.cli import CHUNK, run
from loopforge.isomorphism import sample_gff
from loopforge.verify import derive_stream, load_fixture


def call(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.reader(io.StringIO(text)))


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        code, _, err = call(capsys, "verify", "--bogus")
        assert code == 2 and "unrecognized" in err

    def test_missing_graph(self, capsys):
        code, _, err = call(capsys, "sample", "lerw", "--graph", "no/such.json", "--from", "1")
        assert code == 2 and err

    def test_malformed_graph(self, capsys, tmp_path):
        p = tmp_path / "g.json"
        p.write_text('{"vertices": ["a"], "edges": [{"from": "a"}]}')
        code, _, err = call(capsys, "info", "--graph", str(p))
        assert code == 2 and "edges[0].to" in err

    def test_unknown_vertex(self, capsys):
        code, _, err = call(capsys, "sample", "lerw", "--graph", "grid3", "--from", "9,9")
        assert code == 2 and "unknown vertex" in err

    def test_failing_check(self, capsys):
        code, out, _ = call(capsys, "verify", "--suite", "core", "--tol", "tol=0")
        assert code == 1 and "FAIL" in out

    def test_bad_tolerance(self, capsys):
        code, _, _ = call(capsys, "verify", "--suite", "core", "--tol", "tol")
        assert code == 2


class TestSample:
    @pytest.mark.parametrize(
        "argv",
        [
            ("sample", "lerw", "--graph", "grid3", "--from", "2,2"),
            ("sample", "lerw", "--graph", "grid3", "--from", "2,2", "--out", "json"),
            ("sample", "ust", "--graph", "grid3"),
            ("sample", "ust", "--graph", "grid3", "--out", "csv"),
            ("sample", "gff", "--graph", "two_point"),
            ("sample", "gff", "--graph", "two_point", "--out", "json"),
        ],
    )
    def test_zero_samples_empty(self, capsys, argv):
        code, out, _ = call(capsys, *argv, "--n", "0")
        assert code == 0 and out == ""

    def test_lerw_csv(self, capsys):
        code, out, _ = call(capsys, "sample", "lerw", "--graph", "grid3", "--from", "2,2", "--n", "50")
        table = rows(out)
        assert table[0] == ["sample", "length", "path"]
        grid3 = load_fixture("grid3")
        for i, (s, length, path) in enumerate(table[1:]):
            verts = path.split(";")
            assert int(s) == i and int(length) == len(verts) - 1
            assert verts[0] == "2,2" and verts[-1] in grid3.boundary

    def test_lerw_integer_ids(self, capsys):
        code, out, _ = call(capsys, "sample", "lerw", "--graph", "path3", "--from", "2", "--out", "json", "--n", "5")
        assert code == 0
        paths = json.loads(out)
        assert all(p[0] == 2 and p[-1] in (0, 4) for p in paths)

    def test_ust_csv(self, capsys):
        code, out, _ = call(capsys, "sample", "ust", "--graph", "grid3", "--n", "2", "--out", "csv")
        table = rows(out)
        assert table[0] == ["sample", "child", "parent"]
        assert len(table) == 1 + 2 * 9

    def test_gff_columns(self, capsys):
        code, out, _ = call(capsys, "sample", "gff", "--graph", "grid3", "--n", "3", "--method", "lupu")
        table = rows(out)
        assert table[0] == ["sample"] + list(load_fixture("grid3").vertices)
        assert len(table) == 4 and all(len(r) == 10 for r in table)

    def test_chunks_use_their_own_streams(self, capsys):
        n = CHUNK + 5
        _, out, _ = call(capsys, "sample", "gff", "--graph", "two_point", "--n", str(n), "--seed", "11")
        got = np.array([[float(v) for v in r[1:]] for r in rows(out)[1:]])
        ch = load_fixture("two_point")
        first = sample_gff(ch, derive_stream(11, 0), CHUNK).z
        second = sample_gff(ch, derive_stream(11, 1), 5).z
        assert np.array_equal(got, np.vstack([first, second]))

    def test_workers_do_not_change_output(self, capsys, monkeypatch):
        argv = ("sample", "lerw", "--graph", "grid3", "--from", "2,2", "--n", str(2 * CHUNK + 3), "--seed", "4")
        _, one, _ = call(capsys, *argv, "--workers", "1")
        monkeypatch.setenv("LOOPFORGE_WORKERS", "3")
        _, three, _ = call(capsys, *argv, "--workers", "1")
        assert one == three

    def test_output_file(self, capsys, tmp_path):
        p = tmp_path / "out.csv"
        code, out, _ = call(capsys, "sample", "gff", "--graph", "two_point", "--n", "2", "--output", str(p))
        assert code == 0 and out == "" and p.read_text().startswith("sample,x,y")


class TestStreams:
    def test_repeatable(self):
        a = derive_stream(7, 0).random(100)
        b = derive_stream(7, 0).random(100)
        assert np.array_equal(a, b)

    def test_distinct(self):
        assert not np.array_equal(derive_stream(7, 0).random(100), derive_stream(7, 1).random(100))
        assert not np.array_equal(derive_stream(7, 0).random(100), derive_stream(8, 0).random(100))


class TestVerify:
    def test_report_shape(self, capsys):
        code, out, _ = call(capsys, "verify", "--suite", "core", "--seed", "5")
        lines = out.strip().splitlines()
        assert code == 0
        assert lines[0] == "loopforge verify suite=core seed=5"
        assert all(l.startswith(("PASS ", "FAIL ")) for l in lines[1:-1])
        assert lines[-1] == f"{len(lines) - 2} passed, 0 failed"

    def test_fomin_points(self, capsys):
        argv = ("verify", "--suite", "fomin", "--graph", "grid3", "--points", "1,0;4,2;2,4;0,2")
        code, out, _ = call(capsys, *argv)
        assert code == 0 and "points 1,0;4,2;2,4;0,2" in out

    def test_points_need_graph(self, capsys):
        code, _, err = call(capsys, "verify", "--suite", "fomin", "--points", "1,0;4,2;2,4;0,2")
        assert code == 2 and "--graph" in err

    def test_fomin_points_count(self, capsys):
        code, _, err = call(capsys, "verify", "--suite", "fomin", "--graph", "grid3", "--points", "1,0;4,2")
        assert code == 2 and err

    def test_deterministic_across_workers(self, capsys, monkeypatch):
        _, a, _ = call(capsys, "verify", "--suite", "core", "--seed", "9")
        monkeypatch.setenv("LOOPFORGE_WORKERS", "2")
        _, b, _ = call(capsys, "verify", "--suite", "core", "--seed", "9")
        assert a == b


class TestExperiment:
    def test_crossing_columns(self, capsys):
        code, out, _ = call(capsys, "experiment", "crossing-exponent", "--n", "2", "--points", "4", "--y", "1,2")
        table = rows(out)
        assert table[0] == ["n", "r", "log_det", "fit_exponent", "target", "ratio_scaled"]
        assert len(table) == 5 and all(r[5] for r in table[1:])

    def test_crossing_bad_y(self, capsys):
        code, _, _ = call(capsys, "experiment", "crossing-exponent", "--n", "2", "--y", "2,1")
        assert code == 2

    def test_odd_loop_columns(self, capsys):
        code, out, _ = call(capsys, "experiment", "odd-loop-slope", "--radii", "4,6,8")
        table = rows(out)
        assert table[0] == ["radius", "vertices", "log_radius", "odd_loop_mass", "fit_slope", "fit_intercept"]
        assert [int(r[1]) for r in table[1:]] == [45, 109, 193]

    def test_json(self, capsys):
        code, out, _ = call(capsys, "experiment", "odd-loop-slope", "--radii", "4,6", "--out", "json")
        assert code == 0 and json.loads(out)


class TestInfo:
    def test_fixture(self, capsys):
        code, out, _ = call(capsys, "info", "--graph", "grid3")
        assert code == 0
        assert "interior vertices: 9" in out and "classification: markov" in out

    def test_plain(self, capsys):
        code, out, _ = call(capsys, "info")
        assert out.startswith("loopforge ") and "grid3" in out


def test_module_entry_point():
    res = subprocess.run(
        [sys.executable, "-m", "loopforge", "info"], capture_output=True, text=True, check=False
    )
    assert res.returncode == 0 and res.stdout.startswith("loopforge")
