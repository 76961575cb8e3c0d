import json

import numpy as np
import pytest

from tubelab.cli import UsageError, main, parse_number, parse_profile
from tubelab.family import read_family
from tubelab.gen import gen_single
from tubelab.raster import GridSpec, save_snapshot, union_field


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def fam(tmp_path, capsys):
    path = tmp_path / "bush.txt"
    assert run(capsys, "gen", "bush:count=5", "--delta", "2**-4", "--out", path)[0] == 0
    return path


class TestParsing:
    def test_numbers(self):
        assert parse_number("2**-5") == 2**-5
        assert parse_number("1/4") == 0.25
        assert parse_number("0.125") == 0.125
        with pytest.raises(UsageError):
            parse_number("two")

    def test_profile(self):
        assert parse_profile(["squid"], 3).p == 2.5
        assert parse_profile(["custom", "5/2,10/3,10,0"], 3).r == 10
        with pytest.raises(UsageError):
            parse_profile(["mystery"], 3)


class TestGen:
    def test_records(self, tmp_path, capsys, fam):
        code, out, _ = run(capsys, "gen", "single", "--delta", "2**-4")
        assert code == 0
        assert len([r for r in out.splitlines() if r and not r.startswith("#")]) == 2
        assert len(read_family(fam)) == 5

    def test_seed_flag(self, tmp_path, capsys):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        run(capsys, "gen", "random", "--delta", "2**-3", "--seed", 3, "--out", a)
        run(capsys, "gen", "random", "--delta", "2**-3", "--seed", 3, "--out", b)
        assert a.read_bytes() == b.read_bytes()
        assert read_family(a).seed == 3

    def test_usage_errors(self, capsys):
        assert run(capsys, "gen")[0] == 1
        assert run(capsys, "gen", "nope", "--delta", "0.1")[0] == 1
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1


class TestEval:
    def test_single(self, tmp_path, capsys):
        src = tmp_path / "s.txt"
        run(capsys, "gen", "single", "--delta", "2**-5", "--out", src)
        out = tmp_path / "r.json"
        assert run(capsys, "eval", src, "--out", out)[0] == 0
        rep = json.loads(out.read_text())
        assert 0 < rep["ratio"] < 5
        assert out.with_suffix(".csv").read_text().startswith("delta,lhs,rhs,ratio")

    def test_empty_file(self, tmp_path, capsys):
        empty = tmp_path / "e.txt"
        empty.write_text("")
        assert run(capsys, "eval", empty)[0] == 1
        assert run(capsys, "eval", tmp_path / "missing.txt")[0] == 1

    def test_budget_refusal(self, capsys, fam):
        code, _, err = run(capsys, "eval", fam, "--budget-cells", 100)
        assert code == 2 and "budget" in err

    def test_config_and_flags(self, tmp_path, capsys, fam):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"epsilon": 0.1}))
        _, a, _ = run(capsys, "eval", fam, "--config", cfg)
        _, b, _ = run(capsys, "eval", fam, "--config", cfg, "--epsilon", 0)
        assert json.loads(a)["params"]["epsilon"] == 0.1
        assert json.loads(b)["params"]["epsilon"] == 0.0
        cfg.write_text("{not json")
        assert run(capsys, "eval", fam, "--config", cfg)[0] == 1


class TestSweep:
    def test_outputs(self, tmp_path, capsys):
        out = tmp_path / "s.json"
        code, _, _ = run(capsys, "sweep", "single", "--deltas", "2**-3,2**-4,2**-5", "--out", out)
        assert code == 0
        rep = json.loads(out.read_text())
        assert abs(rep["slope"]) < 0.15 and len(rep["sweep"]) == 3
        assert out.with_suffix(".dat").exists() and out.with_suffix(".csv").exists()

    def test_budget_partial(self, tmp_path, capsys):
        out = tmp_path / "s.json"
        code, _, _ = run(capsys, "sweep", "single", "--deltas", "2**-3,2**-4", "--budget-cells", 70000, "--out", out)
        assert code == 2
        assert json.loads(out.read_text())["partial"] is True


class TestStructure:
    def test_plate(self, capsys, fam):
        code, out, _ = run(capsys, "structure", fam, "plate", "--search-budget", 16)
        assert code == 0 and json.loads(out)["result"]["value"] >= 1.0

    def test_brush_and_cordoba(self, capsys, fam):
        code, out, _ = run(capsys, "structure", fam, "brush", "--sigma", "1/2")
        assert code == 0 and json.loads(out)["result"]["size"] >= 1
        code, out, _ = run(capsys, "structure", fam, "cordoba")
        res = json.loads(out)["result"]
        assert code == 0 and res["measured_l2_sq"] <= res["incidence_bound"]

    def test_bilinear_without_pair(self, tmp_path, capsys):
        src = tmp_path / "s.txt"
        run(capsys, "gen", "single", "--delta", "2**-4", "--out", src)
        assert run(capsys, "structure", src, "bilinear")[0] == 1

    def test_twoends_and_slab(self, capsys, fam):
        code, out, _ = run(capsys, "structure", fam, "twoends")
        assert code == 0 and json.loads(out)["result"]["passing"] >= 0
        code, out, _ = run(capsys, "structure", fam, "slab")
        assert code == 0 and json.loads(out)["result"]["theta"] > 0


class TestDim:
    def test_single_tube(self, tmp_path, capsys):
        src = tmp_path / "s.txt"
        run(capsys, "gen", "single", "--delta", "2**-6", "--out", src)
        code, out, _ = run(capsys, "dim", src)
        assert code == 0 and abs(json.loads(out)["dimension"] - 1.0) < 0.2

    def test_snapshot_and_scales(self, tmp_path, capsys):
        d = 2**-4
        snap = tmp_path / "f.bin"
        save_snapshot(union_field(gen_single(d), GridSpec.standard(3, d)), snap)
        assert run(capsys, "dim", snap, "--scales", "1/32,1/16,1/8")[0] == 0
        assert run(capsys, "dim", snap, "--scales", "1/16,1/8")[0] == 1
        assert run(capsys, "dim", snap, "--scales", "0.1,0.2,0.3")[0] == 1


class TestDeterminism:
    def test_byte_identical(self, tmp_path, capsys, fam):
        def twice(*argv):
            outs = []
            for tag in ("a", "b"):
                out = tmp_path / f"{tag}.json"
                assert run(capsys, *argv, "--out", out)[0] == 0
                outs.append(out.read_bytes())
            return outs[0] == outs[1]

        assert twice("eval", fam)
        assert twice("structure", fam, "plate", "--search-budget", 8, "--seed", 1)
        assert np.isfinite(json.loads((tmp_path / "a.json").read_text())["result"]["value"])
