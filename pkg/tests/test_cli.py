import json
import subprocess
import sys

import numpy as np
import pytest

from plaus.cli import run
from plaus.data import table1_path, table1_poo_path
from plaus.errors import DataError
from plaus.formula import formula_columns, parse_formula
from plaus.model import read_dataset_csv


def cli(tmp_path, *args):
    return run(list(args))


class TestParseFormula:
    def test_intercept_only(self):
        f = parse_formula("y ~ 1")
        assert f.outcome == "y" and f.terms == ("1",)

    def test_factor_expansion_five_families(self):
        ds = read_dataset_csv(table1_path())
        cols = formula_columns(ds, "y ~ fid")
        # intercept plus four indicators for the five families
        assert len(cols) == 5
        assert cols[0] == 0

    def test_fid_plus_poo(self, tmp_path):
        p = tmp_path / "toy.csv"
        rows = ["y,fid,poo"]
        for f in "abcde":
            rows += [f"1,{f},0", f"0,{f},1"]
        p.write_text("\n".join(rows) + "\n")
        ds = read_dataset_csv(p)
        cols = formula_columns(ds, "y ~ fid + poo")
        assert len(cols) == 1 + 4 + 1

    def test_dot_excludes_reserved(self, tmp_path):
        p = tmp_path / "toy.csv"
        p.write_text("y,family,poo,x1\n1,a,0,0.5\n0,b,1,0.2\n")
        ds = read_dataset_csv(p)
        cols = formula_columns(ds, "y ~ .")
        names = [ds.columns[c] for c in cols]
        assert names == ["(Intercept)", "x1"]

    def test_unknown_column_lists_available(self, tmp_path):
        p = tmp_path / "toy.csv"
        p.write_text("y,x1\n1,0.5\n0,0.2\n")
        ds = read_dataset_csv(p)
        with pytest.raises(DataError, match="available terms"):
            formula_columns(ds, "y ~ nope")

    def test_duplicate_terms_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            parse_formula("y ~ fid + fid")

    def test_missing_tilde(self):
        with pytest.raises(DataError):
            parse_formula("y + fid")


class TestFixture:
    def test_carrier_marginals(self):
        ds = read_dataset_csv(table1_path())
        assert ds.n == 46
        assert int(ds.y.sum()) == 27
        poo = open(table1_poo_path()).read().splitlines()
        assert poo[0] == "y,pat,mat"
        tot = sum(int(a) + int(b) for a, b in
                  (line.split(",")[1:] for line in poo[1:]))
        assert tot == 46


class TestCommands:
    def test_fit_outputs_schema(self, tmp_path, capsys):
        out = tmp_path / "fit.json"
        code = cli(tmp_path, "fit", "--input", table1_path(),
                   "--formula", "y ~ 1", "--output", str(out))
        assert code == 0
        blob = json.loads(out.read_text())
        assert abs(blob["coefficients"]["(Intercept)"] + 0.8785504) < 1e-5
        assert blob["converged"] is True

    def test_test_command_json(self, tmp_path):
        out = tmp_path / "res.json"
        code = cli(tmp_path, "test", "--input", table1_path(),
                   "--null", "y ~ 1", "--alt", "y ~ fid",
                   "--weight", "lr", "--backend", "importance",
                   "--M", "800", "--seed", "7", "--output", str(out))
        assert code == 0
        blob = json.loads(out.read_text())
        assert set(blob) >= {"p_value", "mc_se", "backend", "theta_star",
                             "M", "seed", "warnings"}
        assert 0.0 <= blob["p_value"] <= 1.0

    def test_exact_backend_on_fixture_subset(self, tmp_path):
        # The full fixture enumeration is large; a small family subset
        # exercises the exact path end to end.
        src = open(table1_path()).read().splitlines()
        keep = [src[0]] + [l for l in src[1:] if l.endswith("f1") or
                           l.endswith("f2")][:12]
        small = tmp_path / "small.csv"
        small.write_text("\n".join(keep) + "\n")
        out = tmp_path / "res.json"
        code = cli(tmp_path, "test", "--input", str(small),
                   "--null", "y ~ 1", "--alt", "y ~ fid",
                   "--backend", "exact", "--output", str(out))
        assert code == 0
        assert json.loads(out.read_text())["backend"] == "exact"

    def test_region_command(self, tmp_path):
        sim_csv = tmp_path / "sim.csv"
        assert cli(tmp_path, "simulate", "--scenario", "pedigree-poo",
                   "--seed", "3", "--output", str(sim_csv)) == 0
        out = tmp_path / "region.json"
        code = cli(tmp_path, "region", "--input", str(sim_csv),
                   "--null", "y ~ fid", "--alt", "y ~ fid + poo",
                   "--psi", "poo", "--alpha", "0.2", "--backend", "exact",
                   "--grid-points", "7", "--output", str(out))
        assert code == 0
        blob = json.loads(out.read_text())
        assert len(blob["psi_grid"]) == 7
        assert all(0 <= v <= 1 for v in blob["ppl_values"])

    def test_simulate_roundtrip_reproduces_test_result(self, tmp_path):
        sim_csv = tmp_path / "ped.csv"
        assert cli(tmp_path, "simulate", "--scenario", "pedigree-null",
                   "--seed", "11", "--output", str(sim_csv)) == 0
        out1 = tmp_path / "a.json"
        out2 = tmp_path / "b.json"
        for out in (out1, out2):
            assert cli(tmp_path, "test", "--input", str(sim_csv),
                       "--null", "y ~ 1", "--alt", "y ~ fid",
                       "--M", "500", "--seed", "5",
                       "--output", str(out)) == 0
        assert out1.read_bytes() == out2.read_bytes()
        # in-process result from the re-ingested CSV matches the CLI's
        from plaus.engine import IntegrationSettings, weighted_test

        ds = read_dataset_csv(sim_csv)
        res = weighted_test(ds, "y ~ 1", "y ~ fid",
                            settings=IntegrationSettings(M=500, seed=5))
        assert json.loads(out1.read_text())["p_value"] == res.p_value

    def test_bench_csv_contract(self, tmp_path):
        out = tmp_path / "bench.csv"
        code = cli(tmp_path, "bench", "--scenario", "pedigree-null",
                   "--methods", "wplaus-lr,chisq", "--R", "50",
                   "--alphas", "0.1,0.3", "--M", "300",
                   "--seed", "2", "--output", str(out))
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "method,scenario_id,alpha,rate,se,R,failures"
        assert len(lines) == 1 + 2 * 2
        assert (tmp_path / "bench.csv.json").exists()

    def test_bench_threads_byte_identical(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        for path, threads in ((a, "1"), (b, "3")):
            assert cli(tmp_path, "bench", "--scenario", "pedigree-null",
                       "--methods", "lr,chisq", "--R", "60",
                       "--alphas", "0.05,0.2", "--seed", "4",
                       "--threads", threads, "--output", str(path)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_coefprofile_shape(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((40, 3))
        y = X @ np.array([1.0, 0.0, -0.5]) + rng.standard_normal(40)
        csv_path = tmp_path / "hd.csv"
        rows = ["y,x1,x2,x3"] + [
            ",".join(repr(float(v)) for v in (y[i], *X[i]))
            for i in range(40)
        ]
        csv_path.write_text("\n".join(rows) + "\n")
        out = tmp_path / "prof.csv"
        code = cli(tmp_path, "coefprofile", "--input", str(csv_path),
                   "--family", "gaussian", "--seed", "1",
                   "--cv-replicates", "3", "--output", str(out))
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "method,lambda,x1,x2,x3"
        assert [l.split(",")[0] for l in lines[1:]] == \
            ["lasso", "enet", "enet0_1", "ridge"]
        ridge_coefs = [float(v) for v in lines[4].split(",")[2:]]
        assert all(c != 0 for c in ridge_coefs)

    def test_config_file_flags_win(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("null = y ~ 1\nalt = y ~ fid\nM = 400\nseed = 9\n")
        out = tmp_path / "r.json"
        code = cli(tmp_path, "test", "--config", str(cfg),
                   "--input", table1_path(), "--M", "500",
                   "--output", str(out))
        assert code == 0
        blob = json.loads(out.read_text())
        assert blob["M"] == 500  # flag beats config
        assert blob["seed"] == 9  # config fills the gap

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PLAUS_SEED", "123")
        out = tmp_path / "r.json"
        assert cli(tmp_path, "test", "--input", table1_path(),
                   "--null", "y ~ 1", "--alt", "y ~ fid", "--M", "300",
                   "--output", str(out)) == 0
        assert json.loads(out.read_text())["seed"] == 123


class TestExitCodes:
    def test_config_error_is_two(self, tmp_path, capsys):
        code = cli(tmp_path, "test", "--input", table1_path(),
                   "--null", "y ~ nope", "--alt", "y ~ fid")
        assert code == 2
        err = capsys.readouterr().err
        assert json.loads(err.strip().splitlines()[-1])["exit"] == 2

    def test_missing_input_is_two(self, tmp_path):
        assert cli(tmp_path, "test", "--null", "y ~ 1",
                   "--alt", "y ~ fid") == 2

    def test_numeric_error_is_three(self, tmp_path, capsys):
        # Constant outcomes make the Gaussian sphere degenerate.
        p = tmp_path / "flat.csv"
        p.write_text("y,x1\n" + "\n".join("1.0,0.3" for _ in range(10)) + "\n")
        code = cli(tmp_path, "test", "--input", str(p),
                   "--family", "gaussian", "--weight", "penalized_lr",
                   "--null", "y ~ 1", "--alt", "y ~ x1", "--M", "200")
        assert code == 3

    def test_unknown_flag_exits_two(self):
        proc = subprocess.run(
            [sys.executable, "-m", "plaus.cli", "test", "--bogus"],
            capture_output=True,
        )
        assert proc.returncode == 2
