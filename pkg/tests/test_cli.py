import csv
import json
from pathlib import Path

import pytest

from rltrader.cli import EXIT_FATAL, EXIT_OK, EXIT_PARTIAL, main
from rltrader.ingest import HEADER


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["simulate", "--out", str(out), "--n-agents", "10", "--n-sells", "15",
                 "--seed", "2"]) == EXIT_OK
    return out


def data_args(d):
    return ["--transactions", str(d / "transactions.csv"), "--prices", str(d / "prices.csv"),
            "--benchmark", str(d / "benchmark.csv")]


class TestSimulate:
    def test_files_and_manifest(self, dataset):
        manifest = json.loads((dataset / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert sorted(manifest["files"]) == ["benchmark.csv", "prices.csv", "transactions.csv",
                                             "truth.json"]
        assert manifest["config"]["seed"] == 2 and "out" not in manifest["config"]

    def test_population_shape(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--n-agents", "46"]) == EXIT_OK
        rows = read_csv(tmp_path / "transactions.csv")
        players = {r["player"] for r in rows}
        assert len(players) == 46 and len(rows) / 46 == 30
        assert list(rows[0]) == list(HEADER)

    def test_reproducible(self, tmp_path):
        for name in ("a", "b"):
            assert main(["simulate", "--out", str(tmp_path / name), "--n-agents", "3",
                         "--seed", "5"]) == EXIT_OK
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    @pytest.mark.parametrize("bad", [["--alpha", "0"], ["--beta", "60"], ["--n-agents", "0"],
                                     ["--n-stocks", "2"], ["--horizon-days", "10"]])
    def test_invalid_spec(self, tmp_path, bad, capsys):
        assert main(["simulate", "--out", str(tmp_path)] + bad) == EXIT_FATAL
        assert "rltrader:" in capsys.readouterr().err


class TestRisk:
    def test_classification(self, dataset, tmp_path):
        assert main(["risk", "--out", str(tmp_path), "--prices", str(dataset / "prices.csv"),
                     "--benchmark", str(dataset / "benchmark.csv")]) == EXIT_OK
        doc = json.loads((tmp_path / "classification.json").read_text())
        assert doc["scheme"] == "beta" and len(doc["bins"]) == 107
        assert sorted(list(doc["bins"].values()).count(b) for b in range(3)) == [35, 36, 36]

    def test_riskiness(self, dataset, tmp_path):
        assert main(["risk", "--out", str(tmp_path), "--prices", str(dataset / "prices.csv"),
                     "--benchmark", str(dataset / "benchmark.csv"),
                     "--risk", "riskiness"]) == EXIT_OK
        assert json.loads((tmp_path / "classification.json").read_text())["scheme"] == \
            "riskiness"

    def test_missing_file(self, tmp_path):
        assert main(["risk", "--out", str(tmp_path), "--prices", str(tmp_path / "nope.csv"),
                     "--benchmark", str(tmp_path / "nope.csv")]) == EXIT_FATAL


@pytest.fixture(scope="module")
def fitted(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    code = main(["fit", "--out", str(out), "--jobs", "1", "--trace"] + data_args(dataset))
    return code, out


class TestFit:
    def test_reports(self, fitted):
        code, out = fitted
        assert code == EXIT_OK
        reports = sorted((out / "reports").glob("*.json"))
        assert len(reports) == 10
        doc = json.loads(reports[0].read_text())
        assert {"player", "n_sells", "random_nll", "myopic", "full", "lrt", "bic"} <= set(doc)
        assert doc["full"]["nll"] <= doc["myopic"]["nll"] + 1e-9
        assert doc["myopic"]["nll"] <= doc["random_nll"] + 1e-9

    def test_summary_and_figures(self, fitted):
        _, out = fitted
        summary = json.loads((out / "population.json").read_text())
        assert summary["scheme"] == "beta" and summary["failed"] == []
        assert summary["trials"] == 10 and 0 <= summary["ci_low"] <= summary["ci_high"] <= 1
        for name in ("myopic_vs_random", "full_vs_myopic", "full_vs_random"):
            assert len(read_csv(out / f"fig1_{name}.csv")) == 10
        assert len(read_csv(out / "fig3_population.csv")) == 1
        assert (out / "diagnostics.jsonl").read_text() == ""
        assert len(list((out / "traces").glob("*.jsonl"))) == 10

    def test_manifest_lists_every_file(self, fitted):
        _, out = fitted
        manifest = json.loads((out / "manifest.json").read_text())
        on_disk = {k for k in tree_bytes(out) if k != "manifest.json"}
        assert set(manifest["files"]) == on_disk
        assert manifest["config"]["lrt_confidence"] == 0.95

    def test_rerun_is_bitwise_identical(self, fitted, dataset, tmp_path):
        _, out = fitted
        assert main(["fit", "--out", str(tmp_path), "--jobs", "1", "--trace"]
                    + data_args(dataset)) == EXIT_OK
        assert tree_bytes(tmp_path) == tree_bytes(out)

    def test_appendix_mode(self, dataset, tmp_path):
        assert main(["fit", "--out", str(tmp_path), "--jobs", "1", "--appendix"]
                    + data_args(dataset)) == EXIT_OK
        doc = json.loads(next((tmp_path / "reports").glob("*.json")).read_text())
        assert doc["scheme"] == "riskiness" and doc["cap"] == 25
        assert doc["n_sells"] <= 12
        summary = json.loads((tmp_path / "population.json").read_text())
        assert summary["scheme"] == "riskiness" and summary["cap"] == 25

    def test_partial_failure(self, dataset, tmp_path):
        txs = tmp_path / "transactions.csv"
        extra = ["zz,2013-06-03,Buy,NOTLISTED,100,1.0,100.0"]
        extra += [f"zz,2013-07-{d:02d},Sell,NOTLISTED,10,1.5,15.0" for d in range(1, 7)]
        txs.write_text((dataset / "transactions.csv").read_text() + "\n".join(extra) + "\n")
        out = tmp_path / "out"
        args = ["fit", "--out", str(out), "--jobs", "1", "--transactions", str(txs),
                "--prices", str(dataset / "prices.csv"),
                "--benchmark", str(dataset / "benchmark.csv")]
        assert main(args) == EXIT_PARTIAL
        assert len(list((out / "reports").glob("*.json"))) == 10
        assert json.loads((out / "population.json").read_text())["failed"] == ["zz"]
        diags = [json.loads(x) for x in (out / "diagnostics.jsonl").read_text().splitlines()]
        assert [d["player"] for d in diags] == ["zz"]

    def test_empty_transactions(self, dataset, tmp_path):
        txs = tmp_path / "empty.csv"
        txs.write_text("")
        out = tmp_path / "out"
        assert main(["fit", "--out", str(out), "--transactions", str(txs),
                     "--prices", str(dataset / "prices.csv"),
                     "--benchmark", str(dataset / "benchmark.csv")]) == EXIT_FATAL
        assert not (out / "reports").exists()

    def test_header_only_transactions(self, dataset, tmp_path):
        txs = tmp_path / "header.csv"
        txs.write_text(",".join(HEADER) + "\n")
        assert main(["fit", "--out", str(tmp_path / "out"), "--transactions", str(txs),
                     "--prices", str(dataset / "prices.csv"),
                     "--benchmark", str(dataset / "benchmark.csv")]) == EXIT_FATAL

    def test_missing_prices(self, dataset, tmp_path):
        assert main(["fit", "--out", str(tmp_path), "--transactions",
                     str(dataset / "transactions.csv")]) == EXIT_FATAL

    @pytest.mark.parametrize("flag", [["--lrt-confidence", "1.5"], ["--ci-confidence", "0"],
                                      ["--min-sells", "0"]])
    def test_bad_options(self, dataset, tmp_path, flag):
        assert main(["fit", "--out", str(tmp_path)] + data_args(dataset) + flag) == EXIT_FATAL

    def test_eq4_literal_is_reserved(self, dataset, tmp_path):
        # every player fails, so nothing is written
        assert main(["fit", "--out", str(tmp_path), "--jobs", "1", "--reward", "eq4_literal"]
                    + data_args(dataset)) == EXIT_FATAL


class TestScramble:
    def test_smoke_and_determinism(self, dataset, tmp_path):
        args = ["scramble", "--n-scrambles", "10", "--player", "agent000",
                "--player", "agent003"] + data_args(dataset)
        assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
        assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
        rows = read_csv(tmp_path / "a" / "fig2_scramble.csv")
        assert [r["player"] for r in rows] == ["agent000", "agent003"]
        for r in rows:
            assert 0 <= float(r["prob"]) <= 1 and r["trials"] == "10"
            assert float(r["ci_low"]) <= float(r["prob"]) <= float(r["ci_high"])
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_unknown_player(self, dataset, tmp_path, capsys):
        assert main(["scramble", "--out", str(tmp_path), "--player", "ghost", "--n-scrambles",
                     "2"] + data_args(dataset)) == EXIT_FATAL
        assert "ghost" in capsys.readouterr().err

    def test_zero_scrambles(self, dataset, tmp_path):
        assert main(["scramble", "--out", str(tmp_path), "--n-scrambles", "0"]
                    + data_args(dataset)) == EXIT_FATAL


class TestConfigFile:
    def test_defaults_from_toml(self, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text('n_agents = 2\nn_sells = 6\nseed = 9\n')
        out = tmp_path / "out"
        assert main(["--config", str(cfg), "simulate", "--out", str(out),
                     "--n-sells", "7"]) == EXIT_OK
        snap = json.loads((out / "manifest.json").read_text())["config"]
        assert (snap["n_agents"], snap["n_sells"], snap["seed"]) == (2, 7, 9)

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "run.toml"
        cfg.write_text('flux = 3\n')
        assert main(["--config", str(cfg), "simulate", "--out", str(tmp_path)]) == EXIT_FATAL
        assert "flux" in capsys.readouterr().err

    def test_unreadable(self, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text("this is = = not toml")
        assert main(["--config", str(cfg), "simulate", "--out", str(tmp_path)]) == EXIT_FATAL


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "rltrader", "simulate", "--out", str(tmp_path),
                          "--n-agents", "1", "--n-sells", "5"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "truth.json").exists()
