import csv

import pytest

from lmdrop.cli import main
from lmdrop.data import read_key_values


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--n", "120", "--T", "5", "--seed", "4", "--out", str(out)]) == 0
    return out


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_simulate_outputs(sim):
    for f in ("data.csv", "truth.csv", "dropout_counts.csv", "config.txt", "manifest.txt"):
        assert (sim / f).exists()
    counts = _rows(sim / "dropout_counts.csv")
    assert sum(int(r["n_dropout"]) for r in counts) == 120
    assert read_key_values(sim / "manifest.txt")["seed"] == "4"


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("LMDROP_SEED", "11")
    assert main(["simulate", "--n", "10", "--T", "3", "--out", str(tmp_path)]) == 0
    assert read_key_values(tmp_path / "manifest.txt")["seed"] == "11"


def test_fit_decode_bootstrap(sim, tmp_path):
    common = ["--data", str(sim / "data.csv"), "--config", str(sim / "config.txt")]
    fit = tmp_path / "fit"
    assert main(["fit", *common, "--starts", "2", "--long-runs", "1", "--out", str(fit)]) == 0
    summary = read_key_values(fit / "fit.txt")
    assert summary["k"] == "9" and summary["converged"] == "true"
    trace = [float(r["loglik"]) for r in _rows(fit / "trace.csv")]
    assert all(b >= a - 1e-8 for a, b in zip(trace, trace[1:]))
    probs = _rows(fit / "state_probs.csv")
    for r in probs:
        if r["state_1"] != "NA":
            assert float(r["state_1"]) + float(r["state_2"]) == pytest.approx(1)

    dec = tmp_path / "dec"
    assert main(["decode", *common, "--fit", str(fit), "--out", str(dec)]) == 0
    assert (dec / "attrition.csv").read_text().splitlines()[0] == "state,1,2,3,4,5"

    bs = tmp_path / "bs"
    assert main(["bootstrap", *common, "--fit", str(fit), "--B", "2", "--starts", "1", "--long-runs", "1",
                 "--out", str(bs)]) == 0
    assert [r["parameter"] for r in _rows(bs / "bootstrap_se.csv")][0] == "beta.x"


def test_select_writes_criteria(sim, tmp_path):
    out = tmp_path / "sel"
    rc = main(["select", "--data", str(sim / "data.csv"), "--config", str(sim / "config.txt"),
               "--states", "2", "--models", "m2", "--starts", "1", "--long-runs", "1", "--out", str(out)])
    assert rc == 0
    rows = _rows(out / "criteria.csv")
    assert list(rows[0]) == ["model", "J", "k", "loglik", "AIC", "AIC3", "AICc", "AICu", "BIC"]
    assert rows[0]["k"] == "5"


def test_exit_codes(sim, tmp_path, capsys):
    common = ["--data", str(sim / "data.csv"), "--config", str(sim / "config.txt")]
    with pytest.raises(SystemExit) as exc:
        main(["fit"])
    assert exc.value.code == 2
    assert main(["fit", "--data", str(tmp_path / "missing.csv"), "--config", str(sim / "config.txt")]) == 4
    bad = tmp_path / "bad"
    rc = main(["fit", *common, "--max-iter", "1", "--no-newton", "--starts", "1", "--long-runs", "1",
               "--out", str(bad)])
    assert rc == 3
    assert main(["bootstrap", *common, "--fit", str(bad), "--B", "2"]) == 4
    assert "non-converged" in capsys.readouterr().err
