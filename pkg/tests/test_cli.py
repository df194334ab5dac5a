import csv
import json

import numpy as np
import pytest

from excessmort import cli, glm
from excessmort.synthetic import write_dataset


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    return write_dataset(tmp_path_factory.mktemp("data"), seed=3)


@pytest.fixture
def config(dataset, tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[data]\n"
        f"deaths = {dataset['deaths']}\n"
        f"population = {dataset['population']}\n"
        f"population_old = {dataset['population_old']}\n"
        f"covid = {dataset['covid']}\n"
        "[run]\n"
        "draws = 400\n"
        "seed = 7\n"
        "out = results\n"
    )
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# excessmort 0.1.0 seed=7 draws=400 config=")
    return list(csv.DictReader(lines[1:]))


def test_fit_writes_model_and_monthly_series(config):
    assert run("fit", "--config", config) == 0
    out = config.parent / "results"
    doc = json.loads((out / "fit.json").read_text())
    assert len(doc["coefficients"]) == 25 and doc["provenance"]["seed"] == 7
    rows = read_csv(out / "fig_s3.csv")
    assert list(rows[0]) == ["month", "actual", "fitted_mean", "lo95", "hi95"]
    assert len(rows) == 14 * 12
    assert all(float(r["lo95"]) <= float(r["fitted_mean"]) <= float(r["hi95"]) for r in rows)


def test_missing_deaths_file_exits_2(config, tmp_path, capsys):
    missing = tmp_path / "nowhere" / "deaths.csv"
    assert run("fit", "--config", config, "--deaths", missing) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 2 and str(missing) in err["message"]


def test_missing_config_exits_2(tmp_path, capsys):
    assert run("fit", "--config", tmp_path / "absent.ini") == 2
    assert "absent.ini" in json.loads(capsys.readouterr().err)["message"]


def test_rank_deficient_design_exits_3(config, monkeypatch, capsys):
    build = glm.build_design

    def duplicated(*args, **kwargs):
        b = build(*args, **kwargs)
        X = np.column_stack([b.X, b.X[:, -1]])
        return glm.DesignBundle(b.spec, b.y, b.offset, X, b.columns + [b.columns[-1] + "_copy"], b.months, b.strata)

    monkeypatch.setattr(glm, "build_design", duplicated)
    assert run("fit", "--config", config) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "SingularDesign" and err["exit_code"] == 3
    assert err["column"].endswith("_copy") or err["column"] == "cos_2"


def test_excess_outputs(config):
    assert run("excess", "--config", config) == 0
    out = config.parent / "results"
    total = read_csv(out / "excess_total.csv")
    assert len(total) == 1 and total[0]["key"] == "total"
    assert len(read_csv(out / "excess_year.csv")) == 4
    assert len(read_csv(out / "excess_month.csv")) == 48
    s6 = read_csv(out / "fig_s6.csv")
    assert {r["year"] for r in s6} == {"2022", "2023"}
    assert len([r for r in s6 if r["aggregation"] == "age_band"]) == 20
    assert len(read_csv(out / "fig_s5.csv")) == 4


def test_excess_is_byte_identical_on_rerun(config, tmp_path):
    assert run("excess", "--config", config, "--out", tmp_path / "a") == 0
    assert run("excess", "--config", config, "--out", tmp_path / "b", "--workers", "3") == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_flags_override_config_and_change_provenance(config, tmp_path):
    assert run("excess", "--config", config, "--out", tmp_path, "--seed", "8", "--aggregation", "total") == 0
    first = (tmp_path / "excess_total.csv").read_text().splitlines()[0]
    assert "seed=8" in first and not (tmp_path / "excess_year.csv").exists()


def test_sweep_tables(config):
    assert run("sweep", "--config", config, "--draws", "400") == 0
    out = config.parent / "results"
    for name in ("sweep_2020_2023.csv", "sweep_2020_2022.csv"):
        rows = read_csv(out / name)
        assert len(rows) == 7
        assert list(rows[0]) == ["baseline", "qpr_mean", "qpr_lo", "qpr_hi", "smrlr"]
        assert rows[0]["baseline"] == "2016-2019" and rows[-1]["baseline"] == "2010-2019"


def test_single_baseline_sweep_matches_excess_total(config, tmp_path):
    assert run("sweep", "--config", config, "--out", tmp_path, "--window", "2020-2023") == 0
    ini = config.read_text() + "[model]\nbaseline = 2014-2019\n"
    config.write_text(ini.replace("[run]\n", "[run]\nsweep_lengths = 6-6\n"))
    assert run("sweep", "--config", config, "--out", tmp_path / "one", "--window", "2020-2023") == 0
    assert run("excess", "--config", config, "--out", tmp_path / "one", "--aggregation", "total") == 0
    (swept,) = read_csv(tmp_path / "one" / "sweep_2020_2023.csv")
    (total,) = read_csv(tmp_path / "one" / "excess_total.csv")
    assert (swept["qpr_mean"], swept["qpr_lo"], swept["qpr_hi"]) == (total["excess"], total["excess_lo"], total["excess_hi"])
    full = {r["baseline"]: r for r in read_csv(tmp_path / "sweep_2020_2023.csv")}
    assert full["2014-2019"] == swept


def test_standardize(config, tmp_path):
    assert run("standardize", "--config", config, "--out", tmp_path / "a") == 0
    rows = read_csv(tmp_path / "a" / "fig_s4.csv")
    assert [r["year"] for r in rows] == [str(y) for y in range(2010, 2024)]
    assert all(float(r["qpr_rate_lo"]) <= float(r["qpr_rate_hi"]) for r in rows)
    smr = read_csv(tmp_path / "a" / "smrlr.csv")
    assert [r["year"] for r in smr] == ["2020", "2021", "2022", "2023", "total"]
    assert run("standardize", "--config", config, "--out", tmp_path / "b") == 0
    for name in ("fig_s4.csv", "smrlr.csv", "standardized_rates.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_standardize_missing_quarter_exits_2(config, capsys):
    assert run("standardize", "--config", config, "--standard-quarter", "2031-Q1") == 2
    assert json.loads(capsys.readouterr().err)["error"] == "QuarterNotFound"


def test_rebase_diff(config, dataset, tmp_path):
    assert run("rebase-diff", "--config", config, "--out", tmp_path) == 0
    diff = read_csv(tmp_path / "rebase_diff.csv")
    assert list(diff[0]) == ["quarter", "age_band", "old", "new", "abs_diff", "rel_diff_pct"]
    totals = {r["quarter"]: float(r["rel_diff_pct"]) for r in diff if r["age_band"] == "total"}
    assert totals["2018-Q2"] == 0.0 and totals["2023-Q2"] < 0
    sens = read_csv(tmp_path / "sensitivity.csv")
    assert [r["vintage"] for r in sens] == ["previous", "current", "delta"]


def test_rebase_identical_vintages_give_zero_delta(config, dataset, tmp_path):
    assert run("rebase-diff", "--config", config, "--out", tmp_path, "--population-old", dataset["population"]) == 0
    diff = read_csv(tmp_path / "rebase_diff.csv")
    assert all(float(r["abs_diff"]) == 0 for r in diff)
    (delta,) = [r for r in read_csv(tmp_path / "sensitivity.csv") if r["vintage"] == "delta"]
    assert float(delta["excess"]) == 0 and float(delta["excess_pct"]) == 0


def test_rebase_missing_vintage_exits_2(dataset, tmp_path, capsys):
    code = run("rebase-diff", "--deaths", dataset["deaths"], "--population", dataset["population"], "--out", tmp_path)
    assert code == 2
    assert "population_old" in json.loads(capsys.readouterr().err)["message"]


def test_json_format(config, tmp_path):
    assert run("excess", "--config", config, "--out", tmp_path, "--format", "json", "--aggregation", "year") == 0
    doc = json.loads((tmp_path / "excess_year.json").read_text())
    assert doc["provenance"]["draws"] == 400
    assert [r["key"] for r in doc["rows"]] == ["2020", "2021", "2022", "2023"]


def test_invalid_values_exit_2(config, capsys):
    assert run("excess", "--config", config, "--harmonics", "7") == 2
    assert run("excess", "--config", config, "--aggregation", "week") == 2
    assert run("excess", "--config", config, "--baseline", "2018-2019") == 2


def test_figures_runs_everything(config, tmp_path):
    assert run("figures", "--config", config, "--out", tmp_path, "--draws", "200") == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"fit.json", "fig_s3.csv", "fig_s4.csv", "fig_s5.csv", "fig_s6.csv", "rebase_diff.csv", "sensitivity.csv",
            "sweep_2020_2023.csv", "sweep_2020_2022.csv", "excess_total.csv"} <= names


def test_module_entry_point(dataset, tmp_path):
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "excessmort", "fit", "--deaths", str(dataset["deaths"]),
         "--population", str(dataset["population"]), "--out", str(tmp_path), "--draws", "100"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "fit.json").exists()
