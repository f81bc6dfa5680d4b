import csv
import json

import numpy as np
import pytest

from helpers import two_target_points, write_statcast_csv
from xctrl.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from xctrl.gmm import load
from xctrl.simulate import default_zone_model

EARLY_HEAVY = [(0, 0), (0, 1), (1, 0)] * 9 + [(3, 2)]  # 1 in 28 pitches at 3-2


@pytest.fixture(scope="module")
def pitches(tmp_path_factory):
    rng = np.random.default_rng(11)
    path = tmp_path_factory.mktemp("data") / "pitches.csv"
    bins = {
        ("100", 2023, "FF", "R"): two_target_points(300, rng),
        ("100", 2023, "FF", "L"): two_target_points(300, rng, shift=(1.0, 0.0)),
        ("200", 2023, "SL", "R"): two_target_points(300, rng, shift=(0.0, -6.0)),
        ("300", 2023, "CH", "R"): two_target_points(200, rng),
    }
    return write_statcast_csv(path, bins, rng, counts=EARLY_HEAVY)


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def fitted(pitches, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    assert run("fit", "--input", pitches, "--seed", 5, "--out", out) == EXIT_OK
    return out


def test_fit_writes_one_model_per_qualifying_bin(fitted):
    models = sorted(p.name for p in (fitted / "models").glob("*.json"))
    assert models == ["100_2023_FF_L_All.json", "100_2023_FF_R_All.json", "200_2023_SL_R_All.json"]
    m = load(fitted / "models" / "100_2023_FF_R_All.json")
    assert m.bin.pitcher_id == "100" and 1 <= m.k <= 6


def test_small_bin_skip_reason(fitted):
    rows = read_csv(fitted / "models" / "skipped.csv")
    assert [r["bin"] for r in rows] == ["300|2023|CH|R|All"]
    assert rows[0]["reason"].startswith("below 250-pitch threshold")


def test_fit_rerun_is_byte_identical(pitches, fitted, tmp_path):
    assert run("fit", "--input", pitches, "--seed", 5, "--out", tmp_path) == EXIT_OK
    assert tree(tmp_path) == tree(fitted)


def test_manifest(fitted):
    doc = json.loads((fitted / "manifest.json").read_text())
    fit = doc["commands"]["fit"]
    assert fit["inputs"][0]["path"] == "pitches.csv" and len(fit["inputs"][0]["sha256"]) == 64
    assert "models/skipped.csv" in fit["outputs"] and fit["settings"]["seed"] == 5
    assert set(doc["versions"]) >= {"xctrl", "numpy"}


def test_score_without_models_is_a_config_error(pitches, tmp_path):
    assert run("score", "--input", pitches, "--seed", 1, "--out", tmp_path) == EXIT_CONFIG


def test_score_point_estimates(pitches, fitted, tmp_path):
    assert run("score", "--input", pitches, "--seed", 1, "--out", tmp_path, "--models", fitted / "models",
               "--no-bootstrap") == EXIT_OK
    rows = read_csv(tmp_path / "scores" / "bin_rankings.csv")
    assert len(rows) == 3
    assert all(r["ci_low"] == "" and r["ci_high"] == "" for r in rows)
    vals = [float(r["xctrl_in"]) for r in rows]
    assert vals == sorted(vals)
    overall = read_csv(tmp_path / "scores" / "rankings.csv")
    assert list(overall[0]) == ["pitcher_id", "season", "pitch_type", "xctrl_in", "ci_low", "ci_high", "n"]
    assert len(overall) == 2
    assert not (tmp_path / "scores" / "bootstrap_summary.csv").exists()


def test_score_with_bootstrap(pitches, fitted, tmp_path):
    args = ("score", "--input", pitches, "--seed", 1, "--out", tmp_path, "--models", fitted / "models")
    assert run(*args, "--replicates", 100) == EXIT_OK
    summary = read_csv(tmp_path / "scores" / "bootstrap_summary.csv")
    assert len(summary) == 3 and all(r["n_replicates_ok"] == "100" for r in summary)
    ranks = read_csv(tmp_path / "scores" / "bin_rankings.csv")
    for r in ranks:
        assert float(r["ci_low"]) <= float(r["xctrl_in"]) <= float(r["ci_high"])
    by_bin = {(r["pitcher_id"], r["batter_hand"]): r for r in summary}
    sl = [r for r in ranks if r["pitcher_id"] == "200"][0]
    assert float(sl["xctrl_in"]) == pytest.approx(float(by_bin[("200", "R")]["median_xctrl"]), abs=0.005)
    assert (tmp_path / "models" / "200_2023_SL_R_All.median.json").exists()


def test_score_fit_inline_matches_fit_then_score(pitches, fitted, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("score", "--input", pitches, "--seed", 5, "--out", a, "--fit-inline", "--no-bootstrap") == 0
    assert run("score", "--input", pitches, "--seed", 5, "--out", b, "--models", fitted / "models",
               "--no-bootstrap") == 0
    assert (a / "scores" / "bin_rankings.csv").read_bytes() == (b / "scores" / "bin_rankings.csv").read_bytes()


def test_heatmap(fitted, tmp_path):
    args = ("heatmap", "--bin", "100|2023|FF|R", "--models", fitted / "models", "--seed", 0,
            "--resolution", 30, "--out")
    assert run(*args, tmp_path / "a") == EXIT_OK
    assert run(*args, tmp_path / "b") == EXIT_OK
    grid = tmp_path / "a" / "grids" / "100_2023_FF_R_All.csv"
    lines = grid.read_text().splitlines()
    assert len(lines) == 1 + 30 * 30
    assert grid.read_bytes() == (tmp_path / "b" / "grids" / "100_2023_FF_R_All.csv").read_bytes()
    side = json.loads((tmp_path / "a" / "grids" / "100_2023_FF_R_All.zone.json").read_text())
    assert side["strike_zone"]["left_in"] == -8.5


def test_heatmap_unknown_bin(fitted, tmp_path):
    assert run("heatmap", "--bin", "999|2023|FF|R", "--models", fitted / "models", "--seed", 0,
               "--out", tmp_path) == EXIT_DATA


def test_shrink_single_mesh_value(pitches, fitted, tmp_path):
    assert run("shrink", "--input", pitches, "--seed", 3, "--out", tmp_path, "--models", fitted / "models",
               "--bin", "100|2023|FF|R", "--counts", "0-0,0-1,1-0", "--mesh", "0.5",
               "--replicates", 5, "--restarts", 2) == EXIT_OK
    doc = json.loads((tmp_path / "models" / "100_2023_FF_R_0-0p0-1p1-0.shrunk.json").read_text())
    assert doc["omega"] == 0.5 and not doc["passthrough"] and doc["n_synthetic"] == 250
    assert doc["ci_low"] <= doc["median_xctrl"] <= doc["ci_high"]


def test_shrink_mesh_selection(pitches, fitted, tmp_path):
    assert run("shrink", "--input", pitches, "--seed", 3, "--out", tmp_path, "--models", fitted / "models",
               "--bin", "100|2023|FF|R", "--replicates", 3, "--restarts", 1) == EXIT_OK
    doc = json.loads(next((tmp_path / "models").glob("*.shrunk.json")).read_text())
    assert doc["omega"] in [0.1 * i for i in range(1, 10)] or round(doc["omega"], 1) == doc["omega"]
    assert len(doc["omega_scores"]) == 9


def test_shrink_passthrough(pitches, fitted, tmp_path):
    assert run("shrink", "--input", pitches, "--seed", 3, "--out", tmp_path, "--models", fitted / "models",
               "--bin", "100|2023|FF|R", "--counts", "3-2") == EXIT_OK
    doc = json.loads((tmp_path / "models" / "100_2023_FF_R_3-2.shrunk.json").read_text())
    assert doc["passthrough"] is True and doc["n_real"] < 20


def test_simulate(tmp_path):
    args = ("simulate", "--seed", 2, "--sigmas", "2,4,6", "--sigma-f", "2,4,8", "--innings", 1000, "--out")
    assert run(*args, tmp_path / "a") == EXIT_OK
    rc = read_csv(tmp_path / "a" / "sim" / "run_curve.csv")
    assert [float(r["sigma"]) for r in rc] == [2.0, 4.0, 6.0]
    loss = {float(r["sigma"]): float(r["loss_runs"]) for r in read_csv(tmp_path / "a" / "sim" / "loss_curve.csv")}
    assert loss[4.0] == 0.0
    assert run(*args, tmp_path / "b") == EXIT_OK
    assert tree(tmp_path / "a" / "sim") == tree(tmp_path / "b" / "sim")


def test_simulate_bad_zone_file(tmp_path, capsys):
    lines = default_zone_model().to_csv().splitlines()
    fields = lines[5].split(",")
    fields[2] = repr(float(fields[2]) - 0.1)
    lines[5] = ",".join(fields)
    bad = tmp_path / "zones.csv"
    bad.write_text("\n".join(lines) + "\n")
    assert run("simulate", "--seed", 1, "--zones", bad, "--out", tmp_path / "o") == EXIT_DATA
    assert "line 6" in capsys.readouterr().err


def test_seed_is_required(pitches, tmp_path, capsys):
    assert run("fit", "--input", pitches, "--out", tmp_path) == EXIT_CONFIG
    assert "--seed" in capsys.readouterr().err


def test_missing_input_file(tmp_path):
    assert run("fit", "--input", tmp_path / "nope.csv", "--seed", 1, "--out", tmp_path) == EXIT_CONFIG


def test_no_qualifying_bins_is_a_data_error(tmp_path):
    path = write_statcast_csv(tmp_path / "small.csv", {("1", 2023, "FF", "R"): two_target_points(
        100, np.random.default_rng(0))}, np.random.default_rng(0))
    assert run("fit", "--input", path, "--seed", 1, "--out", tmp_path / "o") == EXIT_DATA
    assert read_csv(tmp_path / "o" / "models" / "skipped.csv")[0]["bin"] == "1|2023|FF|R|All"


def test_config_file_overrides_flags(pitches, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nseed = 9\nmin-pitches = 500\n")
    assert run("fit", "--input", pitches, "--seed", 1, "--out", tmp_path / "o", "--config", cfg) == EXIT_DATA
    settings = json.loads((tmp_path / "o" / "manifest.json").read_text())["commands"]["fit"]["settings"]
    assert settings["seed"] == 9 and settings["min_pitches"] == 500


def test_config_unknown_key(pitches, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nbogus = 1\n")
    assert run("fit", "--input", pitches, "--seed", 1, "--out", tmp_path, "--config", cfg) == EXIT_CONFIG


def test_outputs_are_lf_utf8(fitted):
    for p in (fitted / "models").iterdir():
        assert b"\r\n" not in p.read_bytes()
        p.read_text(encoding="utf-8")
