"""Command-line surface: exit codes, artifacts, reproducible summaries."""

import filecmp
import json

import pytest

from credmarket.cli import EXIT_CONFIG, EXIT_OK, EXIT_VIOLATIONS, dispatch
from credmarket.credibility import make_commitment, tamper_inflate_clinch
from credmarket.mechanisms import ClinchTranscript, clinching_auction
from credmarket.polymatroid import TableOracle
from credmarket.sim import ScenarioConfig

WORKED_ORACLE = {
    "kind": "table",
    "n_agents": 2,
    "table": {"": 0, "0": 2, "1": 2, "0,1": 3},
}


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "config.json"
    cfg = ScenarioConfig(rounds=3, seeds=(17,)).to_dict()
    path.write_text(json.dumps(cfg))
    return str(path)


def _transcript_pair(tmp_path):
    oracle = TableOracle(2, {(): 0.0, (0,): 2.0, (1,): 2.0, (0, 1): 3.0})
    root = make_commitment(oracle)
    transcript = ClinchTranscript(commitment_root=root)
    clinching_auction(oracle, [10.0, 5.0], transcript=transcript)
    honest = tmp_path / "honest.json"
    honest.write_text(transcript.to_json())
    tampered = tmp_path / "tampered.json"
    tampered.write_text(tamper_inflate_clinch(transcript).to_json())
    return str(honest), str(tampered)


# --------------------------------------------------------------------------
# run


def test_run_writes_artifacts(tmp_path, tiny_config_file, capsys):
    out = tmp_path / "out"
    code = dispatch(
        ["run", "--exp", "exp1", "--config", tiny_config_file, "--out", str(out)]
    )
    assert code == EXIT_OK
    assert (out / "exp1_rounds.csv").exists()
    assert (out / "exp1_summary.json").exists()
    printed = capsys.readouterr().out
    assert "digest " in printed
    summary = json.loads((out / "exp1_summary.json").read_text())
    assert summary["experiment"] == "exp1"
    assert summary["config"]["rounds"] == 3


def test_run_summaries_are_byte_identical(tmp_path, tiny_config_file):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert dispatch(
            ["run", "--exp", "exp1", "--config", tiny_config_file, "--out", str(out)]
        ) == EXIT_OK
    assert filecmp.cmp(
        out_a / "exp1_summary.json", out_b / "exp1_summary.json", shallow=False
    )
    assert filecmp.cmp(out_a / "exp1_rounds.csv", out_b / "exp1_rounds.csv", shallow=False)


def test_run_json_row_format(tmp_path, tiny_config_file):
    out = tmp_path / "out"
    code = dispatch(
        ["run", "--exp", "exp1", "--config", tiny_config_file,
         "--out", str(out), "--format", "json"]
    )
    assert code == EXIT_OK
    rows = json.loads((out / "exp1_rounds.json").read_text())["rows"]
    assert rows and rows[0]["condition"] == "vcg-ghost"


def test_run_seed_override(tmp_path, tiny_config_file):
    out = tmp_path / "out"
    code = dispatch(
        ["run", "--exp", "exp1", "--config", tiny_config_file,
         "--out", str(out), "--seed", "99"]
    )
    assert code == EXIT_OK
    summary = json.loads((out / "exp1_summary.json").read_text())
    assert summary["config"]["seeds"] == [99]


def test_run_rejects_unknown_experiment(tmp_path, capsys):
    assert dispatch(["run", "--exp", "exp9", "--out", str(tmp_path)]) == EXIT_CONFIG
    capsys.readouterr()


def test_run_rejects_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"rounds": 3, "turbo": True}))
    code = dispatch(["run", "--exp", "exp1", "--config", str(bad), "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


# --------------------------------------------------------------------------
# verify


def test_verify_honest_and_tampered(tmp_path, capsys):
    honest, tampered = _transcript_pair(tmp_path)
    assert dispatch(["verify", "--transcript", honest]) == EXIT_OK
    verdict = json.loads(capsys.readouterr().out)
    assert verdict["consistent"] is True
    assert dispatch(["verify", "--transcript", tampered]) == EXIT_VIOLATIONS
    verdict = json.loads(capsys.readouterr().out)
    assert verdict["consistent"] is False
    assert verdict["violations"]


def test_verify_requires_commitment_root(tmp_path, capsys):
    path = tmp_path / "naked.json"
    path.write_text(json.dumps({"events": []}))
    assert dispatch(["verify", "--transcript", str(path)]) == EXIT_CONFIG
    capsys.readouterr()


# --------------------------------------------------------------------------
# perturb


def test_perturb_prices_the_worked_example(tmp_path, capsys):
    path = tmp_path / "bids.json"
    path.write_text(
        json.dumps({"bids": [10.0, 5.0], "oracle": WORKED_ORACLE, "epsilon_target": 1.0})
    )
    assert dispatch(["perturb", "--bids", str(path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "pair (0, 1)" in out
    assert "delta 1" in out
    assert "gamma 1" in out
    assert "increment 1" in out


def test_perturb_rejects_incomplete_file(tmp_path, capsys):
    path = tmp_path / "bids.json"
    path.write_text(json.dumps({"bids": [1.0, 2.0]}))
    assert dispatch(["perturb", "--bids", str(path)]) == EXIT_CONFIG
    capsys.readouterr()


# --------------------------------------------------------------------------
# sweep / gamma


def test_sweep_series_unit_slope(tmp_path, capsys):
    out = tmp_path / "fit.json"
    code = dispatch(
        ["sweep", "--class", "series", "--grid", "2,3,4,5", "--seed", "0",
         "--out", str(out)]
    )
    assert code == EXIT_OK
    assert "slope 1 " in capsys.readouterr().out
    fit = json.loads(out.read_text())
    assert fit["class"] == "series"


def test_sweep_rejects_bad_grid(capsys):
    assert dispatch(["sweep", "--class", "series", "--grid", "2,x,4"]) == EXIT_CONFIG
    assert dispatch(["sweep", "--class", "series", "--grid", "2,3,4"]) == EXIT_CONFIG
    capsys.readouterr()


def test_gamma_modular_mean_zero(tmp_path, capsys):
    out = tmp_path / "gamma.json"
    code = dispatch(["gamma", "--class", "modular", "--seed", "3", "--out", str(out)])
    assert code == EXIT_OK
    capsys.readouterr()
    dist = json.loads(out.read_text())
    assert dist["mean"] == pytest.approx(0.0, abs=1e-12)
    assert "samples" not in dist


# --------------------------------------------------------------------------
# parser-level behavior


def test_help_exits_clean(capsys):
    assert dispatch(["--help"]) == EXIT_OK
    capsys.readouterr()


def test_missing_subcommand_is_config_error(capsys):
    assert dispatch([]) == EXIT_CONFIG
    capsys.readouterr()


def test_unknown_flag_is_config_error(capsys):
    assert dispatch(["run", "--exp", "exp1", "--frobnicate"]) == EXIT_CONFIG
    capsys.readouterr()
