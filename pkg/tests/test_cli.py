import json

import numpy as np
import pytest

from scenemine.cli import main
from scenemine.evaluate import gt_as_predictions
from scenemine.scenario import parse_scenario


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One full chain: synth -> features -> score -> split, reused read-only."""
    root = tmp_path_factory.mktemp("cli")
    scen = root / "scenarios"
    tables = root / "tables"
    assert main(["synth", "--kind", "random_mix", "--count", "8",
                 "--seed", "0", "--n-agents-max", "6", "--out", str(scen)]) == 0
    assert main(["features", str(scen), "--out", str(tables),
                 "--set", "anomaly_clusters=8"]) == 0
    scores = root / "scores.jsonl"
    model = root / "normalizer.json"
    assert main(["score", "--features", str(tables), "--model", str(model),
                 "--out", str(scores)]) == 0
    manifest = root / "split.tsv"
    assert main(["split", "--scores", str(scores), "--method", "scoring",
                 "--out", str(manifest)]) == 0
    return root


def write_gt_predictions(scen_dir, path):
    preds = {}
    for p in sorted(scen_dir.glob("*.json")):
        preds.update(gt_as_predictions(parse_scenario(p.read_text())))
    lines = []
    for (sid, aid), pred in sorted(preds.items()):
        lines.append(json.dumps({
            "scenario_id": sid, "agent_id": aid,
            "modes": pred.modes.tolist(),
            "confidences": pred.confidences.tolist()}))
    path.write_text("\n".join(lines) + "\n")


def test_chain_outputs_exist(workspace):
    assert (workspace / "tables" / "individual.csv").exists()
    assert (workspace / "tables" / "interaction.csv").exists()
    assert (workspace / "tables" / "anomaly_model.json").exists()
    assert (workspace / "normalizer.json").exists()
    lines = (workspace / "scores.jsonl").read_text().splitlines()
    assert len(lines) == 8
    manifest = (workspace / "split.tsv").read_text().splitlines()
    assert manifest[0].startswith("# ")
    assert len(manifest) == 9


def test_score_with_loaded_normalizer_matches_fit(workspace, tmp_path):
    again = tmp_path / "scores.jsonl"
    assert main(["score", "--features", str(workspace / "tables"),
                 "--normalizer", "load", "--model",
                 str(workspace / "normalizer.json"), "--out", str(again)]) == 0
    assert again.read_bytes() == (workspace / "scores.jsonl").read_bytes()


def test_rerun_is_byte_identical(workspace, tmp_path):
    scen = tmp_path / "scenarios"
    tables = tmp_path / "tables"
    assert main(["synth", "--kind", "random_mix", "--count", "8",
                 "--seed", "0", "--n-agents-max", "6", "--out", str(scen)]) == 0
    for name in sorted(p.name for p in scen.glob("*.json")):
        assert (scen / name).read_bytes() == \
            (workspace / "scenarios" / name).read_bytes()
    assert main(["features", str(scen), "--out", str(tables),
                 "--set", "anomaly_clusters=8"]) == 0
    for name in ("individual.csv", "interaction.csv", "agents.csv",
                 "scenarios.csv", "anomaly_model.json"):
        assert (tables / name).read_bytes() == \
            (workspace / "tables" / name).read_bytes()
    scores = tmp_path / "scores.jsonl"
    assert main(["score", "--features", str(tables), "--out", str(scores)]) == 0
    assert scores.read_bytes() == (workspace / "scores.jsonl").read_bytes()
    manifest = tmp_path / "split.tsv"
    assert main(["split", "--scores", str(scores), "--method", "scoring",
                 "--out", str(manifest)]) == 0
    assert manifest.read_bytes() == (workspace / "split.tsv").read_bytes()


def test_eval_command_full_and_partition(workspace, tmp_path, capsys):
    preds = tmp_path / "preds.jsonl"
    write_gt_predictions(workspace / "scenarios", preds)
    out = tmp_path / "report.json"
    assert main(["eval", "--pred", str(preds), "--scenarios",
                 str(workspace / "scenarios"), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "overall" in text and "minADE" in text
    report = json.loads(out.read_text())
    assert report["overall"]["min_ade"] == 0.0
    assert main(["eval", "--pred", str(preds), "--scenarios",
                 str(workspace / "scenarios"), "--split",
                 str(workspace / "split.tsv"), "--partition", "test"]) == 0


def test_report_commands(workspace, tmp_path, capsys):
    corr = tmp_path / "corr.csv"
    assert main(["report", "corr", "--features", str(workspace / "tables"),
                 "--out", str(corr)]) == 0
    assert corr.read_text().startswith("feature,")
    hist = tmp_path / "hist.csv"
    assert main(["report", "hist", "--scores", str(workspace / "scores.jsonl"),
                 "--bins", "20", "--out", str(hist)]) == 0
    summary = capsys.readouterr().out
    assert '"skewness"' in summary
    assert len(hist.read_text().splitlines()) == 1 + 20 * 5


def test_split_uniform_method(workspace, tmp_path):
    manifest = tmp_path / "uniform.tsv"
    assert main(["split", "--scores", str(workspace / "scores.jsonl"),
                 "--method", "uniform", "--seed", "3",
                 "--out", str(manifest)]) == 0
    body = [line for line in manifest.read_text().splitlines()[1:] if line]
    assert len(body) == 8


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["synth", "--kind", "nope", "--out", "x"]) == 1
    assert main(["split", "--scores", "s.jsonl", "--method", "sideways",
                 "--out", "x"]) == 1
    capsys.readouterr()


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    capsys.readouterr()


def test_data_errors_exit_2(workspace, tmp_path, capsys):
    bad_dir = tmp_path / "bad"
    bad_dir.mkdir()
    (bad_dir / "broken.json").write_text("{not json")
    assert main(["features", str(bad_dir), "--out", str(tmp_path / "t")]) == 2
    assert main(["features", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "t")]) == 2
    assert main(["score", "--features", str(workspace / "tables"),
                 "--normalizer", "load", "--out", str(tmp_path / "s")]) == 2
    assert main(["split", "--scores", str(tmp_path / "nope.jsonl"),
                 "--method", "uniform", "--out", str(tmp_path / "m")]) == 2
    assert main(["features", str(workspace / "scenarios"),
                 "--out", str(tmp_path / "t"),
                 "--set", "interaction_gate=-5"]) == 2
    err = capsys.readouterr().err
    assert "scenemine:" in err


def test_eval_missing_prediction_exits_2(workspace, tmp_path, capsys):
    preds = tmp_path / "preds.jsonl"
    write_gt_predictions(workspace / "scenarios", preds)
    lines = preds.read_text().splitlines()
    preds.write_text("\n".join(lines[:-1]) + "\n")
    assert main(["eval", "--pred", str(preds), "--scenarios",
                 str(workspace / "scenarios")]) == 2
    capsys.readouterr()
