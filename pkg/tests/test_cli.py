import json

import pytest

from naaqa.cli import EXIT_COMPAT, EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE, build_parser, main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    assert main(["dataset", "build", "--preset", "micro", "--scenes", "20", "--out", str(out),
                 "--jobs", "1"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    run = tmp_path_factory.mktemp("runs") / "micro_parallel" / "seed1"
    assert main(["train", "--config", "micro_parallel", "--data", str(dataset), "--seed", "1",
                 "--out", str(run), "--max-epochs", "1", "--eval", "--quiet"]) == 0
    return run


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert err and err[-1].startswith("error code=")
    return err[-1]


def test_every_subcommand_documents_its_flags(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, sp in sub.choices.items():
        leaves = [sp]
        for a in sp._actions:
            if getattr(a, "choices", None) and a.dest == "action":
                leaves = list(a.choices.values())
        for leaf in leaves:
            text = leaf.format_help()
            for a in leaf._actions:
                for flag in a.option_strings:
                    assert flag in text, (name, flag)


def test_params_prints_count(capsys):
    assert main(["params", "--config", "optimized_parallel"]) == 0
    assert "2778010" in capsys.readouterr().out


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--seeds", "1", "--report", str(tmp_path / "g.json")]) == 0
    assert "checks passed" in capsys.readouterr().out
    assert all(r["passed"] for r in json.loads((tmp_path / "g.json").read_text()))


def test_gradcheck_failure_is_numeric_exit(capsys):
    assert main(["gradcheck", "--seeds", "1", "--tolerance", "1e-30"]) == EXIT_NUMERIC
    assert "kind=FloatingPointError" in error_line(capsys)


def test_usage_errors(capsys):
    assert main(["train"]) == EXIT_USAGE
    assert main(["params", "--config", "no_such_preset"]) == EXIT_USAGE
    assert "code=2" in error_line(capsys)


def test_missing_data_dir_without_env(monkeypatch, tmp_path, capsys):
    monkeypatch.delenv("AQA_DATA_DIR", raising=False)
    assert main(["train", "--config", "micro_parallel", "--out", str(tmp_path)]) == EXIT_USAGE
    monkeypatch.setenv("AQA_DATA_DIR", str(tmp_path / "nothing"))
    assert main(["train", "--config", "micro_parallel", "--out", str(tmp_path)]) == EXIT_DATA
    assert "DataError" in error_line(capsys)


def test_dataset_layout(dataset):
    summary = json.loads((dataset / "dataset.json").read_text())
    assert summary["scene_counts"] == {"train": 14, "val": 3, "test": 3}
    assert summary["question_counts"] == {"train": 56, "val": 12, "test": 12}
    assert (dataset / "run_manifest.json").exists()
    assert len(list((dataset / "features" / "train").glob("*.aqaf"))) == 14


def test_train_outputs(trained):
    for name in ("checkpoint.json", "checkpoint.bin", "history.jsonl", "history.png",
                 "eval_report.json", "eval_report.txt", "eval_report.png", "run_manifest.json"):
        assert (trained / name).exists(), name
    manifest = json.loads((trained / "run_manifest.json").read_text())
    assert manifest["seeds"] == [1] and manifest["config_hash"]


def test_eval_and_matrix(trained, tmp_path, capsys):
    report = tmp_path / "val.json"
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.json"), "--split", "val",
                 "--report", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert rep["n"] == 12
    assert report.with_suffix(".txt").exists() and report.with_suffix(".png").exists()
    out = tmp_path / "matrix"
    assert main(["report", "matrix", "--runs", str(trained.parent.parent), "--out", str(out)]) == 0
    rows = json.loads((out / "matrix.json").read_text())
    assert [r["config"] for r in rows] == ["micro_parallel"] and rows[0]["n_runs"] == 1
    for ext in ("csv", "txt", "png"):
        assert (out / f"matrix.{ext}").exists()


def test_eval_with_foreign_vocabulary_is_incompatible(trained, dataset, tmp_path, capsys):
    qfile = dataset / "questions" / "val.jsonl"
    original = qfile.read_text()
    lines = original.splitlines()
    header = json.loads(lines[0])
    header["vocabulary"] = header["vocabulary"][:2] + list(reversed(header["vocabulary"][2:]))
    qfile.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    try:
        code = main(["eval", "--checkpoint", str(trained / "checkpoint.json"), "--split", "val",
                     "--report", str(tmp_path / "r.json"), "--data", str(dataset)])
    finally:
        qfile.write_text(original)
    assert code == EXIT_COMPAT
    assert "CompatibilityError" in error_line(capsys)


def test_report_matrix_without_reports(tmp_path, capsys):
    assert main(["report", "matrix", "--runs", str(tmp_path)]) == EXIT_DATA


def test_stepwise_commands(tmp_path, capsys):
    bank = tmp_path / "bank"
    assert main(["bank", "build", "--split", "train", "--seed", "0", "--out", str(bank),
                 "--jobs", "1"]) == 0
    scenes = tmp_path / "scenes"
    assert main(["scenes", "generate", "--bank", str(bank), "--count", "3", "--seed", "0",
                 "--out", str(scenes), "--jobs", "1"]) == 0
    assert main(["questions", "generate", "--scenes", str(scenes), "--per-scene", "4",
                 "--out", str(tmp_path / "q.jsonl"), "--jobs", "1"]) == 0
    assert main(["features", "extract", "--scenes", str(scenes), "--out",
                 str(tmp_path / "feat")]) == 0
    assert len(list((tmp_path / "feat").glob("*.aqaf"))) == 3
    assert (tmp_path / "q.jsonl.manifest.json").exists()
    assert (tmp_path / "q.jsonl").read_text().count("\n") == 13
