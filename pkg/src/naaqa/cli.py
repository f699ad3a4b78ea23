"""naaqa command line.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure, 5 incompatibility.
Errors print one line to stderr: ``error code=<n> kind=<Exception> msg=<json string>``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_COMPAT = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _default_jobs() -> int:
    return os.cpu_count() or 1


def _data_root(path):
    if path:
        return Path(path)
    env = os.environ.get("AQA_DATA_DIR")
    if not env:
        raise UsageError("no data directory: pass --data or set AQA_DATA_DIR")
    return Path(env)



# -- command handlers -----------------------------------------------------------------

def cmd_bank_build(a):
    from .pipeline import RunManifest, now
    from .soundbank import build_bank, load_bank
    started = now()
    thresholds = load_bank(a.thresholds_from).thresholds if a.thresholds_from else None
    bank = build_bank(a.split, a.seed, thresholds=thresholds, jobs=a.jobs)
    bank.save(a.out)
    RunManifest(f"bank build --split {a.split}", seeds=[a.seed], outputs=["manifest.json", "wav"],
                started=started, finished=now()).write(Path(a.out))
    print(f"{len(bank.sounds)} sounds -> {a.out}")


def cmd_bank_ingest(a):
    from .pipeline import RunManifest, now, sha256_file
    from .soundbank import ingest_wav_dir, load_bank
    started = now()
    thresholds = load_bank(a.thresholds_from).thresholds if a.thresholds_from else None
    bank = ingest_wav_dir(a.wav, a.manifest, a.split, thresholds)
    bank.save(a.out)
    RunManifest("bank ingest", input_hashes={"manifest": sha256_file(a.manifest)},
                outputs=["manifest.json", "wav"], started=started, finished=now()).write(Path(a.out))
    print(f"{len(bank.sounds)} sounds -> {a.out}")


def cmd_scenes_generate(a):
    from .pipeline import RunManifest, generate_scenes, now, sha256_file
    from .soundbank import load_bank
    started = now()
    bank = load_bank(a.bank)
    specs = generate_scenes(bank, a.bank, a.count, a.seed, a.out, a.split, a.jobs)
    RunManifest("scenes generate", seeds=[a.seed],
                input_hashes={"bank": sha256_file(Path(a.bank) / "manifest.json")},
                outputs=["index.json"] + [s.audio_path for s in specs[:3]] + ["..."],
                started=started, finished=now()).write(Path(a.out))
    print(f"{len(specs)} scenes -> {a.out}")


def cmd_questions_generate(a):
    from .pipeline import RunManifest, now, sha256_file
    from .questengine.generate import (generate_dataset_questions, read_records, vocabulary,
                                       write_records)
    from .questengine.templates import builtin_templates, load_templates
    from .scenegen import load_scenes
    started = now()
    scenes = load_scenes(a.scenes)
    templates = load_templates(a.templates) if a.templates else builtin_templates()
    records = generate_dataset_questions(scenes, templates, a.per_scene, a.seed, jobs=a.jobs)
    vocab = read_records(a.vocab_from)[0]["vocabulary"] if a.vocab_from else vocabulary(records)
    split = scenes[0].split if scenes else "train"
    out = write_records(a.out, records, split, vocab)
    inputs = {"scenes": sha256_file(Path(a.scenes) / "index.json")}
    if a.templates:
        inputs["templates"] = sha256_file(a.templates)
    RunManifest("questions generate", seeds=[a.seed], input_hashes=inputs,
                outputs=[out.name], started=started, finished=now()).write(out)
    print(f"{len(records)} questions -> {out}")


def cmd_features_extract(a):
    from .features import NormStats, fit_norm
    from .pipeline import RunManifest, extract_scene_features, now, sha256_file
    started = now()
    specs = extract_scene_features(a.scenes, a.out, a.preset, a.mode)
    if a.norm_from:
        stats = NormStats.from_json(Path(a.norm_from).read_text())
    else:
        stats = fit_norm(specs, Path(a.scenes).name)
    (Path(a.out) / "norm.json").write_text(stats.to_json())
    RunManifest(f"features extract --preset {a.preset} --mode {a.mode}",
                input_hashes={"scenes": sha256_file(Path(a.scenes) / "index.json")},
                outputs=["*.aqaf", "norm.json"], started=started, finished=now()).write(Path(a.out))
    print(f"{len(specs)} spectrograms -> {a.out}")


def cmd_dataset_build(a):
    from .pipeline import build_dataset
    out = Path(a.out) if a.out else _data_root(None)
    summary = build_dataset(out, a.preset, a.seed, a.feature_preset, a.mode, a.templates,
                            a.jobs, a.scenes, log=lambda m: print(m, file=sys.stderr))
    print(json.dumps(summary["question_counts"], sort_keys=True))


def cmd_train(a):
    from .model import NAAQA, load_config
    from .pipeline import RunManifest, load_dataset, now
    from .plots import plot_eval_report, plot_history
    from .training import TRAIN_PRESETS, TrainConfig, evaluate, train
    started = now()
    tcfg = TRAIN_PRESETS[a.train_preset]
    if a.train_config:
        tcfg = TrainConfig.from_dict(json.loads(Path(a.train_config).read_text()))
    overrides = {k: v for k, v in (("max_epochs", a.max_epochs), ("batch_size", a.batch_size),
                                   ("ablation", a.ablation)) if v is not None}
    tcfg = replace(tcfg, **overrides)
    data_dir = _data_root(a.data)
    ds = load_dataset(data_dir, ablation=tcfg.ablation)
    mcfg = load_config(a.config)
    mcfg = replace(mcfg, vocab_size=len(ds.vocab), dropout_p=tcfg.dropout_p)
    model = NAAQA(mcfg, seed=a.seed)
    out = Path(a.out)
    log = (lambda r: print(json.dumps(r, sort_keys=True), file=sys.stderr)) if not a.quiet else None
    result = train(model, ds.splits["train"], ds.splits["val"], tcfg, a.seed, out, log)
    meta = {"data_dir": str(data_dir.resolve()), "dataset_digest": ds.digest(),
            "train_config": tcfg.to_dict(), "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss, "stopped": result.stopped,
            "norm": {"mean": ds.stats.mean, "std": ds.stats.std}}
    ckpt = model.save(out / "checkpoint", ds.splits["train"].labels, ds.vocab, meta)
    plot_history(result.history, out / "history.png")
    outputs = [ckpt.name, "checkpoint.bin", "history.jsonl", "history.png"]
    if a.eval:
        rep = evaluate(model, ds.splits["test"], ds.splits["test"].labels, name=mcfg.name)
        (out / "eval_report.json").write_text(rep.to_json())
        (out / "eval_report.txt").write_text(rep.to_text())
        plot_eval_report(rep, out / "eval_report.png")
        outputs += ["eval_report.json", "eval_report.txt", "eval_report.png"]
    RunManifest("train", config_hash=mcfg.content_hash(), seeds=[a.seed],
                input_hashes={"dataset": meta["dataset_digest"]}, outputs=outputs,
                started=started, finished=now()).write(out)
    print(f"best epoch {result.best_epoch} val_loss {result.best_val_loss:.4f} -> {ckpt}")


def cmd_eval(a):
    from .model import load_model
    from .pipeline import RunManifest, load_dataset, now, sha256_file
    from .plots import plot_eval_report
    from .training import evaluate
    started = now()
    manifest = json.loads(Path(a.checkpoint).with_suffix(".json").read_text())
    data_dir = Path(a.data) if a.data else Path(manifest.get("data_dir") or _data_root(None))
    ds = load_dataset(data_dir, splits=(a.split,), ablation=a.ablation)
    split = ds.splits[a.split]
    model, manifest = load_model(a.checkpoint, split.labels, ds.vocab)
    rep = evaluate(model, split, tuple(manifest["labels"]), name=manifest["config"]["name"])
    report = Path(a.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(rep.to_json())
    report.with_suffix(".txt").write_text(rep.to_text())
    plot_eval_report(rep, report.with_suffix(".png"))
    RunManifest(f"eval --split {a.split}", config_hash=manifest["config_hash"],
                input_hashes={"checkpoint": sha256_file(Path(a.checkpoint).with_suffix(".bin"))},
                outputs=[report.name, report.with_suffix(".txt").name,
                         report.with_suffix(".png").name],
                started=started, finished=now()).write(report)
    print(rep.to_text(), end="")


def collect_reports(runs_dir, pattern: str = "eval_report.json") -> dict:
    """EvalReports under ``runs_dir`` grouped by config name, in preset declaration order."""
    from .model import presets
    from .training import EvalReport
    groups = {}
    for p in sorted(Path(runs_dir).rglob(pattern)):
        try:
            d = json.loads(p.read_text())
            rep = EvalReport.from_dict(d)
        except (json.JSONDecodeError, TypeError, UnicodeDecodeError):
            continue
        groups.setdefault(rep.name or p.parent.name, []).append(rep)
    order = {n: k for k, n in enumerate(presets())}
    return dict(sorted(groups.items(), key=lambda kv: (order.get(kv[0], len(order)), kv[0])))


def cmd_report_matrix(a):
    from .pipeline import RunManifest, now
    from .plots import plot_matrix
    from .training import aggregate, matrix_csv, matrix_text
    started = now()
    groups = collect_reports(a.runs, a.pattern)
    if not groups:
        raise FileNotFoundError(f"no evaluation reports under {a.runs}")
    rows = aggregate(groups)
    out = Path(a.out or a.runs)
    out.mkdir(parents=True, exist_ok=True)
    (out / "matrix.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")
    (out / "matrix.csv").write_text(matrix_csv(rows))
    (out / "matrix.txt").write_text(matrix_text(rows))
    plot_matrix(rows, out / "matrix.png")
    RunManifest("report matrix", outputs=["matrix.json", "matrix.csv", "matrix.txt", "matrix.png"],
                started=started, finished=now()).write(out)
    print(matrix_text(rows), end="")


def cmd_gradcheck(a):
    from .autodiff.gradcheck import gradient_suite
    reports = gradient_suite(tuple(range(a.seeds)), a.tolerance)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        if a.verbose or not r.passed:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.name} max_rel_err={r.worst:.3e}")
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed "
          f"(worst {max(r.worst for r in reports):.3e}, tolerance {a.tolerance:g})")
    if a.report:
        Path(a.report).write_text(json.dumps(
            [{"name": r.name, "max_rel_error": r.worst, "passed": r.passed} for r in reports],
            indent=1) + "\n")
    if failed:
        raise FloatingPointError(f"{len(failed)} gradient checks failed")


def cmd_params(a):
    from .model import count_parameters, load_config, parameter_breakdown
    cfg = load_config(a.config)
    if a.vocab_size:
        cfg = replace(cfg, vocab_size=a.vocab_size)
    total = count_parameters(cfg)
    print(f"{cfg.name}: {total} trainable parameters ({total / 1e6:.2f} M)")
    for k, v in parameter_breakdown(cfg).items():
        print(f"  {k:<16}{v:>12}")


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .features import PRESETS
    from .pipeline import DATASET_PRESETS
    from .training import ABLATIONS, TRAIN_PRESETS

    p = argparse.ArgumentParser(prog="naaqa", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"naaqa {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def jobs(sp, default):
        sp.add_argument("--jobs", type=int, default=default, help="worker processes")

    bank = sub.add_parser("bank", help="elementary-sound banks").add_subparsers(dest="action", required=True)
    b = bank.add_parser("build", help="synthesize a 135-sound bank")
    b.add_argument("--split", choices=("train", "test"), required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.add_argument("--thresholds-from", help="bank directory whose thresholds to reuse")
    jobs(b, _default_jobs())
    b.set_defaults(func=cmd_bank_build)
    b = bank.add_parser("ingest", help="annotate a directory of recordings")
    b.add_argument("--wav", required=True, help="directory of .wav files")
    b.add_argument("--manifest", required=True, help="JSON or CSV: file, instrument, note, octave")
    b.add_argument("--out", required=True)
    b.add_argument("--split", choices=("train", "test"), default="train")
    b.add_argument("--thresholds-from", help="bank directory whose thresholds to reuse")
    b.set_defaults(func=cmd_bank_ingest)

    sc = sub.add_parser("scenes", help="scene composition").add_subparsers(dest="action", required=True)
    s = sc.add_parser("generate", help="compose and render scenes from a bank")
    s.add_argument("--bank", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--split", help="split tag for scene ids (default: the bank's split)")
    jobs(s, _default_jobs())
    s.set_defaults(func=cmd_scenes_generate)

    qu = sub.add_parser("questions", help="question generation").add_subparsers(dest="action", required=True)
    q = qu.add_parser("generate", help="instantiate templates over scenes")
    q.add_argument("--scenes", required=True)
    q.add_argument("--templates", help="template JSON (default: built-in set)")
    q.add_argument("--per-scene", type=int, default=4)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--vocab-from", help="question file whose vocabulary to reuse")
    jobs(q, _default_jobs())
    q.set_defaults(func=cmd_questions_generate)

    fe = sub.add_parser("features", help="spectrograms").add_subparsers(dest="action", required=True)
    f = fe.add_parser("extract", help="Mel spectrograms for a scene directory")
    f.add_argument("--scenes", required=True)
    f.add_argument("--preset", choices=sorted(PRESETS), default="clear2-long-stride")
    f.add_argument("--mode", choices=("pad", "resize"), default="pad")
    f.add_argument("--out", required=True)
    f.add_argument("--norm-from", help="norm.json to copy instead of fitting on these scenes")
    f.set_defaults(func=cmd_features_extract)

    ds = sub.add_parser("dataset", help="one-shot dataset").add_subparsers(dest="action", required=True)
    d = ds.add_parser("build", help="banks, scenes, features and questions")
    d.add_argument("--preset", choices=sorted(DATASET_PRESETS), default="micro")
    d.add_argument("--out", help="output directory (default: $AQA_DATA_DIR)")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--scenes", type=int, help="override the preset's scene count")
    d.add_argument("--feature-preset", choices=sorted(PRESETS), default="clear2-long-stride")
    d.add_argument("--mode", choices=("pad", "resize"), default="pad")
    d.add_argument("--templates", help="template JSON (default: built-in set)")
    jobs(d, _default_jobs())
    d.set_defaults(func=cmd_dataset_build)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True, help="config JSON or shipped preset name")
    t.add_argument("--data", help="dataset directory (default: $AQA_DATA_DIR)")
    t.add_argument("--seed", type=int, default=876944)
    t.add_argument("--out", required=True)
    t.add_argument("--train-preset", choices=sorted(TRAIN_PRESETS), default="desk")
    t.add_argument("--train-config", help="TrainConfig JSON (overrides --train-preset)")
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--ablation", choices=ABLATIONS)
    t.add_argument("--eval", action="store_true", help="also evaluate on the test split")
    t.add_argument("--quiet", action="store_true", help="no per-epoch log lines")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True, help="checkpoint .json (its .bin sits alongside)")
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--report", required=True, help="report JSON path (.txt and .png alongside)")
    e.add_argument("--data", help="dataset directory (default: the one recorded at training)")
    e.add_argument("--ablation", choices=ABLATIONS, default="none")
    e.set_defaults(func=cmd_eval)

    rp = sub.add_parser("report", help="aggregate reports").add_subparsers(dest="action", required=True)
    r = rp.add_parser("matrix", help="mean ± std over seeds per config")
    r.add_argument("--runs", required=True)
    r.add_argument("--out", help="output directory (default: --runs)")
    r.add_argument("--pattern", default="eval_report.json", help="report file glob")
    r.set_defaults(func=cmd_report_matrix)

    g = sub.add_parser("gradcheck", help="finite-difference checks of every autodiff op")
    g.add_argument("--seeds", type=int, default=5)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--report", help="write per-check results as JSON")
    g.add_argument("--verbose", action="store_true")
    g.set_defaults(func=cmd_gradcheck)

    pa = sub.add_parser("params", help="parameter count of a config")
    pa.add_argument("--config", required=True)
    pa.add_argument("--vocab-size", type=int)
    pa.set_defaults(func=cmd_params)
    return p


def _exit_code(exc: BaseException) -> int:
    from .autodiff.checkpoint import CheckpointError
    from .features import FeatureError
    from .model import CompatibilityError, ConfigError
    from .pipeline import DataError
    from .questengine.generate import QuestionExhaustion
    from .questengine.templates import TemplateError
    from .scenegen import SceneError
    from .soundbank import BankError
    from .training import NumericError
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, (CompatibilityError, CheckpointError)):
        return EXIT_COMPAT
    if isinstance(exc, (NumericError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, BankError, SceneError, FeatureError, TemplateError,
                        QuestionExhaustion, FileNotFoundError, KeyError, json.JSONDecodeError,
                        OSError, ValueError)):
        return EXIT_DATA
    return EXIT_DATA


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        np.seterr(over="ignore", under="ignore")
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped onto the documented exit codes
        code = _exit_code(exc)
        print(f"error code={code} kind={type(exc).__name__} msg={json.dumps(str(exc))}",
              file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
