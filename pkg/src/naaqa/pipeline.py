"""End-to-end dataset assembly on disk, dataset loading and run provenance."""
from __future__ import annotations

import datetime
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import read_wav
from .features import PRESETS, NormStats, extract, fit_norm, read_feature, write_feature
from .questengine.generate import (generate_dataset_questions, read_records,
                                   shared_question_records, vocabulary, write_records)
from .questengine.templates import builtin_templates, load_templates
from .scenegen import SceneSpec, compose_scene, load_scenes, render_scene, write_scene_index
from .soundbank import Bank, build_bank, load_bank
from .training import Split, ablate, make_split

DATASET_PRESETS = {"micro": 200, "small": 2000, "paper": 50000}
SPLIT_FRACTIONS = (("train", 0.70), ("val", 0.15), ("test", 0.15))
QUESTIONS_PER_SCENE = 4


class DataError(ValueError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digest(directory, pattern: str = "*") -> str:
    """Hash of (relative path, content hash) over files in sorted order."""
    directory = Path(directory)
    h = hashlib.sha256()
    for p in sorted(directory.rglob(pattern)):
        if p.is_file() and p.name != "run_manifest.json":
            h.update(str(p.relative_to(directory)).encode())
            h.update(sha256_file(p).encode())
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str = ""
    input_hashes: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    tool_version: str = __version__
    started: str = ""
    finished: str = ""

    def write(self, target) -> Path:
        """Directory outputs get ``run_manifest.json`` inside; file outputs a sibling
        ``<name>.manifest.json``."""
        target = Path(target)
        path = target / "run_manifest.json" if target.is_dir() else \
            target.with_name(target.name + ".manifest.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")
        return path


def now() -> str:
    """UTC timestamp; SOURCE_DATE_EPOCH pins it for reproducible outputs."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = datetime.datetime.fromtimestamp(int(epoch), datetime.timezone.utc) if epoch \
        else datetime.datetime.now(datetime.timezone.utc)
    return t.isoformat(timespec="seconds")


# -- scenes ----------------------------------------------------------------------------

_WORKER_BANK = None


def _init_worker(bank_dir):
    global _WORKER_BANK
    _WORKER_BANK = load_bank(bank_dir)


def _render_one(args):
    spec_json, out_path = args
    spec = SceneSpec.from_json(spec_json)
    render_scene(spec, _WORKER_BANK, out_path)
    return spec.scene_id


def scene_seed(seed: int, split: str, k: int) -> int:
    tag = {"train": 1, "val": 2, "test": 3}.get(split, 9)
    return int(np.random.SeedSequence([seed, tag, k]).generate_state(1)[0])


def generate_scenes(bank: Bank, bank_dir, count: int, seed: int, out_dir, split: str | None = None,
                    jobs: int = 1) -> list:
    """Compose, render and index ``count`` scenes; returns the specs."""
    split = split or bank.split
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = []
    for k in range(count):
        spec = compose_scene(bank, scene_seed(seed, split, k), scene_id=f"{split}_{k:06d}")
        spec.split = split
        spec.audio_path = f"{spec.scene_id}.wav"
        (out_dir / f"{spec.scene_id}.json").write_text(spec.to_json())
        specs.append(spec)
    tasks = [(s.to_json(), out_dir / s.audio_path) for s in specs]
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(str(bank_dir),)) as pool:
            list(pool.map(_render_one, tasks, chunksize=4))
    else:
        for s in specs:
            render_scene(s, bank, out_dir / s.audio_path)
    write_scene_index(specs, out_dir, split)
    return specs


# -- features ----------------------------------------------------------------------------

def extract_scene_features(scene_dir, out_dir, preset: str = "clear2-long-stride",
                           mode: str = "pad") -> list:
    scene_dir, out_dir = Path(scene_dir), Path(out_dir)
    if preset not in PRESETS:
        raise DataError(f"unknown feature preset {preset!r}")
    specs = []
    for scene in load_scenes(scene_dir):
        x, sr = read_wav(scene_dir / scene.audio_path)
        if sr != PRESETS[preset].sample_rate:
            raise DataError(f"{scene.scene_id}: sample rate {sr}")
        spec = extract(x, PRESETS[preset], mode, scene.scene_id)
        write_feature(out_dir / f"{scene.scene_id}.aqaf", spec)
        specs.append(spec)
    return specs


def read_feature_dir(directory) -> dict:
    return {p.stem: read_feature(p) for p in sorted(Path(directory).glob("*.aqaf"))}


# -- full dataset ------------------------------------------------------------------------

def split_counts(n_scenes: int) -> dict:
    n_train = int(round(SPLIT_FRACTIONS[0][1] * n_scenes))
    n_val = int(round(SPLIT_FRACTIONS[1][1] * n_scenes))
    return {"train": n_train, "val": n_val, "test": n_scenes - n_train - n_val}


def build_dataset(out_dir, preset: str = "micro", seed: int = 0,
                  feature_preset: str = "clear2-long-stride", mode: str = "pad",
                  templates_path=None, jobs: int = 1, n_scenes: int | None = None,
                  log=print) -> dict:
    """banks -> scenes -> features -> questions; returns the dataset summary."""
    if preset not in DATASET_PRESETS and n_scenes is None:
        raise DataError(f"unknown dataset preset {preset!r}")
    out = Path(out_dir)
    started = now()
    n_scenes = n_scenes or DATASET_PRESETS[preset]
    counts = split_counts(n_scenes)

    log(f"banks (seed {seed})")
    train_bank = build_bank("train", seed, jobs=jobs)
    test_bank = build_bank("test", seed, thresholds=train_bank.thresholds, jobs=jobs)
    train_bank.save(out / "banks" / "train")
    test_bank.save(out / "banks" / "test")

    scenes = {}
    for split, _ in SPLIT_FRACTIONS:
        bank, bank_name = (test_bank, "test") if split == "test" else (train_bank, "train")
        log(f"scenes: {split} ({counts[split]})")
        scenes[split] = generate_scenes(bank, out / "banks" / bank_name, counts[split], seed,
                                        out / "scenes" / split, split, jobs)

    log("features")
    feats = {split: extract_scene_features(out / "scenes" / split, out / "features" / split,
                                           feature_preset, mode)
             for split, _ in SPLIT_FRACTIONS}
    stats = fit_norm(feats["train"], "train")
    (out / "features" / "norm.json").write_text(stats.to_json())

    log("questions")
    templates = load_templates(templates_path) if templates_path else builtin_templates()
    records = {}
    for k, (split, _) in enumerate(SPLIT_FRACTIONS):
        records[split] = generate_dataset_questions(scenes[split], templates, QUESTIONS_PER_SCENE,
                                                    seed=seed * 10 + k, jobs=jobs)
    vocab = vocabulary(records["train"])
    for split, recs in records.items():
        write_records(out / "questions" / f"{split}.jsonl", recs, split, vocab)

    summary = {"preset": preset, "seed": seed, "n_scenes": n_scenes, "scene_counts": counts,
               "question_counts": {s: len(r) for s, r in records.items()},
               "feature_preset": feature_preset, "mode": mode, "vocabulary_size": len(vocab),
               "thresholds": train_bank.thresholds, "norm": {"mean": stats.mean, "std": stats.std}}
    (out / "dataset.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    manifest = RunManifest(command=f"dataset build --preset {preset}", seeds=[seed],
                           config_hash=hashlib.sha256(json.dumps(summary, sort_keys=True)
                                                      .encode()).hexdigest()[:16],
                           outputs=["banks", "scenes", "features", "questions", "dataset.json"],
                           started=started)
    manifest.input_hashes = {"templates": hashlib.sha256(
        json.dumps([t.to_dict() for t in templates], sort_keys=True).encode()).hexdigest()}
    manifest.finished = now()
    manifest.write(out)
    return summary


@dataclass
class Dataset:
    root: Path
    splits: dict
    vocab: list
    stats: NormStats
    summary: dict

    def digest(self) -> str:
        h = hashlib.sha256()
        for sub in ("questions", "features"):
            h.update(tree_digest(self.root / sub).encode())
        return h.hexdigest()


def load_dataset(data_dir, splits=("train", "val", "test"), ablation: str = "none") -> Dataset:
    root = Path(data_dir)
    if not (root / "dataset.json").exists():
        raise DataError(f"{root} is not a dataset directory (no dataset.json)")
    stats = NormStats.from_json((root / "features" / "norm.json").read_text())
    summary = json.loads((root / "dataset.json").read_text())
    out, vocab = {}, None
    for split in splits:
        header, recs = read_records(root / "questions" / f"{split}.jsonl")
        vocab = vocab or header["vocabulary"]
        feats = read_feature_dir(root / "features" / split)
        out[split] = ablate(make_split(split, recs, feats, vocab, stats, header["labels"]),
                            ablation, stats)
    return Dataset(root, out, vocab, stats, summary)


# -- overfit micro-dataset -----------------------------------------------------------------

def build_overfit_set(seed: int = 0, n_scenes: int = 16, n_questions: int = 4,
                      feature_preset: str = "clear2-long-stride", max_majority: float = 0.5):
    """(Split, NormStats, vocab): ``n_scenes`` x ``n_questions`` records sharing question texts."""
    bank = build_bank("train", seed)
    scenes, specs = [], {}
    for k in range(n_scenes):
        scene = compose_scene(bank, scene_seed(seed, "overfit", k), scene_id=f"overfit_{k:03d}")
        scenes.append(scene)
        specs[scene.scene_id] = extract(render_scene(scene, bank), PRESETS[feature_preset],
                                        "pad", scene.scene_id)
    stats = fit_norm(specs.values())
    records = shared_question_records(scenes, builtin_templates(), n_questions,
                                      np.random.default_rng([seed, 64]),
                                      max_majority=max_majority)
    vocab = vocabulary(records)
    return make_split("overfit", records, specs, vocab, stats), stats, vocab
