"""Training loop, plateau schedule, evaluation reports, ablations and seed matrices."""
from __future__ import annotations

import json
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import ops
from .autodiff.optim import Adam
from .autodiff.tensor import no_grad
from .features import NormStats, Spectrogram, normalize
from .model import CompatibilityError, ModelConfig, NAAQA
from .questengine.generate import PAD, UNK, QARecord, encode_text
from .questengine.program import LABELS, QUESTION_TYPES

DEFAULT_SEEDS = (876944, 189369, 682421, 175326, 427438)
ABLATIONS = ("none", "blank_audio", "unknown_questions")
# types whose relation column is not reported (every instance has, or cannot have, a relation)
RELATION_NA = ("relative_position", "count_compare")


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 40
    early_stop_patience: int = 6
    lr: float = 3e-4
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    weight_decay: float = 5e-6
    dropout_p: float = 0.25
    batch_size: int = 128
    seeds: tuple = DEFAULT_SEEDS
    ablation: str = "none"
    # optional early exit once training accuracy (eval mode) reaches this value
    target_train_accuracy: float | None = None

    def __post_init__(self):
        for k in ("max_epochs", "early_stop_patience", "plateau_patience", "batch_size"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be >= 1")
        if not (self.lr > 0 and 0 < self.plateau_factor < 1 and self.weight_decay >= 0):
            raise ValueError("lr and plateau_factor must be positive, weight_decay >= 0")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        return cls(**d)


TRAIN_PRESETS = {
    "paper": TrainConfig(),
    "desk": TrainConfig(batch_size=16),
    "overfit": TrainConfig(max_epochs=300, early_stop_patience=300, plateau_patience=300,
                           batch_size=16, lr=1e-3, weight_decay=0.0, dropout_p=0.0,
                           target_train_accuracy=0.97),
}


# -- data ----------------------------------------------------------------------------

@dataclass
class Split:
    """Normalized spectrograms plus encoded questions for one data split."""
    name: str
    features: np.ndarray  # (n_scenes, n_mels, n_frames), normalized
    valid_frames: np.ndarray  # (n_scenes,)
    scene_row: np.ndarray  # (n_records,) row into ``features``
    tokens: np.ndarray  # (n_records, T), right-padded with 0
    targets: np.ndarray  # (n_records,)
    records: list
    labels: tuple = LABELS

    def __len__(self):
        return len(self.records)

    def batch(self, idx):
        idx = np.asarray(idx)
        tok = self.tokens[idx]
        T = max(int((tok != 0).sum(axis=1).max()), 1)
        rows = self.scene_row[idx]
        return self.features[rows], tok[:, :T], self.valid_frames[rows], self.targets[idx]


def make_split(name: str, records, spectrograms: dict, vocab, stats: NormStats,
               labels=LABELS) -> Split:
    """``spectrograms`` maps scene_id -> padded Spectrogram (un-normalized)."""
    if list(vocab[:2]) != [PAD, UNK]:
        raise CompatibilityError("vocabulary must start with <pad>, <unk>")
    records = list(records)
    scene_ids = sorted({r.scene_id for r in records})
    missing = [s for s in scene_ids if s not in spectrograms]
    if missing:
        raise KeyError(f"no features for scenes {missing[:5]}")
    row = {s: k for k, s in enumerate(scene_ids)}
    feats = np.stack([normalize(spectrograms[s], stats).data for s in scene_ids]).astype(np.float32)
    valid = np.array([spectrograms[s].valid_frames for s in scene_ids], dtype=np.int64)
    encoded = [encode_text(r.text, vocab) for r in records]
    T = max(len(e) for e in encoded)
    tokens = np.zeros((len(records), T), dtype=np.int64)
    for k, e in enumerate(encoded):
        tokens[k, : len(e)] = e
    index = {a: k for k, a in enumerate(labels)}
    try:
        targets = np.array([index[r.answer] for r in records], dtype=np.int64)
    except KeyError as exc:
        raise CompatibilityError(f"answer {exc} not in the label set") from None
    return Split(name, feats, valid, np.array([row[r.scene_id] for r in records]), tokens,
                 targets, records, tuple(labels))


def ablate(split: Split, ablation: str, stats: NormStats | None = None) -> Split:
    """blank_audio: every spectrogram value becomes 1.0 before normalization (all frames valid).
    unknown_questions: every question becomes the same all-<unk> sequence (full padded
    length), so question length no longer leaks which question was asked."""
    if ablation == "none":
        return split
    if ablation == "blank_audio":
        if stats is None:
            raise ValueError("blank_audio needs the training normalization statistics")
        n, m, w = split.features.shape
        blank = Spectrogram(np.ones((m, w)), w)
        value = normalize(blank, stats, mask_padding=False).data.astype(np.float32)
        return replace(split, features=np.broadcast_to(value, (n, m, w)).copy(),
                       valid_frames=np.full(n, w, dtype=np.int64))
    if ablation == "unknown_questions":
        return replace(split, tokens=np.ones_like(split.tokens))
    raise ValueError(f"unknown ablation {ablation!r}")


# -- schedule ------------------------------------------------------------------------

class PlateauSchedule:
    """Epoch-level plateau LR decay plus early stopping on validation loss.

    An epoch improves when its loss is strictly below the best so far.
    """

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.best = np.inf
        self.bad_epochs = 0
        self.plateau_epochs = 0
        self.drops = 0

    @property
    def lr(self) -> float:
        # rounded so that repeated decay lands on the decimal value (3e-4 -> 3e-5)
        return float(f"{self.cfg.lr * self.cfg.plateau_factor ** self.drops:.12g}")

    def update(self, val_loss: float) -> tuple:
        """Returns (improved, stop)."""
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = self.plateau_epochs = 0
            return True, False
        self.bad_epochs += 1
        self.plateau_epochs += 1
        if self.plateau_epochs >= self.cfg.plateau_patience:
            self.drops += 1
            self.plateau_epochs = 0
        return False, self.bad_epochs >= self.cfg.early_stop_patience


# -- evaluation ------------------------------------------------------------------------

@dataclass
class EvalReport:
    n: int
    overall_accuracy: float
    per_type_accuracy: dict
    per_type_counts: dict
    relation_split: dict
    confusions: list = field(default_factory=list)
    parameter_count: int | None = None
    runtime_s: float = 0.0
    loss: float | None = None
    name: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def to_text(self) -> str:
        head = ["Overall"] + [t for t in QUESTION_TYPES if t in self.per_type_accuracy]
        vals = [self.overall_accuracy] + [self.per_type_accuracy[t] for t in head[1:]]
        width = max(len(h) for h in head) + 2
        lines = [f"{self.name or 'model'}  n={self.n}  params={self.parameter_count}",
                 "".join(h.rjust(width) for h in head),
                 "".join(f"{100 * v:.1f}".rjust(width) for v in vals), "",
                 "relation split (with / without):"]
        for t, d in self.relation_split.items():
            if d == "N/A":
                lines.append(f"  {t:<20} N/A")
            else:
                fmt = ["-" if v is None else f"{100 * v:.1f}" for v in
                       (d["with_relation"], d["without_relation"])]
                lines.append(f"  {t:<20} {fmt[0]:>6} / {fmt[1]:>6}")
        return "\n".join(lines) + "\n"


def evaluate_predictions(records, predicted, parameter_count=None, runtime_s=0.0,
                         loss=None, name="") -> EvalReport:
    """Accuracy report for answer strings ``predicted`` aligned with ``records``."""
    records = list(records)
    if len(records) != len(predicted) or not records:
        raise ValueError("need one prediction per record and at least one record")
    correct = np.array([p == r.answer for p, r in zip(predicted, records)])
    types = [r.question_type for r in records]
    per_type, counts, rel = {}, {}, {}
    for t in QUESTION_TYPES:
        mask = np.array([q == t for q in types])
        if not mask.any():
            continue
        counts[t] = int(mask.sum())
        per_type[t] = float(correct[mask].mean())
        if t in RELATION_NA:
            rel[t] = "N/A"
            continue
        entry = {}
        for key, flag in (("with_relation", True), ("without_relation", False)):
            m = mask & np.array([r.has_temporal_relation == flag for r in records])
            entry[key] = float(correct[m].mean()) if m.any() else None
        rel[t] = entry
    conf = Counter((r.answer, p) for r, p in zip(records, predicted) if r.answer != p)
    return EvalReport(n=len(records), overall_accuracy=float(correct.mean()),
                      per_type_accuracy=per_type, per_type_counts=counts, relation_split=rel,
                      confusions=[[a, p, c] for (a, p), c in conf.most_common(10)],
                      parameter_count=parameter_count, runtime_s=runtime_s, loss=loss,
                      name=name)


def predict(model: NAAQA, split: Split, batch_size: int = 64) -> tuple:
    """(logits (N, O), mean cross-entropy)."""
    out, total = [], 0.0
    with no_grad():
        for start in range(0, len(split), batch_size):
            idx = np.arange(start, min(start + batch_size, len(split)))
            x, tok, valid, y = split.batch(idx)
            logits = model.forward(x, tok, valid, training=False)
            total += float(ops.softmax_cross_entropy(logits, y).data) * len(idx)
            out.append(logits.data)
    return np.concatenate(out), total / len(split)


def evaluate(model: NAAQA, split: Split, labels=LABELS, name: str = "") -> EvalReport:
    if tuple(labels) != tuple(split.labels):
        raise CompatibilityError("label order of the model differs from the dataset's")
    t0 = time.perf_counter()
    logits, loss = predict(model, split)
    predicted = [labels[k] for k in logits.argmax(axis=1)]
    return evaluate_predictions(split.records, predicted, model.count_parameters(),
                                time.perf_counter() - t0, loss, name)


# -- training --------------------------------------------------------------------------

@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val_loss: float
    model: NAAQA
    stopped: str


def train(model: NAAQA, train_split: Split, val_split: Split, cfg: TrainConfig, seed: int,
          out_dir=None, log=None) -> TrainResult:
    """Train in place; the model ends holding the best-validation-loss weights."""
    if set(r.scene_id for r in train_split.records) & set(r.scene_id for r in val_split.records) \
            and train_split is not val_split:
        raise ValueError("train and validation splits share scenes")
    rng = np.random.default_rng([seed, 1])
    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = PlateauSchedule(cfg)
    history, best_state, best_epoch = [], None, 0
    hist_fh = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        hist_fh = open(Path(out_dir) / "history.jsonl", "w")
    stopped = "max_epochs"
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            opt.lr = sched.lr
            order = rng.permutation(len(train_split))
            total = 0.0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                x, tok, valid, y = train_split.batch(idx)
                opt.zero_grad()
                loss = ops.softmax_cross_entropy(model.forward(x, tok, valid, training=True), y)
                value = float(loss.data)
                if not np.isfinite(value):
                    ids = [train_split.records[i].question_id for i in idx]
                    raise NumericError(f"non-finite loss at epoch {epoch}, lr={opt.lr:g}, "
                                       f"batch={ids}")
                loss.backward()
                opt.step()
                total += value * len(idx)
            row = {"epoch": epoch, "train_loss": total / len(train_split), "lr": opt.lr}
            logits, val_loss = predict(model, val_split)
            row["val_loss"] = val_loss
            row["val_acc"] = float((logits.argmax(axis=1) == val_split.targets).mean())
            if cfg.target_train_accuracy is not None:
                tl, _ = predict(model, train_split)
                row["train_acc"] = float((tl.argmax(axis=1) == train_split.targets).mean())
            history.append(row)
            if hist_fh:
                hist_fh.write(json.dumps(row, sort_keys=True) + "\n")
                hist_fh.flush()
            if log:
                log(row)
            improved, stop = sched.update(val_loss)
            if improved:
                best_epoch = epoch
                best_state = {k: v.copy() for k, v in model.state_arrays().items()}
            if stop:
                stopped = "early_stop"
                break
            if cfg.target_train_accuracy is not None and row["train_acc"] >= cfg.target_train_accuracy:
                stopped = "target_accuracy"
                break
    finally:
        if hist_fh:
            hist_fh.close()
    if best_state is not None:
        model.load_state_arrays(best_state)
    return TrainResult(history, best_epoch, sched.best, model, stopped)


# -- seed matrices ----------------------------------------------------------------------

def aggregate(reports_by_config: dict) -> list:
    """Rows ``{config, n_runs, params, overall: [mean, std], per_type: {t: [mean, std]}}``
    in the given config order; std uses ddof=1 (0 for a single run)."""
    rows = []
    for name, reports in reports_by_config.items():
        ok = [r for r in reports if isinstance(r, EvalReport)]
        failures = [str(r) for r in reports if not isinstance(r, EvalReport)]
        row = {"config": name, "n_runs": len(ok), "failures": failures,
               "params": ok[0].parameter_count if ok else None}
        if ok:
            def ms(vals):
                vals = np.asarray(vals, dtype=np.float64)
                return [float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0]
            row["overall"] = ms([r.overall_accuracy for r in ok])
            row["per_type"] = {t: ms([r.per_type_accuracy[t] for r in ok if t in r.per_type_accuracy])
                               for t in QUESTION_TYPES if any(t in r.per_type_accuracy for r in ok)}
        rows.append(row)
    return rows


def run_matrix(configs: dict, seeds, splits: dict, train_cfg: TrainConfig, stats: NormStats,
               out_dir=None, log=None) -> list:
    """Train/evaluate every (config, seed); failures are recorded per cell."""
    reports = {}
    for name, mcfg in configs.items():
        cell = []
        for seed in seeds:
            try:
                model = NAAQA(replace(mcfg, dropout_p=train_cfg.dropout_p), seed=seed)
                tr = ablate(splits["train"], train_cfg.ablation, stats)
                va = ablate(splits["val"], train_cfg.ablation, stats)
                te = ablate(splits["test"], train_cfg.ablation, stats)
                run_dir = Path(out_dir) / f"{name}_seed{seed}" if out_dir else None
                train(model, tr, va, train_cfg, seed, run_dir, log)
                rep = evaluate(model, te, name=name)
                if run_dir:
                    (run_dir / "eval_report.json").write_text(rep.to_json())
                cell.append(rep)
            except (NumericError, ValueError, FloatingPointError) as exc:
                cell.append(f"seed {seed}: {exc}")
        reports[name] = cell
    return aggregate(reports)


def matrix_csv(rows) -> str:
    header = ["config", "n_runs", "params", "overall_mean", "overall_std"]
    for t in QUESTION_TYPES:
        header += [f"{t}_mean", f"{t}_std"]
    lines = [",".join(header)]
    for r in rows:
        vals = [r["config"], str(r["n_runs"]), str(r["params"] or "")]
        ov = r.get("overall", ["", ""])
        vals += [f"{v:.6f}" if v != "" else "" for v in ov]
        for t in QUESTION_TYPES:
            pt = r.get("per_type", {}).get(t)
            vals += [f"{pt[0]:.6f}", f"{pt[1]:.6f}"] if pt else ["", ""]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def matrix_text(rows) -> str:
    lines = [f"{'config':<36}{'params':>10}{'runs':>6}{'overall (%)':>18}"]
    for r in rows:
        ov = r.get("overall")
        acc = f"{100 * ov[0]:.1f} ±{100 * ov[1]:.2f}" if ov else "failed"
        lines.append(f"{r['config']:<36}{str(r['params']):>10}{r['n_runs']:>6}{acc:>18}")
    return "\n".join(lines) + "\n"
