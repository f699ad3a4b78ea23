from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from naaqa.features import NormStats, Spectrogram
from naaqa.model import NAAQA, CompatibilityError, ModelConfig
from naaqa.questengine import LABELS, QUESTION_TYPES, QARecord, vocabulary
from naaqa.training import (TRAIN_PRESETS, EvalReport, NumericError, PlateauSchedule, TrainConfig,
                            ablate, aggregate, evaluate, evaluate_predictions, make_split,
                            matrix_csv, predict, train)

CFG = ModelConfig(name="tiny", N1=4, P=8, E=8, G=16, J=2, M=8, C=16, H=16, vocab_size=32,
                  coordmaps={"resblocks": "time"}, dropout_p=0.0)
STATS = NormStats(0.0, 1.0)


def synthetic_split(name, n_scenes=6, per_scene=2, W=24, seed=0):
    rng = np.random.default_rng(seed)
    specs, records = {}, []
    words = ["is", "there", "a", "flute", "cello", "how", "many", "sounds"]
    for s in range(n_scenes):
        sid = f"{name}_{s}"
        valid = int(rng.integers(W // 2, W + 1))
        data = np.zeros((64, W), dtype=np.float32)
        data[:, :valid] = rng.standard_normal((64, valid))
        specs[sid] = Spectrogram(data, valid, sid)
        for q in range(per_scene):
            qtype = QUESTION_TYPES[(s + q) % len(QUESTION_TYPES)]
            text = " ".join(rng.choice(words, size=int(rng.integers(2, 6))))
            records.append(QARecord(f"{sid}_q{q}", sid, qtype, bool(q), text, [],
                                    ("yes", "no")[(s + q) % 2]))
    return records, specs


@pytest.fixture(scope="module")
def splits():
    recs, specs = synthetic_split("train")
    vrecs, vspecs = synthetic_split("val", seed=1)
    vocab = vocabulary(recs)
    return (make_split("train", recs, specs, vocab, STATS),
            make_split("val", vrecs, vspecs, vocab, STATS), vocab)


def test_split_encoding(splits):
    tr, _, vocab = splits
    assert tr.features.shape == (6, 64, 24)
    assert len(tr) == 12 and tr.tokens.shape[0] == 12
    x, tok, valid, y = tr.batch([0, 1])
    assert tok.shape[1] == max(int((t != 0).sum()) for t in tr.tokens[[0, 1]])
    assert {LABELS[k] for k in tr.targets} == {"yes", "no"}


def test_unknown_answer_is_incompatible():
    recs, specs = synthetic_split("x", 1, 1)
    recs[0].answer = "maybe"
    with pytest.raises(CompatibilityError):
        make_split("x", recs, specs, vocabulary(recs), STATS)


def test_blank_audio_makes_scenes_identical(splits):
    tr, _, _ = splits
    b = ablate(tr, "blank_audio", NormStats(0.5, 2.0))
    assert np.all(b.features == 0.25)
    assert np.all(b.valid_frames == b.features.shape[2])


def test_unknown_questions_makes_questions_identical(splits):
    tr, _, _ = splits
    u = ablate(tr, "unknown_questions")
    assert np.all(u.tokens == 1)
    assert len({tuple(u.batch([i])[1][0]) for i in range(len(u))}) == 1


def test_plateau_drops_lr_exactly_and_stops():
    s = PlateauSchedule(TrainConfig())
    assert s.update(1.0) == (True, False)
    for _ in range(3):
        s.update(1.0)
    assert s.lr == 3e-5
    assert s.update(0.5) == (True, False)
    stops = [s.update(0.9)[1] for _ in range(6)]
    assert stops == [False] * 5 + [True]
    assert s.lr == 3e-7  # two more drops, at the 3rd and 6th bad epoch


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=30))
def test_schedule_best_is_running_minimum(losses):
    s = PlateauSchedule(TrainConfig(early_stop_patience=100))
    for v in losses:
        s.update(v)
    assert s.best == min(losses)


def test_train_config_validation_and_roundtrip():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(ablation="mute")
    c = TRAIN_PRESETS["overfit"]
    assert TrainConfig.from_dict(c.to_dict()) == c


@given(st.lists(st.tuples(st.sampled_from(QUESTION_TYPES), st.booleans(), st.booleans()),
                min_size=1, max_size=60))
def test_eval_accounting_identity(rows):
    recs = [QARecord(str(k), "s", t, rel, "q", [], "yes") for k, (t, rel, _) in enumerate(rows)]
    pred = ["yes" if ok else "no" for _, _, ok in rows]
    rep = evaluate_predictions(recs, pred)
    weighted = sum(rep.per_type_accuracy[t] * rep.per_type_counts[t] for t in rep.per_type_counts)
    assert weighted / rep.n == pytest.approx(rep.overall_accuracy)
    for t in ("relative_position", "count_compare"):
        if t in rep.relation_split:
            assert rep.relation_split[t] == "N/A"


def test_eval_report_roundtrip():
    recs = [QARecord("a", "s", "exist", False, "q", [], "yes")]
    rep = evaluate_predictions(recs, ["yes"], name="m")
    assert EvalReport.from_dict(rep.to_dict()) == rep
    assert "exist" in rep.to_text()


def test_constant_predictor_scores_the_answer_share():
    recs = [QARecord(str(k), "s", "exist", False, "q", [], ans)
            for k, ans in enumerate(["yes"] * 3 + ["no"] * 7)]
    assert evaluate_predictions(recs, ["yes"] * 10).overall_accuracy == pytest.approx(0.3)


def test_evaluate_rejects_label_mismatch(splits):
    tr, _, _ = splits
    with pytest.raises(CompatibilityError):
        evaluate(NAAQA(CFG), tr, labels=tuple(reversed(LABELS)))


def test_training_is_deterministic_and_keeps_best(splits, tmp_path):
    tr, va, _ = splits
    cfg = replace(TRAIN_PRESETS["desk"], max_epochs=3, batch_size=4, lr=1e-3)
    r1 = train(NAAQA(CFG, seed=7), tr, va, cfg, seed=7, out_dir=tmp_path)
    r2 = train(NAAQA(CFG, seed=7), tr, va, cfg, seed=7)
    assert [h["train_loss"] for h in r1.history] == [h["train_loss"] for h in r2.history]
    assert (tmp_path / "history.jsonl").read_text().count("\n") == 3
    assert r1.best_val_loss == min(h["val_loss"] for h in r1.history)
    _, loss = predict(r1.model, va)
    assert loss == pytest.approx(r1.best_val_loss, rel=1e-6)


def test_training_rejects_shared_scenes(splits):
    tr, _, vocab = splits
    recs, specs = synthetic_split("train")
    clone = make_split("val", recs, specs, vocab, STATS)
    with pytest.raises(ValueError):
        train(NAAQA(CFG), tr, clone, TrainConfig(max_epochs=1), 0)


def test_nan_loss_aborts_with_diagnostic(splits):
    tr, va, _ = splits
    m = NAAQA(CFG)
    m.params["classifier.output.bias"].data[:] = np.nan
    with pytest.raises(NumericError, match="lr="):
        train(m, tr, va, TrainConfig(max_epochs=1, batch_size=4), 0)


def test_aggregate_std_and_failures():
    recs = [QARecord("a", "s", "exist", False, "q", [], "yes"),
            QARecord("b", "s", "exist", False, "q", [], "no")]
    reps = [evaluate_predictions(recs, p) for p in (["yes", "yes"], ["yes", "no"], ["no", "yes"])]
    rows = aggregate({"b": reps, "a": [reps[1]] * 5, "broken": ["seed 1: boom"]})
    assert [r["config"] for r in rows] == ["b", "a", "broken"]
    assert rows[0]["overall"] == pytest.approx([0.5, np.std([0.5, 1.0, 0.0], ddof=1)])
    assert rows[1]["overall"][1] == 0.0 and rows[1]["n_runs"] == 5
    assert rows[2]["n_runs"] == 0 and rows[2]["failures"]
    assert matrix_csv(rows).splitlines()[0].startswith("config,n_runs")
