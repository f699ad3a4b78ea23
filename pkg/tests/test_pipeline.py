import json

import pytest
from hypothesis import given, strategies as st

from naaqa import pipeline as pl
from naaqa.plots import plot_eval_report, plot_history, plot_matrix
from naaqa.questengine import QARecord
from naaqa.training import aggregate, evaluate_predictions


@given(st.integers(3, 100000))
def test_split_counts_partition(n):
    c = pl.split_counts(n)
    assert sum(c.values()) == n and min(c.values()) >= 0
    assert abs(c["train"] - 0.7 * n) <= 1


def test_scene_seeds_are_distinct_per_split():
    seeds = {pl.scene_seed(0, s, k) for s in ("train", "val", "test") for k in range(50)}
    assert len(seeds) == 150


def test_manifest_honours_source_date_epoch(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert pl.now() == "1970-01-01T00:00:00+00:00"
    pl.RunManifest("x", started=pl.now()).write(tmp_path)
    doc = json.loads((tmp_path / "run_manifest.json").read_text())
    assert doc["started"] == "1970-01-01T00:00:00+00:00" and doc["tool_version"]
    f = tmp_path / "out.txt"
    f.write_text("x")
    assert pl.RunManifest("y").write(f).name == "out.txt.manifest.json"


def test_tree_digest_tracks_content_not_manifest(tmp_path):
    (tmp_path / "a").write_text("1")
    d0 = pl.tree_digest(tmp_path)
    (tmp_path / "run_manifest.json").write_text("{}")
    assert pl.tree_digest(tmp_path) == d0
    (tmp_path / "a").write_text("2")
    assert pl.tree_digest(tmp_path) != d0


def test_bad_inputs_raise_data_errors(tmp_path):
    with pytest.raises(pl.DataError):
        pl.build_dataset(tmp_path, preset="huge")
    with pytest.raises(pl.DataError):
        pl.load_dataset(tmp_path)


def test_plots_write_files(tmp_path):
    recs = [QARecord(str(k), "s", t, bool(k % 2), "q", [], "yes")
            for k, t in enumerate(["exist", "count", "relative_position", "note"] * 3)]
    rep = evaluate_predictions(recs, ["yes", "no", "yes"] * 4, name="m")
    plot_eval_report(rep, tmp_path / "r.png")
    plot_history([{"epoch": 1, "train_loss": 2.0, "val_loss": 2.1, "val_acc": 0.1},
                  {"epoch": 2, "train_loss": 1.5, "val_loss": 1.9, "val_acc": 0.2}], tmp_path / "h.png")
    plot_matrix(aggregate({"m": [rep, rep]}), tmp_path / "m.png")
    assert all((tmp_path / n).stat().st_size > 1000 for n in ("r.png", "h.png", "m.png"))
