"""Template instantiation, ill-posed filtering, answer balancing and QA record I/O."""
from __future__ import annotations

import json
import re
import zlib
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..scenegen import GLOBAL_POSITIONS, SceneSpec, permute_scene
from ..soundbank import INSTRUMENTS, NOTES
from .program import (ANSWER_SETS, BRIGHTNESS, LABELS, LOUDNESS, ORDINALS, QUESTION_TYPES,
                      IllPosed, Node, execute, has_temporal_relation, program_from_dicts)
from .templates import PLACEHOLDER_RE, Template

PAD, UNK = "<pad>", "<unk>"
COUNTING_OPS = ("count", "count_distinct_instruments", "exist")
N_SHUFFLES = 5
RANDOM_VALUE_P = 0.25
BALANCE_FACTOR = 3.0


class QuestionExhaustion(RuntimeError):
    """Fewer than the requested number of questions could be instantiated for a scene."""


@dataclass
class QARecord:
    question_id: str
    scene_id: str
    question_type: str
    has_temporal_relation: bool
    text: str
    program: list
    answer: str
    template_id: str = ""

    def to_dict(self) -> dict:
        return {"question_id": self.question_id, "scene_id": self.scene_id,
                "question_type": self.question_type,
                "has_temporal_relation": self.has_temporal_relation, "text": self.text,
                "program": [n.to_dict() for n in self.program], "answer": self.answer,
                "template_id": self.template_id}

    @classmethod
    def from_dict(cls, d: dict) -> "QARecord":
        return cls(d["question_id"], d["scene_id"], d["question_type"],
                   d["has_temporal_relation"], d["text"], program_from_dicts(d["program"]),
                   d["answer"], d.get("template_id", ""))


_DOMAINS = {"I": INSTRUMENTS, "N": NOTES, "B": BRIGHTNESS, "L": LOUDNESS,
            "GP": GLOBAL_POSITIONS, "REL": ("before", "after")}
_EVENT_ATTR = {"I": "instrument", "N": "note", "B": "brightness_label",
               "L": "loudness_label", "GP": "global_position"}


def sample_values(template: Template, scene: SceneSpec, rng: np.random.Generator) -> dict | None:
    """Draw placeholder values, mostly read off randomly chosen scene events."""
    values = {}
    anchors = {}
    n = len(scene.events)
    for ph in template.placeholders():
        kind, group = PLACEHOLDER_RE.fullmatch(ph).groups()
        if kind == "O":
            k = int(rng.integers(1, 4)) if rng.random() < 0.75 else int(rng.integers(1, n + 1))
            values[ph] = k
        elif kind == "REL":
            values[ph] = _DOMAINS["REL"][int(rng.integers(2))]
        elif rng.random() < RANDOM_VALUE_P:
            dom = _DOMAINS[kind]
            values[ph] = dom[int(rng.integers(len(dom)))]
        else:
            if group not in anchors:
                anchors[group] = scene.events[int(rng.integers(n))]
            values[ph] = getattr(anchors[group], _EVENT_ATTR[kind])
    for a, b in template.constraints.get("distinct", []):
        if a in values and b in values and values[a] == values[b]:
            return None
    return values


def resolve(template: Template, values: dict) -> list:
    out = []
    for node in template.program_skeleton:
        op = PLACEHOLDER_RE.sub(lambda m: str(values[m.group(0)]), node.op)
        arg = node.arg
        if isinstance(arg, str) and PLACEHOLDER_RE.fullmatch(arg):
            arg = values[arg]
        out.append(Node(op, arg, node.inputs))
    return out


def _surface(ph: str, value) -> str:
    if ph.startswith("<O"):
        return ORDINALS[int(value) - 1]
    return str(value)


def render_text(template: Template, values: dict) -> str:
    return PLACEHOLDER_RE.sub(lambda m: _surface(m.group(0), values[m.group(0)]),
                              template.text_pattern)


def is_degenerate(program, scene: SceneSpec, answer: str, rng: np.random.Generator) -> bool:
    """True when the answer survives every random reordering of the scene's sounds.

    Counting/existence programs are exempt: order-free answers are their point.
    """
    if any(n.op in COUNTING_OPS for n in program):
        return False
    n = len(scene.events)
    for _ in range(N_SHUFFLES):
        shuffled = permute_scene(scene, rng.permutation(n))
        try:
            if execute(program, shuffled) != answer:
                return False
        except IllPosed:
            return False
    return True


def instantiate(template: Template, scene: SceneSpec, rng: np.random.Generator,
                question_id: str = "", check_degenerate: bool = True,
                values: dict | None = None) -> QARecord | None:
    """One instantiation attempt; ``None`` means rejected."""
    if values is None:
        values = sample_values(template, scene, rng)
        if values is None:
            return None
    program = resolve(template, values)
    try:
        answer = execute(program, scene)
    except IllPosed:
        return None
    if check_degenerate and is_degenerate(program, scene, answer, rng):
        return None
    return QARecord(question_id=question_id, scene_id=scene.scene_id,
                    question_type=template.question_type,
                    has_temporal_relation=has_temporal_relation(program),
                    text=render_text(template, values), program=program, answer=answer,
                    template_id=template.template_id)


class AnswerBalancer:
    """Caps each (question type, answer) count at BALANCE_FACTOR x its uniform share."""

    def __init__(self, factor: float = BALANCE_FACTOR, warmup: int = 3):
        self.factor = factor
        self.warmup = warmup
        self.counts = Counter()
        self.type_totals = Counter()

    def allows(self, qtype: str, answer: str) -> bool:
        share = (self.type_totals[qtype] + 1) / len(ANSWER_SETS[qtype])
        return self.counts[qtype, answer] < max(self.warmup, self.factor * share)

    def add(self, qtype: str, answer: str) -> None:
        self.counts[qtype, answer] += 1
        self.type_totals[qtype] += 1


def _by_type(templates) -> dict:
    groups = {}
    for t in templates:
        groups.setdefault(t.question_type, []).append(t)
    return groups


def generate_questions(scene: SceneSpec, templates, per_scene: int = 4,
                       rng: np.random.Generator | None = None,
                       balancer: AnswerBalancer | None = None,
                       max_attempts: int = 400, tries_per_template: int = 10) -> list:
    """Accepted records from ``per_scene`` distinct templates, types drawn uniformly."""
    rng = np.random.default_rng(rng)
    groups = _by_type(templates)
    types = sorted(groups)
    used, records = set(), []
    attempts = 0
    while len(records) < per_scene and attempts < max_attempts:
        qtype = types[int(rng.integers(len(types)))]
        fresh = [t for t in groups[qtype] if t.template_id not in used]
        if not fresh:
            attempts += 1
            continue
        template = fresh[int(rng.integers(len(fresh)))]
        for _ in range(tries_per_template):
            attempts += 1
            rec = instantiate(template, scene, rng,
                              question_id=f"{scene.scene_id}_q{len(records)}")
            if rec is None:
                continue
            if balancer is not None and not balancer.allows(rec.question_type, rec.answer):
                continue
            if balancer is not None:
                balancer.add(rec.question_type, rec.answer)
            used.add(template.template_id)
            records.append(rec)
            break
    if len(records) < per_scene:
        raise QuestionExhaustion(
            f"scene {scene.scene_id}: {len(records)}/{per_scene} questions after {attempts} attempts")
    return records


def scene_rng(master_seed: int, scene_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, zlib.crc32(scene_id.encode())]))


def _candidates(args):
    scene, templates, n, seed = args
    return generate_questions(scene, templates, n, scene_rng(seed, scene.scene_id))


def generate_dataset_questions(scenes, templates, per_scene: int = 4, seed: int = 0,
                               oversample: int = 3, jobs: int = 1) -> list:
    """Two-pass generation: per-scene candidates (parallel), then balanced subsampling."""
    tasks = [(s, templates, per_scene * oversample, seed) for s in scenes]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            pools = list(pool.map(_candidates, tasks, chunksize=16))
    else:
        pools = [_candidates(t) for t in tasks]
    balancer = AnswerBalancer()
    out = []
    for scene, cands in zip(scenes, pools):
        picked = []
        for c in cands:
            if len(picked) < per_scene and balancer.allows(c.question_type, c.answer):
                picked.append(c)
                balancer.add(c.question_type, c.answer)
        # every scene keeps per_scene questions; over-cap candidates fill any shortfall
        for c in cands:
            if len(picked) < per_scene and all(c is not p for p in picked):
                picked.append(c)
                balancer.add(c.question_type, c.answer)
        for k, rec in enumerate(picked):
            rec.question_id = f"{scene.scene_id}_q{k}"
        out.extend(picked)
    return out


def tokenize(text: str) -> list:
    """Lowercase, drop punctuation except '#', split on whitespace."""
    return re.sub(r"[^\w#\s]", " ", text.lower()).split()


def vocabulary(records) -> list:
    records = list(records)
    if not records:
        raise ValueError("vocabulary needs at least one record")
    words = sorted({tok for r in records for tok in tokenize(r.text)})
    return [PAD, UNK] + words


def encode_text(text: str, vocab) -> list:
    index = {w: i for i, w in enumerate(vocab)}
    unk = index[UNK]
    return [index.get(tok, unk) for tok in tokenize(text)]


def write_records(path, records, split: str, vocab=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"header": True, "split": split, "labels": list(LABELS),
              "n_records": len(records)}
    if vocab is not None:
        header["vocabulary"] = list(vocab)
    with path.open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    return path


def read_records(path) -> tuple:
    """Return (header dict, list of QARecord)."""
    with Path(path).open() as fh:
        header = json.loads(fh.readline())
        records = [QARecord.from_dict(json.loads(line)) for line in fh if line.strip()]
    return header, records


def shared_question_records(scenes, templates, n_questions: int, rng, max_tries: int = 2000,
                            max_majority: float = 1.0):
    """Records for ``n_questions`` fixed (template, values) pairs valid on every scene.

    Every scene gets the same question texts, so neither modality alone determines
    the answers. A question is kept only if its most common answer covers at most
    ``max_majority`` of the scenes.
    """
    rng = np.random.default_rng(rng)
    groups = _by_type(templates)
    types = [t for t in QUESTION_TYPES if t in groups]
    picks, seen = [], set()
    for _ in range(max_tries):
        if len(picks) >= n_questions:
            break
        qtype = types[int(rng.integers(len(types)))]
        template = groups[qtype][int(rng.integers(len(groups[qtype])))]
        values = sample_values(template, scenes[int(rng.integers(len(scenes)))], rng)
        if values is None:
            continue
        text = render_text(template, values)
        if text in seen or qtype in {p[0].question_type for p in picks}:
            continue
        recs = [instantiate(template, s, rng, check_degenerate=False, values=values)
                for s in scenes]
        if any(r is None for r in recs) or len({r.answer for r in recs}) < 2:
            continue
        if Counter(r.answer for r in recs).most_common(1)[0][1] > max_majority * len(recs):
            continue
        seen.add(text)
        picks.append((template, recs))
    if len(picks) < n_questions:
        raise QuestionExhaustion(f"only {len(picks)} shared questions found")
    out = []
    for s_idx, scene in enumerate(scenes):
        for q, (_, recs) in enumerate(picks):
            rec = recs[s_idx]
            rec.question_id = f"{scene.scene_id}_s{q}"
            out.append(rec)
    return out
