"""Question templates: text pattern + program skeleton with placeholders.

Placeholders are ``<I>`` instrument, ``<N>`` note, ``<B>`` brightness, ``<L>``
loudness, ``<O>`` ordinal, ``<GP>`` global position and ``<REL>`` before/after,
optionally followed by a digit (``<I2>``) to refer to a second sound.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .program import QUESTION_TYPES, Node, validate_program

PLACEHOLDER_RE = re.compile(r"<(I|N|B|L|O|GP|REL)(\d*)>")


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class Template:
    template_id: str
    question_type: str
    text_pattern: str
    program_skeleton: tuple
    constraints: dict = field(default_factory=dict)

    def placeholders(self) -> list:
        found = dict.fromkeys(m.group(0) for m in PLACEHOLDER_RE.finditer(self.text_pattern))
        for node in self.program_skeleton:
            for s in (node.op, node.arg):
                if isinstance(s, str):
                    found.update(dict.fromkeys(m.group(0) for m in PLACEHOLDER_RE.finditer(s)))
        return list(found)

    def validate(self) -> None:
        if self.question_type not in QUESTION_TYPES:
            raise TemplateError(f"{self.template_id}: unknown question type {self.question_type!r}")
        in_text = {m.group(0) for m in PLACEHOLDER_RE.finditer(self.text_pattern)}
        in_program = set(self.placeholders()) - in_text
        if in_program:
            raise TemplateError(f"{self.template_id}: placeholders {sorted(in_program)} missing from text")
        resolved = [Node(n.op.replace("<REL>", "before").replace("<REL2>", "before"), 1
                         if isinstance(n.arg, str) and n.arg.startswith("<O") else n.arg, n.inputs)
                    for n in self.program_skeleton]
        try:
            validate_program(resolved)
        except ValueError as exc:
            raise TemplateError(f"{self.template_id}: {exc}") from exc

    def to_dict(self) -> dict:
        return {"template_id": self.template_id, "question_type": self.question_type,
                "text_pattern": self.text_pattern,
                "program_skeleton": [n.to_dict() for n in self.program_skeleton],
                "constraints": self.constraints}

    @classmethod
    def from_dict(cls, d: dict) -> "Template":
        t = cls(d["template_id"], d["question_type"], d["text_pattern"],
                tuple(Node.from_dict(n) for n in d["program_skeleton"]),
                d.get("constraints", {}))
        t.validate()
        return t


def load_templates(path=None) -> list:
    """Load templates from JSON (one object per template); default: the built-in set."""
    if path is None:
        text = resources.files(__package__).joinpath("templates.json").read_text()
    else:
        text = Path(path).read_text()
    return [Template.from_dict(d) for d in json.loads(text)]


def save_templates(templates, path) -> None:
    Path(path).write_text(json.dumps([t.to_dict() for t in templates], indent=1) + "\n")


# --- built-in template inventory -------------------------------------------

class _Prog:
    def __init__(self):
        self.nodes = []

    def add(self, op, arg=None, *inputs) -> int:
        self.nodes.append(Node(op, arg, tuple(inputs)))
        return len(self.nodes) - 1


def _filters(p, src, pairs):
    for op, arg in pairs:
        src = p.add(op, arg, src)
    return src


# reference phrases: name -> (text, [(filter op, placeholder)...], selector)
# selector is "unique" or an ordinal placeholder for nth
_REFS = {
    "O_I": ("the <O{s}> <I{s}>", [("filter_instrument", "<I{s}>")], "<O{s}>"),
    "O_S": ("the <O{s}> sound", [], "<O{s}>"),
    "O_B": ("the <O{s}> <B{s}> sound", [("filter_brightness", "<B{s}>")], "<O{s}>"),
    "O_L": ("the <O{s}> <L{s}> sound", [("filter_loudness", "<L{s}>")], "<O{s}>"),
    "O_N": ("the <O{s}> <N{s}> note", [("filter_note", "<N{s}>")], "<O{s}>"),
    "GP_I": ("the <I{s}> in the <GP{s}> of the scene",
             [("filter_instrument", "<I{s}>"), ("filter_global_position", "<GP{s}>")], "unique"),
    "GP_BL": ("the <B{s}> <L{s}> sound in the <GP{s}> of the scene",
              [("filter_brightness", "<B{s}>"), ("filter_loudness", "<L{s}>"),
               ("filter_global_position", "<GP{s}>")], "unique"),
    "BLN": ("the <L{s}> <B{s}> <N{s}> note",
            [("filter_loudness", "<L{s}>"), ("filter_brightness", "<B{s}>"),
             ("filter_note", "<N{s}>")], "unique"),
    "BN": ("the <B{s}> <N{s}> note",
           [("filter_brightness", "<B{s}>"), ("filter_note", "<N{s}>")], "unique"),
    "IN": ("the <I{s}> playing a <N{s}> note",
           [("filter_instrument", "<I{s}>"), ("filter_note", "<N{s}>")], "unique"),
    "ILN": ("the <I{s}> playing a <L{s}> <N{s}> note",
            [("filter_instrument", "<I{s}>"), ("filter_loudness", "<L{s}>"),
             ("filter_note", "<N{s}>")], "unique"),
    "LI": ("the <L{s}> <I{s}>",
           [("filter_instrument", "<I{s}>"), ("filter_loudness", "<L{s}>")], "unique"),
}

# relation targets: what is selected among the sounds before/after the reference
_TARGETS = {
    "I": ("<I2>", [("filter_instrument", "<I2>")]),
    "N": ("<N2> note", [("filter_note", "<N2>")]),
    "L": ("<L2> sound", [("filter_loudness", "<L2>")]),
    "S": ("sound", []),
}


def _ref(p, name, suffix=""):
    """Build a reference phrase; returns (text, event node)."""
    text, filters, selector = _REFS[name]
    src = p.add("scene")
    src = _filters(p, src, [(op, a.format(s=suffix)) for op, a in filters])
    if selector == "unique":
        return text.format(s=suffix), p.add("unique", None, src)
    return text.format(s=suffix), p.add("nth", selector.format(s=suffix), src)


def _related(p, ref_name, target):
    """'<target> <REL> <ref>' resolved to a single event."""
    ref_text, anchor = _ref(p, ref_name)
    target_text, filters = _TARGETS[target]
    src = p.add("relate_<REL>", None, anchor)
    src = _filters(p, src, filters)
    return target_text, ref_text, p.add("unique", None, src)


_QUERY = {
    "note": "query_note", "instrument": "query_instrument",
    "brightness": "query_brightness", "loudness": "query_loudness",
    "absolute_position": "query_absolute_position",
    "global_position": "query_global_position",
}


def _query_templates(qtype, plain, related):
    out = []
    for pattern, ref in plain:
        p = _Prog()
        text, ev = _ref(p, ref)
        p.add(_QUERY[qtype], None, ev)
        out.append((qtype, pattern.format(ref=text), p.nodes, {}))
    for pattern, ref, target in related:
        p = _Prog()
        ttext, rtext, ev = _related(p, ref, target)
        p.add(_QUERY[qtype], None, ev)
        out.append((qtype, pattern.format(target=ttext, ref=rtext), p.nodes, {}))
    return out


def _set_program(filters, relate_ref=None):
    """Program prefix yielding a filtered set, optionally restricted before/after a reference."""
    p = _Prog()
    if relate_ref is None:
        src = p.add("scene")
    else:
        _, anchor = _ref(p, relate_ref)
        src = p.add("relate_<REL>", None, anchor)
    return p, _filters(p, src, filters)


def _builtin_specs():
    specs = []
    specs += _query_templates("note", [
        ("What is the note played by {ref}?", "O_I"),
        ("What is the note of {ref}?", "O_S"),
        ("What note is played by {ref}?", "GP_I"),
        ("What is the note played by {ref}?", "O_B"),
        ("What note does {ref} play?", "O_L"),
    ], [
        ("What is the note played by the {target} that is <REL> {ref}?", "BLN", "I"),
        ("What is the note of the {target} playing <REL> {ref}?", "O_I", "I"),
        ("What is the note of the {target} playing <REL> {ref}?", "O_I", "S"),
    ])
    specs += _query_templates("instrument", [
        ("What instrument plays {ref}?", "O_S"),
        ("What instrument plays a <B> <L> sound in the <GP> of the scene?", "GP_BL"),
        ("What instrument plays {ref}?", "O_N"),
        ("What instrument plays {ref}?", "O_B"),
    ], [
        ("What instrument plays the {target} <REL> {ref}?", "O_I", "N"),
        ("What instrument is playing the {target} <REL> {ref}?", "BLN", "S"),
        ("What instrument plays the {target} <REL> {ref}?", "O_S", "L"),
    ])
    specs += _query_templates("brightness", [
        ("What is the brightness of {ref} sound?", "O_I"),
        ("What is the brightness of {ref}?", "O_S"),
        ("What is the brightness of {ref}?", "GP_I"),
        ("What is the brightness of {ref}?", "O_N"),
    ], [
        ("What is the brightness of the {target} playing <REL> {ref}?", "O_I", "I"),
        ("What is the brightness of the {target} <REL> {ref}?", "O_L", "N"),
        ("What is the brightness of the {target} playing <REL> {ref}?", "IN", "S"),
    ])
    specs += _query_templates("loudness", [
        ("What is the loudness of {ref} sound?", "O_I"),
        ("What is the loudness of {ref}?", "O_S"),
        ("What is the loudness of {ref}?", "GP_I"),
        ("What is the loudness of {ref}?", "O_N"),
    ], [
        ("What is the loudness of the {target} playing <REL> {ref}?", "O_I", "I"),
        ("What is the loudness of the {target} <REL> {ref}?", "O_B", "N"),
        ("What is the loudness of the {target} playing <REL> {ref}?", "IN", "S"),
    ])
    specs += _query_templates("absolute_position", [
        ("What is the position of {ref} in the scene?", "O_I"),
        ("What is the position of {ref} in the scene?", "BLN"),
        ("What is the position of {ref}?", "IN"),
        ("What is the position of {ref}?", "GP_I"),
        ("What is the position of {ref}?", "O_B"),
    ], [
        ("What is the position of the {target} playing <REL> {ref}?", "BN", "N"),
        ("What is the position of the {target} playing <REL> {ref}?", "O_L", "I"),
    ])
    specs += _query_templates("global_position", [
        ("In what part of the scene is {ref}?", "ILN"),
        ("In what part of the scene is {ref}?", "O_I"),
        ("In what part of the scene is {ref}?", "BLN"),
        ("In what part of the scene is {ref}?", "O_S"),
    ], [
        ("In what part of the scene is the {target} playing <REL> {ref}?", "O_I", "I"),
        ("In what part of the scene is the {target} <REL> {ref}?", "BLN", "N"),
    ])

    # relative position: ordinal of the unique match within a filtered context
    rel_specs = [
        ("Among the <I> sounds which one is a <N>?", [("filter_instrument", "<I>")], [("filter_note", "<N>")]),
        ("Among the <I> sounds which one is <B>?", [("filter_instrument", "<I>")], [("filter_brightness", "<B>")]),
        ("Among the <I> sounds which one is <L>?", [("filter_instrument", "<I>")], [("filter_loudness", "<L>")]),
        ("Among the <B> sounds which one is played by a <I>?", [("filter_brightness", "<B>")], [("filter_instrument", "<I>")]),
        ("Among the <L> sounds which one is a <N>?", [("filter_loudness", "<L>")], [("filter_note", "<N>")]),
        ("Among the <N> notes which one is played by a <I>?", [("filter_note", "<N>")], [("filter_instrument", "<I>")]),
        ("Among the <B> <I> sounds which one is <L>?",
         [("filter_brightness", "<B>"), ("filter_instrument", "<I>")], [("filter_loudness", "<L>")]),
    ]
    for text, ctx_filters, target_filters in rel_specs:
        p, ctx = _set_program(ctx_filters)
        src = _filters(p, ctx, target_filters)
        ev = p.add("unique", None, src)
        p.add("query_relative_position", None, ev, ctx)
        specs.append(("relative_position", text, p.nodes, {}))

    count_specs = [
        ("How many sounds are in the scene?", [], None),
        ("How many <I> sounds are there?", [("filter_instrument", "<I>")], None),
        ("How many <B> <L> sounds are there?", [("filter_brightness", "<B>"), ("filter_loudness", "<L>")], None),
        ("How many <I> sounds are in the <GP> of the scene?",
         [("filter_instrument", "<I>"), ("filter_global_position", "<GP>")], None),
        ("How many sounds are playing <REL> {ref}?", [], "O_I"),
        ("How many <B2> sounds are playing <REL> {ref}?", [("filter_brightness", "<B2>")], "O_S"),
        ("How many <N2> notes are played <REL> {ref}?", [("filter_note", "<N2>")], "LI"),
    ]
    for qtype, terminal, prefix in (("count", "count", ""),
                                    ("count_instruments", "count_distinct_instruments", None)):
        if qtype == "count":
            chosen = count_specs
        else:
            chosen = [
                ("How many different instruments are playing <REL> {ref}?", [], "O_I"),
                ("How many different instruments are in the scene?", [], None),
                ("How many different instruments play <B> sounds?", [("filter_brightness", "<B>")], None),
                ("How many different instruments play in the <GP> of the scene?",
                 [("filter_global_position", "<GP>")], None),
                ("How many different instruments play a <N> note?", [("filter_note", "<N>")], None),
                ("How many different instruments play <L2> sounds <REL> {ref}?",
                 [("filter_loudness", "<L2>")], "O_S"),
            ]
        for text, filters, ref in chosen:
            p, src = _set_program(filters, ref)
            p.add(terminal, None, src)
            if ref is not None:
                text = text.format(ref=_REFS[ref][0].format(s=""))
            specs.append((qtype, text, p.nodes, {}))

    exist_specs = [
        ("Is there a <I> playing a <B> <N> note?",
         [("filter_instrument", "<I>"), ("filter_brightness", "<B>"), ("filter_note", "<N>")], None),
        ("Is there a <L> <I> sound?", [("filter_loudness", "<L>"), ("filter_instrument", "<I>")], None),
        ("Is there a <I> in the <GP> of the scene?",
         [("filter_instrument", "<I>"), ("filter_global_position", "<GP>")], None),
        ("Is there a <I2> playing <REL> {ref}?", [("filter_instrument", "<I2>")], "O_I"),
        ("Is there a <B2> sound <REL> {ref}?", [("filter_brightness", "<B2>")], "BLN"),
        ("Is there a <N2> note <REL> {ref}?", [("filter_note", "<N2>")], "O_S"),
    ]
    for text, filters, ref in exist_specs:
        p, src = _set_program(filters, ref)
        p.add("exist", None, src)
        if ref is not None:
            text = text.format(ref=_REFS[ref][0].format(s=""))
        specs.append(("exist", text, p.nodes, {}))

    compare_specs = [
        ("Is there an equal number of <L> <I> sounds and <L2> <I2> sounds?", "compare_equal",
         [("filter_loudness", "<L>"), ("filter_instrument", "<I>")],
         [("filter_loudness", "<L2>"), ("filter_instrument", "<I2>")], {"distinct": [["<I>", "<I2>"]]}),
        ("Are there more <I> sounds than <I2> sounds?", "compare_more",
         [("filter_instrument", "<I>")], [("filter_instrument", "<I2>")], {"distinct": [["<I>", "<I2>"]]}),
        ("Are there fewer <I> sounds than <I2> sounds?", "compare_fewer",
         [("filter_instrument", "<I>")], [("filter_instrument", "<I2>")], {"distinct": [["<I>", "<I2>"]]}),
        ("Are there more <B> sounds than <L> sounds?", "compare_more",
         [("filter_brightness", "<B>")], [("filter_loudness", "<L>")], {}),
        ("Is there an equal number of <N> notes and <N2> notes?", "compare_equal",
         [("filter_note", "<N>")], [("filter_note", "<N2>")], {"distinct": [["<N>", "<N2>"]]}),
        ("Are there fewer <B> <I> sounds than <B2> <I2> sounds?", "compare_fewer",
         [("filter_brightness", "<B>"), ("filter_instrument", "<I>")],
         [("filter_brightness", "<B2>"), ("filter_instrument", "<I2>")], {"distinct": [["<I>", "<I2>"]]}),
        ("Are there more sounds in the <GP> of the scene than in the <GP2> of the scene?", "compare_more",
         [("filter_global_position", "<GP>")], [("filter_global_position", "<GP2>")],
         {"distinct": [["<GP>", "<GP2>"]]}),
    ]
    for text, op, left, right, constraints in compare_specs:
        p = _Prog()
        a = _filters(p, p.add("scene"), left)
        ca = p.add("count", None, a)
        b = _filters(p, p.add("scene"), right)
        cb = p.add("count", None, b)
        p.add(op, None, ca, cb)
        specs.append(("count_compare", text, p.nodes, constraints))
    return specs


def builtin_templates() -> list:
    counters = {}
    out = []
    for qtype, text, nodes, constraints in _builtin_specs():
        counters[qtype] = counters.get(qtype, 0) + 1
        t = Template(f"{qtype}_{counters[qtype]:02d}", qtype, text, tuple(nodes), constraints)
        t.validate()
        out.append(t)
    return out
