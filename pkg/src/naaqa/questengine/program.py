"""Functional programs over scenes and the reference executor (answer oracle)."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..scenegen import GLOBAL_POSITIONS, SceneSpec
from ..soundbank import INSTRUMENTS, NOTES

ORDINALS = ("first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth",
            "ninth", "tenth", "eleventh", "twelfth", "thirteenth", "fourteenth", "fifteenth")
BRIGHTNESS = ("bright", "dark")
LOUDNESS = ("loud", "quiet")
COUNTS = tuple(str(k) for k in range(16))
YES_NO = ("yes", "no")

QUESTION_TYPES = ("instrument", "note", "brightness", "loudness", "exist",
                  "absolute_position", "global_position", "relative_position",
                  "count", "count_compare", "count_instruments")

ANSWER_SETS = {
    "note": NOTES,
    "instrument": INSTRUMENTS,
    "brightness": BRIGHTNESS,
    "loudness": LOUDNESS,
    "absolute_position": ORDINALS,
    "relative_position": ORDINALS,
    "global_position": GLOBAL_POSITIONS,
    "count": COUNTS,
    "count_instruments": COUNTS,
    "exist": YES_NO,
    "count_compare": YES_NO,
}

# fixed order; defines model output indices
LABELS = tuple(dict.fromkeys(
    NOTES + INSTRUMENTS + BRIGHTNESS + LOUDNESS + ORDINALS + GLOBAL_POSITIONS + COUNTS + YES_NO))

SET, EVENT, INT, ANSWER = "set", "event", "int", "answer"

# op -> (input kinds, output kind)
OP_SIGNATURES = {
    "scene": ((), SET),
    "filter_instrument": ((SET,), SET),
    "filter_note": ((SET,), SET),
    "filter_brightness": ((SET,), SET),
    "filter_loudness": ((SET,), SET),
    "filter_global_position": ((SET,), SET),
    "relate_before": ((EVENT,), SET),
    "relate_after": ((EVENT,), SET),
    "nth": ((SET,), EVENT),
    "unique": ((SET,), EVENT),
    "query_instrument": ((EVENT,), ANSWER),
    "query_note": ((EVENT,), ANSWER),
    "query_brightness": ((EVENT,), ANSWER),
    "query_loudness": ((EVENT,), ANSWER),
    "query_absolute_position": ((EVENT,), ANSWER),
    "query_relative_position": ((EVENT, SET), ANSWER),
    "query_global_position": ((EVENT,), ANSWER),
    "count": ((SET,), INT),
    "count_distinct_instruments": ((SET,), INT),
    "exist": ((SET,), ANSWER),
    "compare_equal": ((INT, INT), ANSWER),
    "compare_more": ((INT, INT), ANSWER),
    "compare_fewer": ((INT, INT), ANSWER),
}

FILTER_ATTRS = {
    "filter_instrument": "instrument",
    "filter_note": "note",
    "filter_brightness": "brightness_label",
    "filter_loudness": "loudness_label",
    "filter_global_position": "global_position",
}
QUERY_ATTRS = {
    "query_instrument": "instrument",
    "query_note": "note",
    "query_brightness": "brightness_label",
    "query_loudness": "loudness_label",
    "query_global_position": "global_position",
}
RELATE_OPS = ("relate_before", "relate_after")


class ProgramError(ValueError):
    """Structurally invalid program."""


class IllPosed(Exception):
    """The program has no well-defined answer on this scene."""


@dataclass(frozen=True)
class Node:
    op: str
    arg: object = None
    inputs: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {"op": self.op, "arg": self.arg, "inputs": list(self.inputs)}

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        return cls(d["op"], d.get("arg"), tuple(d.get("inputs", ())))


def program_from_dicts(rows) -> list:
    return [Node.from_dict(r) for r in rows]


def has_temporal_relation(program) -> bool:
    return any(n.op in RELATE_OPS for n in program)


def validate_program(program) -> None:
    if not program:
        raise ProgramError("empty program")
    kinds = []
    consumed = set()
    for i, node in enumerate(program):
        if node.op not in OP_SIGNATURES:
            raise ProgramError(f"node {i}: unknown op {node.op!r}")
        want, out = OP_SIGNATURES[node.op]
        if len(node.inputs) != len(want):
            raise ProgramError(f"node {i} ({node.op}) takes {len(want)} inputs")
        for j, w in zip(node.inputs, want):
            if not 0 <= j < i:
                raise ProgramError(f"node {i}: input {j} is not a predecessor")
            got = kinds[j]
            if got != w and not (w == EVENT and got == SET):
                raise ProgramError(f"node {i} ({node.op}) expects {w}, got {got}")
            consumed.add(j)
        kinds.append(out)
    terminals = [i for i in range(len(program)) if i not in consumed]
    if terminals != [len(program) - 1]:
        raise ProgramError(f"program must have a single terminal node, found {terminals}")
    if kinds[-1] not in (ANSWER, INT):
        raise ProgramError("terminal node must produce an answer")


@dataclass(frozen=True)
class _One:
    index: int


def _single(value) -> int:
    if isinstance(value, _One):
        return value.index
    if len(value) != 1:
        raise IllPosed(f"expected a single sound, got {len(value)}")
    return value[0]


def execute(program, scene: SceneSpec) -> str:
    """Run ``program`` on ``scene`` and return the answer label.

    Sets are tuples of event indices in onset order. Raises ``IllPosed``.
    """
    events = scene.events
    values = []
    for node in program:
        ins = [values[j] for j in node.inputs]
        op = node.op
        if op == "scene":
            v = tuple(range(len(events)))
        elif op in FILTER_ATTRS:
            attr = FILTER_ATTRS[op]
            v = tuple(i for i in ins[0] if getattr(events[i], attr) == node.arg)
        elif op in RELATE_OPS:
            anchor = _single(ins[0])
            v = tuple(range(anchor)) if op == "relate_before" else tuple(range(anchor + 1, len(events)))
        elif op == "nth":
            k = int(node.arg)
            if not 1 <= k <= len(ins[0]):
                raise IllPosed(f"nth({k}) on a set of {len(ins[0])}")
            v = _One(ins[0][k - 1])
        elif op == "unique":
            if len(ins[0]) != 1:
                raise IllPosed(f"unique on a set of {len(ins[0])}")
            v = _One(ins[0][0])
        elif op in QUERY_ATTRS:
            v = getattr(events[_single(ins[0])], QUERY_ATTRS[op])
        elif op == "query_absolute_position":
            v = ORDINALS[events[_single(ins[0])].absolute_position - 1]
        elif op == "query_relative_position":
            target, context = _single(ins[0]), ins[1]
            if target not in context:
                raise IllPosed("event is not in its relative-position context")
            v = ORDINALS[context.index(target)]
        elif op == "count":
            v = len(ins[0])
        elif op == "count_distinct_instruments":
            v = len({events[i].instrument for i in ins[0]})
        elif op == "exist":
            v = "yes" if ins[0] else "no"
        elif op == "compare_equal":
            v = "yes" if ins[0] == ins[1] else "no"
        elif op == "compare_more":
            v = "yes" if ins[0] > ins[1] else "no"
        elif op == "compare_fewer":
            v = "yes" if ins[0] < ins[1] else "no"
        else:
            raise ProgramError(f"unknown op {op!r}")
        values.append(v)
    out = values[-1]
    return str(out) if isinstance(out, int) else out
