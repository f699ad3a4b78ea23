"""Brute-force answer oracle used to cross-check ``program.execute``.

Deliberately shares no evaluation code with the reference executor: sets are
membership masks over all events, order comes from onset times, and every
selection is found by enumerating events (or pairs of events).
"""
from __future__ import annotations

from .program import IllPosed

_ORDINAL_WORDS = ["first", "second", "third", "fourth", "fifth", "sixth", "seventh",
                  "eighth", "ninth", "tenth", "eleventh", "twelfth", "thirteenth",
                  "fourteenth", "fifteenth"]


def _attribute(event, op: str):
    table = {
        "instrument": event.instrument,
        "note": event.note,
        "brightness": event.brightness_label,
        "loudness": event.loudness_label,
        "global_position": event.global_position,
    }
    return table[op.split("_", 1)[1]]


def _pick_one(value, events):
    """Event index from an event value or a singleton mask."""
    if value[0] == "event":
        return value[1]
    members = [i for i in range(len(events)) if value[1][i]]
    distinct_pairs = [(a, b) for a in members for b in members if a != b]
    if not members or distinct_pairs:
        raise IllPosed("not a single sound")
    return members[0]


def _rank(i, mask, events):
    """1-based onset rank of event i among the members of mask."""
    return 1 + sum(1 for j in range(len(events))
                   if mask[j] and events[j].onset_s < events[i].onset_s)


def execute_naive(program, scene):
    events = scene.events
    n = len(events)
    vals = []
    for node in program:
        args = [vals[k] for k in node.inputs]
        op = node.op
        if op == "scene":
            out = ("set", [True] * n)
        elif op.startswith("filter_"):
            mask = args[0][1]
            out = ("set", [mask[i] and _attribute(events[i], op) == node.arg for i in range(n)])
        elif op == "relate_before" or op == "relate_after":
            a = _pick_one(args[0], events)
            if op == "relate_before":
                out = ("set", [events[i].onset_s < events[a].onset_s for i in range(n)])
            else:
                out = ("set", [events[i].onset_s > events[a].onset_s for i in range(n)])
        elif op == "nth":
            mask = args[0][1]
            hits = [i for i in range(n) if mask[i] and _rank(i, mask, events) == int(node.arg)]
            if len(hits) != 1:
                raise IllPosed("ordinal out of range")
            out = ("event", hits[0])
        elif op == "unique":
            out = ("event", _pick_one(args[0], events))
        elif op == "query_absolute_position":
            i = _pick_one(args[0], events)
            earlier = sum(1 for e in events if e.onset_s < events[i].onset_s)
            out = ("answer", _ORDINAL_WORDS[earlier])
        elif op == "query_relative_position":
            i = _pick_one(args[0], events)
            ctx = args[1][1]
            if not ctx[i]:
                raise IllPosed("target outside context")
            out = ("answer", _ORDINAL_WORDS[_rank(i, ctx, events) - 1])
        elif op.startswith("query_"):
            i = _pick_one(args[0], events)
            out = ("answer", _attribute(events[i], op))
        elif op == "count":
            out = ("int", sum(1 for m in args[0][1] if m))
        elif op == "count_distinct_instruments":
            mask = args[0][1]
            # count each instrument at its earliest member only
            firsts = [i for i in range(n) if mask[i] and not any(
                mask[j] and j < i and events[j].instrument == events[i].instrument
                for j in range(n))]
            out = ("int", len(firsts))
        elif op == "exist":
            out = ("answer", "yes" if any(args[0][1]) else "no")
        elif op in ("compare_equal", "compare_more", "compare_fewer"):
            a, b = args[0][1], args[1][1]
            result = {"compare_equal": a == b, "compare_more": a > b, "compare_fewer": a < b}[op]
            out = ("answer", "yes" if result else "no")
        else:
            raise ValueError(f"unknown op {op!r}")
        vals.append(out)
    kind, value = vals[-1]
    return str(value) if kind == "int" else value
