"""Question language front end: typed symbolic programs, a recursive-descent
parser over the templated English, and a canonical renderer.

The grammar is the single source of truth for text <-> program. Question
generation renders through it, so every emitted string parses back to the
exact program it came from. Object descriptors compose property adjectives,
appearance adjectives and a shape noun in one fixed order:

    [heavy|light] [charged|uncharged] [moving|stationary]
    [color] [metal|rubber] (cube|sphere|cylinder|object)

Programs are chains of ops; pairwise ops (charge relations, event
participant restriction) carry a branch sub-chain that resolves the second
object.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable

from physqa.propgraph import COLORS, MATERIALS, SHAPES

# Value sorts.
OBJSET = "objset"
EVTSET = "evtset"
OBJ = "obj"
INT = "int"
BOOL = "bool"
TOKEN = "token"
WORLD = "world"

MASS_WORDS = ("heavy", "light")
CHARGE_WORDS = ("charged", "uncharged")
MOTION_WORDS = ("moving", "stationary")
NOUNS = SHAPES + ("object",)
PLURALS = {n: n + "s" for n in NOUNS}
SINGULAR = {v: k for k, v in PLURALS.items()}

CONDITIONS = {
    "heavier": "counterfact_heavier",
    "lighter": "counterfact_lighter",
    "uncharged": "counterfact_uncharged",
    "opposite": "counterfact_opposite",
}
CONDITION_TEXT = {
    "counterfact_heavier": "were heavier",
    "counterfact_lighter": "were lighter",
    "counterfact_uncharged": "were uncharged",
    "counterfact_opposite": "carried the opposite charge",
}


class ParseError(ValueError):
    pass


class TypecheckError(ValueError):
    pass


@dataclass(frozen=True)
class Op:
    name: str
    args: tuple = ()
    branch: "Program | None" = None

    def to_dict(self) -> dict:
        out: dict = {"op": self.name}
        if self.args:
            out["args"] = list(self.args)
        if self.branch is not None:
            out["branch"] = self.branch.to_list()
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "Op":
        branch = Program.from_list(raw["branch"]) if "branch" in raw else None
        return cls(raw["op"], tuple(raw.get("args", ())), branch)


@dataclass(frozen=True)
class Program:
    ops: tuple[Op, ...]

    def to_list(self) -> list[dict]:
        return [op.to_dict() for op in self.ops]

    @classmethod
    def from_list(cls, raw: Iterable[dict]) -> "Program":
        return cls(tuple(Op.from_dict(r) for r in raw))

    def to_json(self) -> str:
        return json.dumps(self.to_list())

    @classmethod
    def from_json(cls, text: str) -> "Program":
        return cls.from_list(json.loads(text))


def chain(*parts) -> Program:
    ops: list[Op] = []
    for p in parts:
        if isinstance(p, Op):
            ops.append(p)
        elif isinstance(p, Program):
            ops.extend(p.ops)
        else:
            ops.extend(p)
    return Program(tuple(ops))


# ---------------------------------------------------------------------------
# Descriptors


@dataclass(frozen=True)
class Descriptor:
    """A noun phrase picking out objects by properties and appearance."""

    mass: str | None = None
    charge: str | None = None
    motion: str | None = None
    color: str | None = None
    material: str | None = None
    shape: str | None = None

    def ops(self) -> tuple[Op, ...]:
        out = [Op("objects")]
        if self.mass:
            out.append(Op("filter_mass", (self.mass,)))
        if self.charge:
            out.append(Op("filter_charged" if self.charge == "charged" else "filter_uncharged"))
        if self.motion:
            name = "filter_moving" if self.motion == "moving" else "filter_stationary"
            out.append(Op(name, ("end",)))
        if self.color:
            out.append(Op("filter_color", (self.color,)))
        if self.material:
            out.append(Op("filter_material", (self.material,)))
        if self.shape:
            out.append(Op("filter_shape", (self.shape,)))
        return tuple(out)

    def words(self, plural: bool = False) -> str:
        parts = [
            w
            for w in (self.mass, self.charge, self.motion, self.color, self.material)
            if w
        ]
        noun = self.shape or "object"
        parts.append(PLURALS[noun] if plural else noun)
        return " ".join(parts)

    @property
    def is_empty(self) -> bool:
        return self == Descriptor()


def descriptor_from_ops(ops: tuple[Op, ...]) -> Descriptor:
    """Inverse of Descriptor.ops; raises when the chain is not a canonical
    descriptor."""
    if not ops or ops[0].name != "objects":
        raise TypecheckError("descriptor chain must start with objects")
    fields = {}
    order = []
    for op in ops[1:]:
        if op.name == "filter_mass":
            fields["mass"] = op.args[0]
            order.append("mass")
        elif op.name == "filter_charged":
            fields["charge"] = "charged"
            order.append("charge")
        elif op.name == "filter_uncharged":
            fields["charge"] = "uncharged"
            order.append("charge")
        elif op.name in ("filter_moving", "filter_stationary"):
            fields["motion"] = "moving" if op.name == "filter_moving" else "stationary"
            order.append("motion")
        elif op.name == "filter_color":
            fields["color"] = op.args[0]
            order.append("color")
        elif op.name == "filter_material":
            fields["material"] = op.args[0]
            order.append("material")
        elif op.name == "filter_shape":
            fields["shape"] = op.args[0]
            order.append("shape")
        else:
            raise TypecheckError(f"not a descriptor op: {op.name}")
    canonical = ["mass", "charge", "motion", "color", "material", "shape"]
    if order != [c for c in canonical if c in order] or len(set(order)) != len(order):
        raise TypecheckError("descriptor filters out of canonical order")
    return Descriptor(**fields)


# ---------------------------------------------------------------------------
# Typechecking

_FILTER_OBJ = {
    "filter_mass": MASS_WORDS,
    "filter_color": COLORS,
    "filter_material": MATERIALS,
    "filter_shape": SHAPES,
    "filter_moving": ("start", "end", "any"),
    "filter_stationary": ("start", "end", "any"),
}


def _sig_table() -> dict[str, dict]:
    sig: dict[str, dict] = {}
    for name in ("objects",):
        sig[name] = {"in": None, "out": OBJSET}
    for name in ("events", "unseen_events"):
        sig[name] = {"in": None, "out": EVTSET}
    for name, allowed in _FILTER_OBJ.items():
        sig[name] = {"in": OBJSET, "out": OBJSET, "args": (allowed,)}
    for name in ("filter_charged", "filter_uncharged"):
        sig[name] = {"in": OBJSET, "out": OBJSET}
    for name in ("filter_same", "filter_opposite"):
        sig[name] = {"in": OBJSET, "out": OBJSET, "branch": (OBJ,)}
    for name in ("filter_collision", "filter_in", "filter_out"):
        sig[name] = {"in": EVTSET, "out": EVTSET}
    sig["filter_participant"] = {"in": EVTSET, "out": EVTSET, "branch": (OBJ, OBJSET)}
    sig["unique"] = {"in": OBJSET, "out": OBJ}
    sig["count"] = {"in": (OBJSET, EVTSET), "out": INT}
    sig["exist"] = {"in": (OBJSET, EVTSET), "out": BOOL}
    sig["negate"] = {"in": BOOL, "out": BOOL}
    for name in ("query_color", "query_shape", "query_material", "query_mass"):
        sig[name] = {"in": OBJ, "out": TOKEN}
    sig["query_charged"] = {"in": OBJ, "out": BOOL}
    sig["query_charge_relation"] = {
        "in": OBJ,
        "out": BOOL,
        "args": (("same", "opposite"),),
        "branch": (OBJ,),
    }
    for name in CONDITION_TEXT:
        sig[name] = {"in": OBJ, "out": WORLD}
    return sig


SIGNATURES = _sig_table()
OPCODES = tuple(sorted(SIGNATURES))


def typecheck(p: Program) -> str:
    """Verify sorts along the chain; returns the program's output sort."""
    if not p.ops:
        raise TypecheckError("empty program")
    current = None
    for idx, op in enumerate(p.ops):
        sig = SIGNATURES.get(op.name)
        if sig is None:
            raise TypecheckError(f"unknown opcode {op.name!r} at index {idx}")
        want = sig["in"]
        if want is None:
            if idx != 0:
                raise TypecheckError(f"source opcode {op.name} at index {idx} must come first")
        else:
            allowed = want if isinstance(want, tuple) else (want,)
            if current not in allowed:
                raise TypecheckError(
                    f"sort mismatch at index {idx}: {op.name} expects {allowed}, got {current}"
                )
        arg_spec = sig.get("args", ())
        if len(op.args) != len(arg_spec):
            raise TypecheckError(f"{op.name} at index {idx} takes {len(arg_spec)} args")
        for val, allowed_vals in zip(op.args, arg_spec):
            if val not in allowed_vals:
                raise TypecheckError(f"bad argument {val!r} for {op.name} at index {idx}")
        if "branch" in sig:
            if op.branch is None:
                raise TypecheckError(f"{op.name} at index {idx} needs a branch")
            branch_sort = typecheck(op.branch)
            if branch_sort not in sig["branch"]:
                raise TypecheckError(
                    f"branch of {op.name} at index {idx} must yield {sig['branch']}, got {branch_sort}"
                )
        elif op.branch is not None:
            raise TypecheckError(f"{op.name} at index {idx} takes no branch")
        current = sig["out"]
    return current


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(r"[a-z]+|\?")


class _Tokens:
    def __init__(self, text: str):
        self.text = text
        self.items = [(m.group(0), m.start()) for m in _TOKEN_RE.finditer(text.lower())]
        self.pos = 0

    def peek(self, ahead: int = 0) -> str | None:
        k = self.pos + ahead
        return self.items[k][0] if k < len(self.items) else None

    def offset(self) -> int:
        if self.pos < len(self.items):
            return self.items[self.pos][1]
        return len(self.text)

    def next(self) -> str | None:
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, *words: str) -> str:
        tok = self.peek()
        if tok not in words:
            raise ParseError(
                f"unparseable at offset {self.offset()}: expected {'/'.join(words)}, got {tok!r}"
            )
        self.pos += 1
        return tok

    def done(self) -> bool:
        return self.pos >= len(self.items)


def _parse_descriptor(t: _Tokens) -> tuple[Descriptor, bool]:
    """Parse adjectives and a noun; returns the descriptor and whether the
    noun was plural."""
    fields: dict[str, str] = {}

    def take(slot: str, words: tuple[str, ...]) -> None:
        if t.peek() in words and slot not in fields:
            # A property word directly before a noun is an adjective; one
            # before '?' or 'or' belongs to the surrounding template.
            fields[slot] = t.next()

    take("mass", MASS_WORDS)
    take("charge", CHARGE_WORDS)
    take("motion", MOTION_WORDS)
    take("color", COLORS)
    take("material", MATERIALS)
    noun = t.peek()
    if noun in NOUNS:
        t.next()
        plural = False
    elif noun in SINGULAR:
        t.next()
        noun = SINGULAR[noun]
        plural = True
    else:
        raise ParseError(f"unparseable at offset {t.offset()}: expected a noun, got {noun!r}")
    if noun != "object":
        fields["shape"] = noun
    return Descriptor(**fields), plural


def _unique_chain(d: Descriptor) -> Program:
    return chain(d.ops(), Op("unique"))


def _event_program(kind: str, participants: list[Descriptor]) -> Program:
    ops: list[Op] = [Op("events"), Op(f"filter_{kind}")]
    for d in participants:
        ops.append(Op("filter_participant", (), _unique_chain(d)))
    ops.append(Op("exist"))
    return Program(tuple(ops))


def parse(text: str) -> Program:
    """Parse one question or choice sentence into its program. Raises
    ParseError with the character offset on any non-template input."""
    t = _Tokens(text)
    first = t.peek()
    if first == "what":
        t.next()
        t.expect("is")
        t.expect("the")
        attr = t.expect("color", "shape", "material")
        t.expect("of")
        t.expect("the")
        d, _ = _parse_descriptor(t)
        t.expect("?")
        prog = chain(_unique_chain(d), Op(f"query_{attr}"))
    elif first == "is":
        t.next()
        t.expect("the")
        d, _ = _parse_descriptor(t)
        word = t.expect("heavy", "charged")
        if word == "heavy":
            t.expect("or")
            t.expect("light")
            tail = Op("query_mass")
        else:
            tail = Op("query_charged")
        t.expect("?")
        prog = chain(_unique_chain(d), tail)
    elif first == "are":
        t.next()
        nxt = t.expect("the", "there")
        if nxt == "there":
            t.expect("any")
            d, _ = _parse_descriptor(t)
            t.expect("?")
            prog = chain(d.ops(), Op("exist"))
        else:
            d1, _ = _parse_descriptor(t)
            t.expect("and")
            t.expect("the")
            d2, _ = _parse_descriptor(t)
            t.expect("carrying")
            word = t.expect("the", "opposite")
            if word == "the":
                t.expect("same")
                rel = "same"
            else:
                rel = "opposite"
            t.expect("charge" if rel == "same" else "charges")
            t.expect("?")
            prog = chain(
                _unique_chain(d1), Op("query_charge_relation", (rel,), _unique_chain(d2))
            )
    elif first == "how":
        t.next()
        t.expect("many")
        d, _ = _parse_descriptor(t)
        t.expect("are")
        t.expect("there")
        t.expect("?")
        prog = chain(d.ops(), Op("count"))
    elif first == "does":
        t.next()
        nxt = t.expect("the", "any")
        if nxt == "any":
            t.expect("object")
            verb = t.expect("enter", "leave")
            t.expect("the")
            t.expect("scene")
            t.expect("?")
            prog = _event_program("in" if verb == "enter" else "out", [])
        else:
            d1, _ = _parse_descriptor(t)
            verb = t.expect("collide", "enter", "leave")
            if verb == "collide":
                t.expect("with")
                t.expect("the")
                d2, _ = _parse_descriptor(t)
                t.expect("?")
                prog = _event_program("collision", [d1, d2])
            else:
                t.expect("the")
                t.expect("scene")
                t.expect("?")
                prog = _event_program("in" if verb == "enter" else "out", [d1])
    elif first == "which":
        t.next()
        t.expect("of")
        t.expect("the")
        t.expect("following")
        word = t.expect("would", "will")
        t.expect("happen")
        if word == "will":
            t.expect("next")
            t.expect("?")
            prog = Program((Op("unseen_events"),))
        else:
            t.expect("if")
            t.expect("the")
            d, _ = _parse_descriptor(t)
            nxt = t.expect("were", "carried")
            if nxt == "were":
                cond = t.expect("heavier", "lighter", "uncharged")
            else:
                t.expect("the")
                t.expect("opposite")
                t.expect("charge")
                cond = "opposite"
            t.expect("?")
            prog = chain(_unique_chain(d), Op(CONDITIONS[cond]))
    elif first == "the":
        # Declarative choice clause.
        t.next()
        d1, _ = _parse_descriptor(t)
        nxt = t.expect("and", "enters", "leaves")
        if nxt == "and":
            t.expect("the")
            d2, _ = _parse_descriptor(t)
            t.expect("collide")
            prog = _event_program("collision", [d1, d2])
        else:
            t.expect("the")
            t.expect("scene")
            prog = _event_program("in" if nxt == "enters" else "out", [d1])
    else:
        raise ParseError(f"unparseable at offset {t.offset()}: unexpected {first!r}")
    if not t.done():
        raise ParseError(f"unparseable at offset {t.offset()}: trailing input")
    typecheck(prog)
    return prog


# ---------------------------------------------------------------------------
# Rendering


def _descriptor_of_chain(ops: tuple[Op, ...]) -> Descriptor:
    if ops and ops[-1].name == "unique":
        ops = ops[:-1]
    return descriptor_from_ops(ops)


def _sentence(text: str) -> str:
    return text[0].upper() + text[1:]


def _render_event_clause(p: Program, declarative: bool) -> str:
    kind = p.ops[1].name.removeprefix("filter_")
    participants = [
        _descriptor_of_chain(op.branch.ops)
        for op in p.ops
        if op.name == "filter_participant"
    ]
    if kind == "collision":
        d1, d2 = participants
        if declarative:
            return f"the {d1.words()} and the {d2.words()} collide"
        return f"does the {d1.words()} collide with the {d2.words()}?"
    verb_q, verb_d = ("enter", "enters") if kind == "in" else ("leave", "leaves")
    if participants:
        (d,) = participants
        if declarative:
            return f"the {d.words()} {verb_d} the scene"
        return f"does the {d.words()} {verb_q} the scene?"
    if declarative:
        raise TypecheckError("unrestricted event clause has no declarative form")
    return f"does any object {verb_q} the scene?"


def render(p: Program, declarative: bool = False) -> str:
    """Canonical English for a program. ``declarative`` selects the choice
    clause form for event-existence programs ("The X and the Y collide")."""
    out = typecheck(p)
    last = p.ops[-1]
    if last.name in ("query_color", "query_shape", "query_material"):
        d = _descriptor_of_chain(p.ops[:-1])
        attr = last.name.removeprefix("query_")
        return _sentence(f"what is the {attr} of the {d.words()}?")
    if last.name == "query_mass":
        d = _descriptor_of_chain(p.ops[:-1])
        return _sentence(f"is the {d.words()} heavy or light?")
    if last.name == "query_charged":
        d = _descriptor_of_chain(p.ops[:-1])
        return _sentence(f"is the {d.words()} charged?")
    if last.name == "query_charge_relation":
        d1 = _descriptor_of_chain(p.ops[:-1])
        d2 = _descriptor_of_chain(last.branch.ops)
        rel = last.args[0]
        tail = "carrying the same charge" if rel == "same" else "carrying opposite charges"
        return _sentence(f"are the {d1.words()} and the {d2.words()} {tail}?")
    if last.name == "count":
        d = _descriptor_of_chain(p.ops[:-1])
        return _sentence(f"how many {d.words(plural=True)} are there?")
    if last.name == "exist" and p.ops[0].name == "objects":
        d = _descriptor_of_chain(p.ops[:-1])
        return _sentence(f"are there any {d.words(plural=True)}?")
    if last.name == "exist" and p.ops[0].name == "events":
        return _sentence(_render_event_clause(p, declarative))
    if last.name in CONDITION_TEXT:
        d = _descriptor_of_chain(p.ops[:-1])
        cond = CONDITION_TEXT[last.name]
        return _sentence(f"which of the following would happen if the {d.words()} {cond}?")
    if last.name == "unseen_events" and len(p.ops) == 1:
        return "Which of the following will happen next?"
    raise TypecheckError(f"program with output sort {out} has no rendering")
