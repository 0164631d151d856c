"""Symbolic program execution over an object-centric world.

A program runs against an ExecContext holding the roster attributes, the
target trajectory, its events, a property graph (ground truth, inferred, or
scored) and a dynamics back-end. Counterfactual and predictive sources swap
the context's events for ones detected on a back-end rollout; both the
exact simulator and a learned predictor sit behind the same interface, so
execution is agnostic to which produced the dynamics.

Two modes: crisp (boolean set membership, hard failures on missing
property labels) and soft (membership scores in [0, 1]; filters multiply by
concept scores, exist takes the max, count sums, negate complements). With
all scores in {0, 1}, soft execution reduces to crisp execution exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from physqa import events as ev
from physqa import propgraph as pg
from physqa import qlang
from physqa.physics import SimConfig, Trajectory, simulate_arrays
from physqa.propgraph import PropertyGraph, StaticAttrs, reconstruct_state

MOVING_SPEED_THRESHOLD = 0.05
PREDICTIVE_HORIZON_FRAMES = 50
COUNTERFACTUAL_HORIZON_FRAMES = 125

CRISP = "crisp"
SOFT = "soft"


class NonUniqueReferenceError(ValueError):
    pass


class InsufficientEvidenceError(ValueError):
    pass


class ExecutionError(ValueError):
    pass


@dataclass
class Value:
    """Tagged execution value; object/event sets carry per-element scores."""

    kind: str  # objects | events | object | int | bool | token | world
    data: object
    score: float = 1.0


class DynamicsBackend(Protocol):
    def rollout(
        self,
        seed: Trajectory,
        masses: Sequence[float],
        coupling: np.ndarray,
        horizon: int,
    ) -> Trajectory:
        """Continue a 3-frame seed for ``horizon`` further frames; the
        returned trajectory starts with the seed frames."""


def rollout_from_seed(seed: Trajectory, masses, coupling, cfg: SimConfig, horizon: int) -> Trajectory:
    pos, vel, active = reconstruct_state(seed, seed.frame_count - 1)
    coupling = np.asarray(coupling, dtype=float).copy()
    for i in range(seed.n_objects):
        if not active[i]:
            pos[i] = (1e6 + i, 1e6)
            vel[i] = 0.0
            coupling[i, :] = 0.0
            coupling[:, i] = 0.0
    sim = simulate_arrays(
        pos,
        vel,
        seed.radii,
        np.asarray(masses, dtype=float),
        coupling,
        cfg,
        horizon + 1,
    )
    positions = np.concatenate([seed.positions, sim.positions[1:]], axis=0)
    present = np.concatenate([seed.present, sim.present[1:]], axis=0)
    vels = None
    if seed.velocities is not None and sim.velocities is not None:
        vels = np.concatenate([seed.velocities, sim.velocities[1:]], axis=0)
    return Trajectory(positions, seed.radii.copy(), present, seed.fps, vels)


class ExactBackend:
    """Re-simulates with the reference physics from a reconstructed state."""

    name = "exact"

    def __init__(self, cfg: SimConfig | None = None):
        self.cfg = cfg or SimConfig()

    def rollout(self, seed, masses, coupling, horizon):
        return rollout_from_seed(seed, masses, coupling, self.cfg, horizon)


@dataclass
class ExecContext:
    """Immutable snapshot a program executes against."""

    attrs: list[StaticAttrs]
    target: Trajectory
    references: list[Trajectory]
    events: list[ev.Event]
    graph: PropertyGraph
    backend: DynamicsBackend
    moving_threshold: float = MOVING_SPEED_THRESHOLD
    node_scores: dict[int, dict[str, float]] | None = None
    edge_scores: dict[tuple[int, int], dict[str, float]] | None = None
    _rollout_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_objects(self) -> int:
        return len(self.attrs)

    def with_events(self, events: list[ev.Event]) -> "ExecContext":
        return ExecContext(
            self.attrs,
            self.target,
            self.references,
            events,
            self.graph,
            self.backend,
            self.moving_threshold,
            self.node_scores,
            self.edge_scores,
            self._rollout_cache,
        )

    # -- property score lookups -------------------------------------------

    def mass_score(self, i: int, label: str, mode: str) -> float:
        if self.node_scores is not None:
            return float(self.node_scores[i][label])
        known = self.graph.masses.get(i, pg.UNKNOWN)
        if known == pg.UNKNOWN:
            if mode == CRISP:
                raise InsufficientEvidenceError(
                    f"insufficient evidence: mass of object {i} unknown"
                )
            return 0.5
        return 1.0 if known == label else 0.0

    def charged_score(self, i: int, mode: str) -> float:
        if self.edge_scores is not None:
            none_prob = 1.0
            for (a, b), scores in self.edge_scores.items():
                if i in (a, b):
                    none_prob *= scores[pg.NONE]
            return 1.0 - none_prob
        label = self.graph.charge_label(i)
        if label == pg.UNKNOWN:
            if mode == CRISP:
                raise InsufficientEvidenceError(
                    f"insufficient evidence: charge of object {i} unknown"
                )
            return 0.5
        return 1.0 if label == "charged" else 0.0

    def relation_score(self, i: int, j: int, rel: str, mode: str) -> float:
        if i == j:
            return 0.0
        if self.edge_scores is not None:
            return float(self.edge_scores[(min(i, j), max(i, j))][rel])
        known = self.graph.relation(i, j)
        if known == pg.UNKNOWN:
            if mode == CRISP:
                raise InsufficientEvidenceError(
                    f"insufficient evidence: relation of pair ({i},{j}) unknown"
                )
            return 1.0 / 3.0
        return 1.0 if known == rel else 0.0


def detect_context_events(
    traj: Trajectory, graph: PropertyGraph, video_id: str = ""
) -> list[ev.Event]:
    """The event list programs see: detected collisions, presence
    transitions, and charge events derived from the graph's relations via
    the interaction-radius rule. Used identically when annotating
    generated sets and when answering, so both sides agree."""
    relations = {
        pair: rel
        for pair, rel in graph.relations.items()
        if rel in (pg.SAME, pg.OPPOSITE)
    }
    out = (
        ev.detect_collisions(traj, video_id)
        + ev.detect_in_out(traj, video_id)
        + ev.charge_events_from_relations(traj, relations, video_id)
    )
    out.sort(key=lambda e: (e.frame, e.kind, e.participants))
    return out


def build_context(
    attrs: Sequence[StaticAttrs],
    target: Trajectory,
    references: Sequence[Trajectory],
    graph: PropertyGraph,
    backend: DynamicsBackend,
    node_scores=None,
    edge_scores=None,
) -> ExecContext:
    events = detect_context_events(target, graph, "target")
    return ExecContext(
        list(attrs), target, list(references), events, graph, backend,
        node_scores=node_scores, edge_scores=edge_scores,
    )


def counterfactual_graph(graph: PropertyGraph, obj: int, condition: str) -> PropertyGraph:
    """The property graph of the hypothetical world where ``obj`` has the
    altered property; every other label is untouched."""
    masses = dict(graph.masses)
    relations = dict(graph.relations)
    signs = dict(graph.signs) if graph.signs is not None else None
    if condition == "counterfact_heavier":
        masses[obj] = pg.HEAVY
    elif condition == "counterfact_lighter":
        masses[obj] = pg.LIGHT
    elif condition == "counterfact_uncharged":
        for pair in list(relations):
            if obj in pair and relations[pair] in (pg.SAME, pg.OPPOSITE):
                relations[pair] = pg.NONE
        if signs is not None:
            signs[obj] = 0
    elif condition == "counterfact_opposite":
        for pair in list(relations):
            if obj in pair:
                if relations[pair] == pg.SAME:
                    relations[pair] = pg.OPPOSITE
                elif relations[pair] == pg.OPPOSITE:
                    relations[pair] = pg.SAME
        if signs is not None:
            signs[obj] = -signs[obj]
    else:
        raise ExecutionError(f"unknown counterfactual condition {condition}")
    return PropertyGraph(masses, relations, signs)


def _speed_at(traj: Trajectory, i: int, when: str, fps: int) -> float | None:
    """Central-difference speed at the requested part of the video; None
    when the stencil frames are not all on-screen."""
    F = traj.frame_count
    dt = 1.0 / fps

    def central(f):
        if f - 1 < 0 or f + 1 >= F:
            return None
        if not (traj.present[f - 1, i] and traj.present[f, i] and traj.present[f + 1, i]):
            return None
        v = (traj.positions[f + 1, i] - traj.positions[f - 1, i]) / (2 * dt)
        return float(np.linalg.norm(v))

    if when == "start":
        return central(1)
    if when == "end":
        return central(F - 2)
    speeds = [s for f in range(1, F - 1) if (s := central(f)) is not None]
    return max(speeds) if speeds else None


def _predicted_events(ctx: ExecContext, graph: PropertyGraph, seed: Trajectory, horizon: int):
    masses = [graph.mass_value(i) for i in range(ctx.n_objects)]
    coupling = graph.coupling_matrix()
    rolled = ctx.backend.rollout(seed, masses, coupling, horizon)
    events = detect_context_events(rolled, graph, "predicted")
    seed_frames = seed.frame_count
    events = [e for e in events if e.frame >= seed_frames]
    return events, rolled


def _counterfactual_events(ctx: ExecContext, obj: int, condition: str):
    key = ("counterfactual", obj, condition)
    if key not in ctx._rollout_cache:
        graph = counterfactual_graph(ctx.graph, obj, condition)
        seed = ctx.target.slice_frames(0, 3)
        ctx._rollout_cache[key] = _predicted_events(
            ctx, graph, seed, COUNTERFACTUAL_HORIZON_FRAMES
        )
    return ctx._rollout_cache[key]


def _unseen_events(ctx: ExecContext):
    key = ("unseen",)
    if key not in ctx._rollout_cache:
        F = ctx.target.frame_count
        seed = ctx.target.slice_frames(F - 3, F)
        ctx._rollout_cache[key] = _predicted_events(
            ctx, ctx.graph, seed, PREDICTIVE_HORIZON_FRAMES
        )
    return ctx._rollout_cache[key]


def _execute(p: qlang.Program, ctx: ExecContext, mode: str) -> tuple[Value, ExecContext]:
    qlang.typecheck(p)
    value: Value | None = None
    for op in p.ops:
        name = op.name
        if name == "objects":
            value = Value("objects", np.ones(ctx.n_objects))
        elif name == "events":
            value = Value("events", [(e, 1.0) for e in ctx.events])
        elif name == "unseen_events":
            events, _rolled = _unseen_events(ctx)
            ctx = ctx.with_events(events)
            value = Value("events", [(e, 1.0) for e in events])
        elif name.startswith("counterfact_"):
            obj = value.data
            events, _rolled = _counterfactual_events(ctx, obj, name)
            ctx = ctx.with_events(events)
            value = Value("world", None)
        elif name in ("filter_color", "filter_shape", "filter_material"):
            attr = name.removeprefix("filter_")
            want = op.args[0]
            scores = value.data.copy()
            for i in range(ctx.n_objects):
                if getattr(ctx.attrs[i], attr) != want:
                    scores[i] = 0.0
            value = Value("objects", scores)
        elif name == "filter_mass":
            scores = value.data.copy()
            for i in range(ctx.n_objects):
                if scores[i] > 0.0:
                    scores[i] *= ctx.mass_score(i, op.args[0], mode)
            value = Value("objects", scores)
        elif name in ("filter_charged", "filter_uncharged"):
            scores = value.data.copy()
            for i in range(ctx.n_objects):
                if scores[i] > 0.0:
                    q = ctx.charged_score(i, mode)
                    scores[i] *= q if name == "filter_charged" else 1.0 - q
            value = Value("objects", scores)
        elif name in ("filter_same", "filter_opposite"):
            ref_value, _ = _execute(op.branch, ctx, mode)
            b = ref_value.data
            rel = pg.SAME if name == "filter_same" else pg.OPPOSITE
            scores = value.data.copy()
            for i in range(ctx.n_objects):
                if scores[i] > 0.0:
                    scores[i] *= ctx.relation_score(i, b, rel, mode) * ref_value.score
            value = Value("objects", scores)
        elif name in ("filter_moving", "filter_stationary"):
            scores = value.data.copy()
            for i in range(ctx.n_objects):
                if scores[i] > 0.0:
                    speed = _speed_at(ctx.target, i, op.args[0], ctx.target.fps)
                    moving = speed is not None and speed > ctx.moving_threshold
                    keep = moving if name == "filter_moving" else (
                        speed is not None and not moving
                    )
                    if not keep:
                        scores[i] = 0.0
            value = Value("objects", scores)
        elif name in ("filter_collision", "filter_in", "filter_out"):
            kind = {"filter_collision": ev.COLLISION, "filter_in": ev.IN, "filter_out": ev.OUT}[name]
            value = Value("events", [(e, s) for e, s in value.data if e.kind == kind])
        elif name == "filter_participant":
            ref_value, _ = _execute(op.branch, ctx, mode)
            if ref_value.kind == "object":
                member = np.zeros(ctx.n_objects)
                member[ref_value.data] = ref_value.score
            else:
                member = ref_value.data
            kept = []
            for e, s in value.data:
                factor = max((member[p] for p in e.participants), default=0.0)
                if factor > 0.0:
                    kept.append((e, s * factor))
            value = Value("events", kept)
        elif name == "unique":
            scores = value.data
            if mode == CRISP:
                hits = np.nonzero(scores > 0.0)[0]
                if hits.size != 1:
                    raise NonUniqueReferenceError(
                        f"non-unique reference: {hits.size} objects match"
                    )
                value = Value("object", int(hits[0]), float(scores[hits[0]]))
            else:
                idx = int(np.argmax(scores))
                value = Value("object", idx, float(scores[idx]))
        elif name == "count":
            if value.kind == "objects":
                total = float(value.data.sum())
            else:
                total = float(sum(s for _e, s in value.data))
            value = Value("int", int(round(total)) if mode == CRISP else total)
        elif name == "exist":
            if value.kind == "objects":
                best = float(value.data.max()) if value.data.size else 0.0
            else:
                best = max((s for _e, s in value.data), default=0.0)
            value = Value("bool", bool(best > 0.5) if mode == CRISP else best)
        elif name == "negate":
            if mode == CRISP:
                value = Value("bool", not value.data)
            else:
                value = Value("bool", 1.0 - value.data)
        elif name in ("query_color", "query_shape", "query_material"):
            attr = name.removeprefix("query_")
            value = Value("token", getattr(ctx.attrs[value.data], attr), value.score)
        elif name == "query_mass":
            i = value.data
            p_heavy = ctx.mass_score(i, pg.HEAVY, mode)
            if mode == CRISP:
                value = Value("token", pg.HEAVY if p_heavy > 0.5 else pg.LIGHT, value.score)
            else:
                token = pg.HEAVY if p_heavy >= 0.5 else pg.LIGHT
                value = Value("token", token, value.score * max(p_heavy, 1.0 - p_heavy))
        elif name == "query_charged":
            q = ctx.charged_score(value.data, mode)
            value = Value("bool", bool(q > 0.5) if mode == CRISP else q * value.score)
        elif name == "query_charge_relation":
            ref_value, _ = _execute(op.branch, ctx, mode)
            s = ctx.relation_score(value.data, ref_value.data, op.args[0], mode)
            if mode == CRISP:
                value = Value("bool", bool(s > 0.5))
            else:
                value = Value("bool", s * value.score * ref_value.score)
        else:  # pragma: no cover - typecheck rejects unknown ops
            raise ExecutionError(f"unhandled opcode {name}")
    return value, ctx


def execute(p: qlang.Program, ctx: ExecContext, mode: str = CRISP) -> Value:
    if mode not in (CRISP, SOFT):
        raise ExecutionError(f"unknown mode {mode}")
    value, _ctx = _execute(p, ctx, mode)
    return value


def answer_string(value: Value) -> str:
    """Factual answers as the closed-vocabulary word."""
    if value.kind == "bool":
        truth = value.data if isinstance(value.data, bool) else value.data > 0.5
        return "yes" if truth else "no"
    if value.kind == "int":
        return str(int(round(value.data)))
    if value.kind == "token":
        return str(value.data)
    raise ExecutionError(f"value of kind {value.kind} is not an answer")


def evaluate_choice(
    question_program: qlang.Program,
    choice_program: qlang.Program,
    ctx: ExecContext,
    mode: str = CRISP,
):
    """Run a multiple-choice option under the question's counterfactual or
    predictive context; crisp mode returns a bool, soft mode a score."""
    _value, ctx2 = _execute(question_program, ctx, mode)
    result = execute(choice_program, ctx2, mode)
    return bool(result.data) if mode == CRISP else float(result.data)
