"""Procedural generation of video sets by rejection sampling.

A set is one 5 s target video (plus a 2 s hidden extension) and four 2 s
reference videos over a shared object roster with fixed hidden properties.
Structural constraints: 3-5 roster objects with unique appearance triples,
at most one heavy object, zero or two charged objects, every roster object
in at least one reference, and at least one interaction per reference.

Two stronger guarantees make the benchmark solvable and are enforced here:
if a heavy object exists it takes part in a collision clean enough to
measure, and if a charged pair exists its interaction is kinematically
detectable in some reference. A final verification pass re-runs the exact
inference engine and rejects any set where it fails to reproduce the hidden
properties.

Per-set RNG streams derive from (seed, split, index), so corpora are
reproducible and parallel generation matches serial generation byte for
byte. The generator is PCG64 seeded through numpy's SeedSequence.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from physqa import events as ev
from physqa import propgraph as pg
from physqa.executor import build_context, detect_context_events, ExactBackend
from physqa.physics import (
    MASS_HEAVY,
    MASS_LIGHT,
    SimConfig,
    Trajectory,
    coupling_from_charges,
    simulate_arrays,
)
from physqa.propgraph import COLORS, MATERIALS, SHAPES, PropertyGraph, StaticAttrs

TARGET_SECONDS = 5.0
EXTENSION_SECONDS = 2.0
REFERENCE_SECONDS = 2.0


class GenerationError(RuntimeError):
    pass


@dataclass
class GenConfig:
    seed: int = 0
    train: int = 800
    val: int = 200
    test: int = 200
    sim: SimConfig = field(default_factory=SimConfig)
    max_attempts: int = 60
    ref_attempts: int = 60
    speed_range: tuple[float, float] = (0.05, 0.2)
    n_objects: tuple[int, int] = (3, 5)
    ref_objects: tuple[int, int] = (2, 3)
    p_heavy: float = 0.6
    p_charged: float = 0.7
    p_entrant: float = 0.2
    radius_range: tuple[float, float] = (0.03, 0.05)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["sim"] = json.loads(self.sim.to_json())
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "GenConfig":
        raw = dict(raw)
        if "sim" in raw:
            raw["sim"] = SimConfig.from_json(json.dumps(raw["sim"]))
        for key in ("speed_range", "n_objects", "ref_objects", "radius_range"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)


@dataclass
class Reference:
    attrs: list[StaticAttrs]
    trajectory: Trajectory
    alignment: dict[int, int]  # local index -> roster id
    events: list[ev.Event]


@dataclass
class VideoSet:
    set_id: str
    roster_attrs: list[StaticAttrs]
    graph: PropertyGraph
    target: Trajectory
    extension: Trajectory
    full_target: Trajectory  # 7 s simulation the two above are slices of
    references: list[Reference]
    target_events: list[ev.Event]
    sim: SimConfig


def sample_roster(rng: np.random.Generator, cfg: GenConfig | None = None):
    """Roster attributes plus the hidden property graph: unique appearance
    triples, at most one heavy object, exactly zero or two charged."""
    cfg = cfg or GenConfig()
    n = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    combos = [
        StaticAttrs(c, s, m) for c in COLORS for s in SHAPES for m in MATERIALS
    ]
    picks = rng.choice(len(combos), size=n, replace=False)
    attrs = [combos[int(k)] for k in picks]
    graph = PropertyGraph.empty(n)
    graph.signs = {i: 0 for i in range(n)}
    for i in range(n):
        graph.masses[i] = pg.LIGHT
    for pair in graph.relations:
        graph.set_relation(*pair, pg.NONE)
    if rng.random() < cfg.p_heavy:
        heavy = int(rng.integers(0, n))
        graph.masses[heavy] = pg.HEAVY
    if rng.random() < cfg.p_charged:
        i, j = sorted(rng.choice(n, size=2, replace=False).tolist())
        si = int(rng.choice([-1, 1]))
        sj = int(rng.choice([-1, 1]))
        graph.signs[i] = si
        graph.signs[j] = sj
        graph.set_relation(i, j, pg.SAME if si == sj else pg.OPPOSITE)
    return attrs, graph


def _charged_pair(graph: PropertyGraph) -> tuple[int, int] | None:
    for pair, rel in graph.relations.items():
        if rel in (pg.SAME, pg.OPPOSITE):
            return pair
    return None


def _heavy_object(graph: PropertyGraph) -> int | None:
    for i, m in graph.masses.items():
        if m == pg.HEAVY:
            return i
    return None


def _sample_positions(rng, radii, lo=0.15, hi=0.85, fixed=None):
    """Non-overlapping positions inside the core box; ``fixed`` entries are
    kept as given."""
    n = len(radii)
    pos = np.zeros((n, 2))
    placed = []
    if fixed:
        for i, p in fixed.items():
            pos[i] = p
            placed.append(i)
    for i in range(n):
        if fixed and i in fixed:
            continue
        for _ in range(80):
            cand = rng.uniform(lo, hi, 2)
            if all(
                np.linalg.norm(cand - pos[j]) > radii[i] + radii[j] + 0.02
                for j in placed
            ):
                pos[i] = cand
                placed.append(i)
                break
        else:
            return None
    return pos


def _aimed_pair_geometry(rng, d0_range):
    center = rng.uniform(0.32, 0.68, 2)
    angle = rng.uniform(0, 2 * math.pi)
    axis = np.array([math.cos(angle), math.sin(angle)])
    d0 = rng.uniform(*d0_range)
    return center - axis * d0 / 2, center + axis * d0 / 2, axis


def _perp(v):
    return np.array([-v[1], v[0]])


def _masses_charges(graph: PropertyGraph, members):
    masses = np.array([graph.mass_value(i) for i in members])
    charges = np.array([float(graph.signs[i]) for i in members])
    return masses, charges


def _simulate_members(rng, cfg, graph, members, pos, vel, seconds):
    radii = pos["radii"]
    masses, charges = _masses_charges(graph, members)
    frames = round(seconds * cfg.sim.record_fps)
    return simulate_arrays(
        pos["pos"], vel, radii, masses, coupling_from_charges(charges), cfg.sim, frames
    )


def _gen_reference(rng, cfg: GenConfig, graph: PropertyGraph, members, requirement):
    """One reference video satisfying its planned witness, or None.

    ``requirement`` is ('charge', pair) or ('collision', pair) with pair in
    roster ids; members is the full roster subset shown in the video.
    """
    kind, pair = requirement
    local = {g: k for k, g in enumerate(members)}
    n = len(members)
    a, b = local[pair[0]], local[pair[1]]
    radii = rng.uniform(*cfg.radius_range, n)
    rel = graph.relation(*pair)
    for _ in range(cfg.ref_attempts):
        vel = np.zeros((n, 2))
        if kind == "collision":
            pa, pb, axis = _aimed_pair_geometry(rng, (0.3, 0.45))
            sa = rng.uniform(0.13, 0.2)
            sb = rng.uniform(0.13, 0.2)
            jitter = rng.uniform(-0.15, 0.15)
            vel[a] = axis * sa + _perp(axis) * jitter * sa
            vel[b] = -axis * sb
        elif rel == pg.SAME:  # charge demo: repulsion
            pa, pb, axis = _aimed_pair_geometry(rng, (0.28, 0.4))
            sa = rng.uniform(0.1, 0.18)
            sb = rng.uniform(0.1, 0.18)
            vel[a] = axis * sa
            vel[b] = -axis * sb
        else:  # charge demo: attraction
            pa, pb, axis = _aimed_pair_geometry(rng, (0.3, 0.42))
            side = rng.choice([-1.0, 1.0])
            vel[a] = _perp(axis) * side * rng.uniform(0.02, 0.08) + axis * rng.uniform(0.0, 0.06)
            vel[b] = -_perp(axis) * side * rng.uniform(0.02, 0.08) - axis * rng.uniform(0.0, 0.06)
        fixed = {a: pa, b: pb}
        pos = _sample_positions(rng, radii, fixed=fixed)
        if pos is None:
            continue
        for k in range(n):
            if k not in (a, b):
                speed = rng.uniform(cfg.speed_range[0], 0.1)
                ang = rng.uniform(0, 2 * math.pi)
                vel[k] = speed * np.array([math.cos(ang), math.sin(ang)])
        masses = np.array([graph.mass_value(g) for g in members])
        charges = np.array([float(graph.signs[g]) for g in members])
        traj = simulate_arrays(
            pos, vel, radii, masses, coupling_from_charges(charges), cfg.sim,
            round(REFERENCE_SECONDS * cfg.sim.record_fps),
        )
        if kind == "collision":
            measured = [
                m
                for m in pg.collision_measurements(traj)
                if m[0] == (min(a, b), max(a, b)) and m[4]
            ]
            if not measured:
                continue
        else:
            windows = ev.detect_interactions_kinematic(traj, damping=cfg.sim.damping)
            want = "repel" if rel == pg.SAME else "attract"
            hit = any(
                w.pair == (min(a, b), max(a, b)) and w.polarity == want for w in windows
            )
            local_rel = {(min(a, b), max(a, b)): rel}
            annotated = ev.charge_events_from_relations(traj, local_rel)
            if not (hit and annotated):
                continue
        # The set-level invariant counts annotated interactions.
        local_graph = _project_graph(graph, members)
        evts = detect_context_events(traj, local_graph)
        if not any(e.kind in ev.INTERACTION_KINDS for e in evts):
            continue
        return traj, evts
    return None


def _project_graph(graph: PropertyGraph, members) -> PropertyGraph:
    n = len(members)
    local = PropertyGraph.empty(n)
    local.signs = {}
    for k, g in enumerate(members):
        local.masses[k] = graph.masses[g]
        local.signs[k] = graph.signs[g]
    for x in range(n):
        for y in range(x + 1, n):
            local.set_relation(x, y, graph.relation(members[x], members[y]))
    return local


def _gen_target(rng, cfg: GenConfig, graph: PropertyGraph):
    """7 s roster simulation with aimed initial conditions; returns the full
    trajectory or None when degenerate."""
    n = graph.n_objects
    radii = rng.uniform(*cfg.radius_range, n)
    pair = _charged_pair(graph)
    for _ in range(20):
        fixed = {}
        vel = np.zeros((n, 2))
        aimed = set()
        if pair is not None:
            a, b = pair
            pa, pb, axis = _aimed_pair_geometry(rng, (0.3, 0.5))
            fixed = {a: pa, b: pb}
            side = rng.choice([-1.0, 1.0])
            if graph.relation(a, b) == pg.OPPOSITE:
                vel[a] = _perp(axis) * side * rng.uniform(0.03, 0.1)
                vel[b] = -_perp(axis) * side * rng.uniform(0.03, 0.1)
            else:
                vel[a] = axis * rng.uniform(0.08, 0.16)
                vel[b] = -axis * rng.uniform(0.08, 0.16)
            aimed = {a, b}
        pos = _sample_positions(rng, radii, fixed=fixed)
        if pos is None:
            continue
        free = [i for i in range(n) if i not in aimed]
        if len(free) >= 2 and rng.random() < 0.8:
            x, y = rng.choice(free, size=2, replace=False)
            d = pos[int(y)] - pos[int(x)]
            d = d / np.linalg.norm(d)
            vel[int(x)] = d * rng.uniform(0.1, 0.2)
            vel[int(y)] = -d * rng.uniform(0.05, 0.15)
            aimed |= {int(x), int(y)}
        for i in range(n):
            if i in aimed:
                continue
            speed = rng.uniform(*cfg.speed_range)
            ang = rng.uniform(0, 2 * math.pi)
            vel[i] = speed * np.array([math.cos(ang), math.sin(ang)])
        entrant = None
        if rng.random() < cfg.p_entrant:
            candidates = [i for i in range(n) if i not in aimed]
            if candidates:
                entrant = int(rng.choice(candidates))
                edge = int(rng.integers(0, 4))
                along = rng.uniform(0.25, 0.75)
                r = radii[entrant]
                offset = r + 0.02
                speed = rng.uniform(0.12, 0.2)
                if edge == 0:
                    pos[entrant] = (-offset, along)
                    vel[entrant] = (speed, rng.uniform(-0.03, 0.03))
                elif edge == 1:
                    pos[entrant] = (1 + offset, along)
                    vel[entrant] = (-speed, rng.uniform(-0.03, 0.03))
                elif edge == 2:
                    pos[entrant] = (along, -offset)
                    vel[entrant] = (rng.uniform(-0.03, 0.03), speed)
                else:
                    pos[entrant] = (along, 1 + offset)
                    vel[entrant] = (rng.uniform(-0.03, 0.03), -speed)
        masses = np.array([graph.mass_value(i) for i in range(n)])
        charges = np.array([float(graph.signs[i]) for i in range(n)])
        frames = round((TARGET_SECONDS + EXTENSION_SECONDS) * cfg.sim.record_fps)
        traj = simulate_arrays(
            pos, vel, radii, masses, coupling_from_charges(charges), cfg.sim, frames
        )
        target_frames = round(TARGET_SECONDS * cfg.sim.record_fps)
        if traj.present[target_frames - 1].sum() < 2:
            continue
        evts = detect_context_events(traj.slice_frames(0, target_frames), graph)
        if not any(e.kind in ev.INTERACTION_KINDS for e in evts):
            continue
        return traj
    return None


def _plan_references(rng, cfg, graph: PropertyGraph):
    """Reference subsets plus the witness each must exhibit."""
    n = graph.n_objects
    plans: list[tuple[list[int], tuple[str, tuple[int, int]]]] = []
    covered: set[int] = set()
    pair = _charged_pair(graph)
    heavy = _heavy_object(graph)
    if pair is not None:
        plans.append(([pair[0], pair[1]], ("charge", pair)))
        covered |= set(pair)
    if heavy is not None:
        others = [i for i in range(n) if i != heavy]
        prefer = [i for i in others if i not in covered] or others
        partner = int(rng.choice(prefer))
        plans.append(
            (sorted({heavy, partner}), ("collision", (min(heavy, partner), max(heavy, partner))))
        )
        covered |= {heavy, partner}
    remaining = [i for i in range(n) if i not in covered]
    rng.shuffle(remaining)
    while remaining:
        take = remaining[:2]
        remaining = remaining[2:]
        if len(take) == 1:
            partner = int(rng.choice([i for i in range(n) if i != take[0]]))
            take.append(partner)
        take = sorted(take)
        plans.append((take, ("collision", (take[0], take[1]))))
        covered |= set(take)
    while len(plans) < 4:
        i, j = sorted(rng.choice(n, size=2, replace=False).tolist())
        if pair is not None and (i, j) == pair and rng.random() < 0.5:
            plans.append(([i, j], ("charge", (i, j))))
        else:
            plans.append(([i, j], ("collision", (i, j))))
    rng.shuffle(plans)
    plans = plans[:4]
    # Shuffling may have dropped a coverage plan; rebuild if so.
    seen = set()
    for members, _req in plans:
        seen |= set(members)
    if seen != set(range(n)) or (
        pair is not None and not any(req == ("charge", pair) for _m, req in plans)
    ) or (
        heavy is not None
        and not any(req[0] == "collision" and heavy in req[1] for _m, req in plans)
    ):
        return None
    # Occasionally grow a reference to 3 objects for variety.
    if cfg.ref_objects[1] >= 3:
        for k, (members, req) in enumerate(plans):
            if len(members) == 2 and rng.random() < 0.35 and n > 2:
                extra = [i for i in range(n) if i not in members]
                members = sorted(members + [int(rng.choice(extra))])
                plans[k] = (members, req)
    return plans


def _verify_inference(video_set: "VideoSet") -> str | None:
    """Re-run the exact inference pipeline; non-None names the failure."""
    graph = video_set.graph
    n = graph.n_objects
    alignments = [r.alignment for r in video_set.references]
    videos = [video_set.target] + [r.trajectory for r in video_set.references]
    try:
        inferred = pg.infer_property_graph(videos, alignments, n, video_set.sim.damping)
    except pg.InconsistentEvidenceError as exc:
        return f"inference inconsistent: {exc}"
    for pair, rel in inferred.relations.items():
        if rel != pg.UNKNOWN and rel != graph.relation(*pair):
            return f"charge edge {pair} inferred {rel}, truth {graph.relation(*pair)}"
    for i, m in inferred.masses.items():
        if m != pg.UNKNOWN and m != graph.masses[i]:
            return f"mass of {i} inferred {m}, truth {graph.masses[i]}"
    pair = _charged_pair(graph)
    if pair is not None and inferred.relation(*pair) == pg.UNKNOWN:
        return f"charged pair {pair} not recovered"
    heavy = _heavy_object(graph)
    if heavy is not None and inferred.masses[heavy] != pg.HEAVY:
        return f"heavy object {heavy} not recovered"
    return None


def generate_set(rng: np.random.Generator, cfg: GenConfig, set_id: str = "set") -> VideoSet:
    """One structurally valid, inference-verified video set; raises
    GenerationError naming the binding constraint when attempts run out."""
    last_failure = "no attempt"
    for _ in range(cfg.max_attempts):
        attrs, graph = sample_roster(rng, cfg)
        full = _gen_target(rng, cfg, graph)
        if full is None:
            last_failure = "target interaction"
            continue
        plans = _plan_references(rng, cfg, graph)
        if plans is None:
            last_failure = "reference coverage"
            continue
        references = []
        for members, req in plans:
            made = _gen_reference(rng, cfg, graph, members, req)
            if made is None:
                references = None
                last_failure = f"reference witness {req[0]}"
                break
            traj, evts = made
            order = list(range(len(members)))
            rng.shuffle(order)
            local_attrs = [attrs[members[k]] for k in order]
            reordered = Trajectory(
                traj.positions[:, order].copy(),
                traj.radii[order].copy(),
                traj.present[:, order].copy(),
                traj.fps,
                None if traj.velocities is None else traj.velocities[:, order].copy(),
            )
            alignment = {local: members[k] for local, k in enumerate(order)}
            local_graph = _project_graph(graph, [members[k] for k in order])
            evts = detect_context_events(reordered, local_graph)
            references.append(Reference(local_attrs, reordered, alignment, evts))
        if references is None:
            continue
        target_frames = round(TARGET_SECONDS * cfg.sim.record_fps)
        target = full.slice_frames(0, target_frames)
        extension = full.slice_frames(target_frames, full.frame_count)
        video_set = VideoSet(
            set_id=set_id,
            roster_attrs=attrs,
            graph=graph,
            target=target,
            extension=extension,
            full_target=full,
            references=references,
            target_events=detect_context_events(target, graph, "target"),
            sim=cfg.sim,
        )
        failure = _verify_inference(video_set)
        if failure is not None:
            last_failure = failure
            continue
        return video_set
    raise GenerationError(f"generation failed: {last_failure}")


def certify_informative(video_set: VideoSet, question_kind: str, relevant) -> bool:
    """Is a question about these objects backed by witnessed interactions?

    Mass evidence is a measurable collision; charge evidence a kinematically
    detected interaction. Single-object queries also count the set priors:
    a heavy object pinned elsewhere makes everyone else provably light, and
    a detected charged pair makes everyone else provably neutral.
    """
    relevant = tuple(relevant)
    alignments = [r.alignment for r in video_set.references]
    videos = [video_set.target] + [r.trajectory for r in video_set.references]

    usable_pairs = set()
    for v, traj in enumerate(videos):
        for (a, b), _f, _da, _db, usable in pg.collision_measurements(traj):
            if not usable:
                continue
            if v == 0:
                usable_pairs.add((a, b))
            else:
                m = alignments[v - 1]
                usable_pairs.add((min(m[a], m[b]), max(m[a], m[b])))
    detected_pairs = set()
    for v, traj in enumerate(videos):
        for w in ev.detect_interactions_kinematic(traj, damping=video_set.sim.damping):
            a, b = w.pair
            if v == 0:
                detected_pairs.add((a, b))
            else:
                m = alignments[v - 1]
                detected_pairs.add((min(m[a], m[b]), max(m[a], m[b])))

    if question_kind == "mass":
        if len(relevant) == 2:
            return tuple(sorted(relevant)) in usable_pairs
        (i,) = relevant
        if any(i in p for p in usable_pairs):
            return True
        try:
            masses = pg.infer_mass(videos, alignments, video_set.graph.n_objects)
        except pg.InconsistentEvidenceError:
            return False
        return masses.get(i, pg.UNKNOWN) != pg.UNKNOWN
    if question_kind == "charge_relation":
        return tuple(sorted(relevant)) in detected_pairs
    if question_kind == "charge":
        (i,) = relevant
        return any(i in p for p in detected_pairs) or bool(detected_pairs)
    raise ValueError(f"unknown question kind {question_kind}")
