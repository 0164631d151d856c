"""Exact property inference: align objects across a video set, turn
interaction evidence into a relative-charge/mass property graph, and (as an
oracle) recover properties by exhaustive simulation search.

Charge reasoning works on *relations* (same / opposite / none); absolute
signs only matter to the simulator, and only through pair products, which
is why the search oracle is invariant under a global sign flip.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from physqa import events as ev
from physqa.physics import (
    MASS_HEAVY,
    MASS_LIGHT,
    SimConfig,
    Trajectory,
    simulate_arrays,
)

COLORS = ("gray", "red", "blue", "green", "brown", "cyan", "purple", "yellow")
SHAPES = ("cube", "sphere", "cylinder")
MATERIALS = ("metal", "rubber")

HEAVY = "heavy"
LIGHT = "light"
UNKNOWN = "unknown"
SAME = "same"
OPPOSITE = "opposite"
NONE = "none"

# Delta-v ratio bands for mass classification; true two-class ratios are
# 5, 1 and 1/5, so the cutoffs leave a wide noise margin.
RATIO_HEAVY = 2.5
RATIO_LIGHT = 0.4
# A collision only counts as mass evidence when the measured velocity
# changes clear these floors; softer contacts drown in finite-difference
# noise.
DV_FLOOR_MINOR = 0.04
DV_FLOOR_MAJOR = 0.12

FIT_MAX_OBJECTS = 6


class AlignmentError(ValueError):
    pass


class InconsistentEvidenceError(ValueError):
    pass


class SearchSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class StaticAttrs:
    color: str
    shape: str
    material: str

    def to_dict(self) -> dict:
        return {"color": self.color, "shape": self.shape, "material": self.material}

    @classmethod
    def from_dict(cls, raw: dict) -> "StaticAttrs":
        return cls(raw["color"], raw["shape"], raw["material"])


def _key(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass
class PropertyGraph:
    """Nodes carry mass labels, edges relative-charge relations; absolute
    signs are optional and only used to drive the simulator."""

    masses: dict[int, str]
    relations: dict[tuple[int, int], str]
    signs: dict[int, int] | None = None

    @classmethod
    def empty(cls, n: int) -> "PropertyGraph":
        masses = {i: UNKNOWN for i in range(n)}
        relations = {_key(i, j): UNKNOWN for i in range(n) for j in range(i + 1, n)}
        return cls(masses, relations)

    @property
    def n_objects(self) -> int:
        return len(self.masses)

    def relation(self, i: int, j: int) -> str:
        return self.relations.get(_key(i, j), UNKNOWN)

    def set_relation(self, i: int, j: int, rel: str) -> None:
        self.relations[_key(i, j)] = rel

    def charge_label(self, i: int) -> str:
        """'charged' / 'uncharged' / 'unknown' as derivable from edges."""
        if self.signs is not None:
            return "charged" if self.signs.get(i, 0) != 0 else "uncharged"
        incident = [r for (a, b), r in self.relations.items() if i in (a, b)]
        if any(r in (SAME, OPPOSITE) for r in incident):
            return "charged"
        if incident and all(r == NONE for r in incident):
            return "uncharged"
        return UNKNOWN

    def mass_value(self, i: int) -> float:
        # Unlabeled nodes default to light; on certified corpora an
        # unlabeled node is never the heavy one.
        return MASS_HEAVY if self.masses.get(i) == HEAVY else MASS_LIGHT

    def coupling_matrix(self) -> np.ndarray:
        """Pair force-sign matrix: +1 repulsive (same), -1 attractive
        (opposite), 0 for neutral or unknown pairs."""
        n = self.n_objects
        c = np.zeros((n, n))
        for (i, j), rel in self.relations.items():
            if rel == SAME:
                c[i, j] = c[j, i] = 1.0
            elif rel == OPPOSITE:
                c[i, j] = c[j, i] = -1.0
        return c

    def consistent_sign_coloring(self) -> bool:
        """Charged edges must admit a 2-coloring by sign (no odd cycle)."""
        color: dict[int, int] = {}
        adj: dict[int, list[tuple[int, int]]] = {}
        for (i, j), rel in self.relations.items():
            if rel in (SAME, OPPOSITE):
                parity = 0 if rel == SAME else 1
                adj.setdefault(i, []).append((j, parity))
                adj.setdefault(j, []).append((i, parity))
        for start in adj:
            if start in color:
                continue
            color[start] = 0
            stack = [start]
            while stack:
                a = stack.pop()
                for b, parity in adj[a]:
                    want = color[a] ^ parity
                    if b not in color:
                        color[b] = want
                        stack.append(b)
                    elif color[b] != want:
                        return False
        return True

    def to_dict(self) -> dict:
        out = {
            "nodes": [{"id": i, "mass": self.masses[i]} for i in sorted(self.masses)],
            "edges": [
                {"i": i, "j": j, "relation": rel}
                for (i, j), rel in sorted(self.relations.items())
            ],
        }
        if self.signs is not None:
            out["signs"] = [self.signs[i] for i in sorted(self.signs)]
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "PropertyGraph":
        masses = {n["id"]: n["mass"] for n in raw["nodes"]}
        relations = {_key(e["i"], e["j"]): e["relation"] for e in raw["edges"]}
        signs = None
        if raw.get("signs") is not None:
            signs = {i: s for i, s in enumerate(raw["signs"])}
        return cls(masses, relations, signs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PropertyGraph":
        return cls.from_dict(json.loads(text))


def align_reference(
    target_attrs: Sequence[StaticAttrs], ref_attrs: Sequence[StaticAttrs]
) -> dict[int, int]:
    """Map each reference-local object to the roster object with identical
    static attributes. Attribute triples are unique per set, so the match
    is exact and injective."""
    lookup = {attrs: i for i, attrs in enumerate(target_attrs)}
    mapping = {}
    for local, attrs in enumerate(ref_attrs):
        if attrs not in lookup:
            raise AlignmentError(f"alignment failure: no target object matches {attrs}")
        mapping[local] = lookup[attrs]
    return mapping


def align_objects(video_set) -> list[dict[int, int]]:
    """Alignments for every reference video of a set (target objects map to
    themselves and are omitted)."""
    return [
        align_reference(video_set.roster_attrs, ref.attrs) for ref in video_set.references
    ]


def infer_charge_edges(
    observations: Iterable[tuple[int, tuple[int, int], str]],
    alignments: Sequence[dict[int, int]],
    n_objects: int,
) -> PropertyGraph:
    """Union kinematic interaction evidence into charge edges.

    ``observations`` are (video_index, local_pair, polarity) with polarity
    'attract' or 'repel'; video index 0 is the target (identity mapping),
    1..R the references. Attraction means opposite signs, repulsion same.
    Relations propagate by parity to a fixpoint. When the evidence pins
    down exactly one charged pair, the 0-or-2-charged set prior marks every
    other node chargeless.
    """
    graph = PropertyGraph.empty(n_objects)
    direct: dict[tuple[int, int], str] = {}
    for video, (a, b), polarity in observations:
        if video == 0:
            i, j = a, b
        else:
            mapping = alignments[video - 1]
            i, j = mapping[a], mapping[b]
        rel = OPPOSITE if polarity == "attract" else SAME
        prev = direct.get(_key(i, j))
        if prev is not None and prev != rel:
            raise InconsistentEvidenceError(
                f"inconsistent evidence: pair {_key(i, j)} labeled both {prev} and {rel}"
            )
        direct[_key(i, j)] = rel

    # Parity propagation: same=0, opposite=1, close over connected parts.
    adj: dict[int, list[tuple[int, int]]] = {}
    for (i, j), rel in direct.items():
        parity = 0 if rel == SAME else 1
        adj.setdefault(i, []).append((j, parity))
        adj.setdefault(j, []).append((i, parity))
    color: dict[int, int] = {}
    components: list[list[int]] = []
    for start in sorted(adj):
        if start in color:
            continue
        color[start] = 0
        comp = [start]
        stack = [start]
        while stack:
            a = stack.pop()
            for b, parity in adj[a]:
                want = color[a] ^ parity
                if b not in color:
                    color[b] = want
                    comp.append(b)
                    stack.append(b)
                elif color[b] != want:
                    raise InconsistentEvidenceError(
                        "inconsistent evidence: odd-parity relation cycle"
                    )
        components.append(sorted(comp))
    for comp in components:
        for i, j in itertools.combinations(comp, 2):
            graph.set_relation(i, j, SAME if color[i] == color[j] else OPPOSITE)

    charged = sorted(color)
    if len(components) == 1 and len(charged) == 2:
        # Exactly the mandated charged pair: everyone else is neutral.
        for i in range(n_objects):
            for j in range(i + 1, n_objects):
                if i not in charged or j not in charged:
                    graph.set_relation(i, j, NONE)
    return graph


def collision_measurements(
    traj: Trajectory,
) -> list[tuple[tuple[int, int], int, float, float, bool]]:
    """Per contact episode: (pair, first_frame, |dv_i|, |dv_j|, usable).

    Velocities are central finite differences over 3-frame stencils placed
    just before and just after the episode. A measurement is usable when
    the stencils fit inside the video, both objects are on-screen and
    contact-free there, and the velocity changes clear the evidence floors.
    """
    episodes = ev.collision_episodes(traj)
    dt = 1.0 / traj.fps
    F = traj.frame_count
    out = []
    for (i, j), eps in episodes.items():
        other_ranges = []
        for (a, b), eps2 in episodes.items():
            if i in (a, b) or j in (a, b):
                other_ranges.extend(((a, b), lo, hi) for lo, hi in eps2)
        for first, last in eps:
            pre = (first - 3, first - 1)
            post = (last + 1, last + 3)
            usable = pre[0] >= 0 and post[1] < F
            if usable:
                for lo, hi in (pre, post):
                    for k in (i, j):
                        if not traj.present[lo : hi + 1, k].all():
                            usable = False
                for pair2, lo, hi in other_ranges:
                    if pair2 == (i, j) and (lo, hi) == (first, last):
                        continue
                    if lo <= pre[1] and hi >= pre[0]:
                        usable = False
                    if lo <= post[1] and hi >= post[0]:
                        usable = False
            if not usable:
                out.append(((i, j), first, 0.0, 0.0, False))
                continue
            dv = []
            for k in (i, j):
                v_pre = (traj.positions[pre[1], k] - traj.positions[pre[0], k]) / (2 * dt)
                v_post = (traj.positions[post[1], k] - traj.positions[post[0], k]) / (2 * dt)
                dv.append(float(np.linalg.norm(v_post - v_pre)))
            strong = min(dv) >= DV_FLOOR_MINOR and max(dv) >= DV_FLOOR_MAJOR
            out.append(((i, j), first, dv[0], dv[1], strong))
    out.sort(key=lambda r: (r[1], r[0]))
    return out


def infer_mass(
    collision_videos: Sequence[Trajectory],
    alignments: Sequence[dict[int, int]],
    n_objects: int,
) -> dict[int, str]:
    """Mass labels from collision response ratios, unioned across videos.

    For a usable collision, rho = |dv_i| / |dv_j| equals m_j / m_i. A ratio
    beyond the bands pins one member heavy and the other light; a middling
    ratio means same class, which the at-most-one-heavy set constraint
    resolves to both light. Once somebody is pinned heavy, everyone else is
    light. Contradictions raise.
    """
    masses = {i: UNKNOWN for i in range(n_objects)}

    def assign(obj: int, label: str) -> None:
        if masses[obj] == UNKNOWN:
            masses[obj] = label
        elif masses[obj] != label:
            raise InconsistentEvidenceError(
                f"inconsistent evidence: object {obj} labeled both {masses[obj]} and {label}"
            )

    ratio_pairs: list[tuple[int, int, float]] = []
    for video, traj in enumerate(collision_videos):
        for (a, b), _frame, dv_a, dv_b, usable in collision_measurements(traj):
            if not usable:
                continue
            if video == 0:
                i, j = a, b
            else:
                mapping = alignments[video - 1]
                i, j = mapping[a], mapping[b]
            ratio_pairs.append((i, j, dv_a / dv_b))

    same_class: list[tuple[int, int]] = []
    for i, j, rho in ratio_pairs:
        if rho >= RATIO_HEAVY:
            assign(i, LIGHT)
            assign(j, HEAVY)
        elif rho <= RATIO_LIGHT:
            assign(i, HEAVY)
            assign(j, LIGHT)
        else:
            same_class.append((i, j))
    for i, j in same_class:
        if masses[i] == HEAVY or masses[j] == HEAVY:
            raise InconsistentEvidenceError(
                "inconsistent evidence: same-class collision with a known heavy object"
            )
        assign(i, LIGHT)
        assign(j, LIGHT)
    heavies = [i for i, m in masses.items() if m == HEAVY]
    if len(heavies) > 1:
        raise InconsistentEvidenceError("inconsistent evidence: two heavy objects")
    if heavies:
        for i in range(n_objects):
            if masses[i] == UNKNOWN:
                masses[i] = LIGHT
    return masses


def infer_property_graph(
    videos: Sequence[Trajectory],
    alignments: Sequence[dict[int, int]],
    n_objects: int,
    damping: float,
) -> PropertyGraph:
    """Full constraint-based inference over a video set: kinematic charge
    evidence plus collision mass evidence, unioned across all videos."""
    observations = []
    for v, traj in enumerate(videos):
        for w in ev.detect_interactions_kinematic(traj, damping=damping):
            observations.append((v, w.pair, w.polarity))
    graph = infer_charge_edges(observations, alignments, n_objects)
    graph.masses = infer_mass(videos, alignments, n_objects)
    return graph


def _enumerate_masses(n: int) -> list[tuple[float, ...]]:
    out = [tuple([MASS_LIGHT] * n)]
    for h in range(n):
        row = [MASS_LIGHT] * n
        row[h] = MASS_HEAVY
        out.append(tuple(row))
    return out


def _enumerate_charges(n: int) -> list[tuple[int, ...]]:
    out = [tuple([0] * n)]
    for i in range(n):
        for j in range(i + 1, n):
            for si in (-1, 1):
                for sj in (-1, 1):
                    row = [0] * n
                    row[i] = si
                    row[j] = sj
                    out.append(tuple(row))
    return out


def reconstruct_state(traj: Trajectory, frame: int):
    """Positions and finite-difference velocities at a recorded frame.

    Velocity uses the 3-point backward difference when the two prior frames
    are on-screen, falls back to 2-point, then to zero. Objects off-screen
    at ``frame`` come back inactive: they are parked far away and excluded
    from dynamics when re-simulating.
    """
    dt = 1.0 / traj.fps
    n = traj.n_objects
    pos = traj.positions[frame].copy()
    vel = np.zeros((n, 2))
    active = traj.present[frame].copy()
    for i in range(n):
        if not active[i]:
            continue
        if frame >= 2 and traj.present[frame - 1, i] and traj.present[frame - 2, i]:
            vel[i] = (
                3 * traj.positions[frame, i]
                - 4 * traj.positions[frame - 1, i]
                + traj.positions[frame - 2, i]
            ) / (2 * dt)
        elif frame >= 1 and traj.present[frame - 1, i]:
            vel[i] = (traj.positions[frame, i] - traj.positions[frame - 1, i]) / dt
    return pos, vel, active


def resimulate_video(
    traj: Trajectory,
    masses: Sequence[float],
    coupling: np.ndarray,
    cfg: SimConfig,
    start_frame: int = 2,
) -> Trajectory:
    """Re-simulate a recorded video from the state reconstructed at
    ``start_frame``, producing frames [start_frame, frame_count)."""
    pos, vel, active = reconstruct_state(traj, start_frame)
    coupling = coupling.copy()
    for i in range(traj.n_objects):
        if not active[i]:
            pos[i] = (1e6 + i, 1e6)  # parked: no contacts, no forces
            vel[i] = 0.0
            coupling[i, :] = 0.0
            coupling[:, i] = 0.0
    n_frames = traj.frame_count - start_frame
    return simulate_arrays(
        pos, vel, traj.radii, np.asarray(masses, dtype=float), coupling, cfg, n_frames
    )


def _assignment_score(
    videos: Sequence[Trajectory],
    alignments: Sequence[dict[int, int]],
    masses: tuple[float, ...],
    coupling: np.ndarray,
    cfg: SimConfig,
) -> float:
    total = 0.0
    for v, traj in enumerate(videos):
        if v == 0:
            local = list(range(traj.n_objects))
        else:
            mapping = alignments[v - 1]
            local = [mapping[k] for k in range(traj.n_objects)]
        m_local = [masses[g] for g in local]
        c_local = coupling[np.ix_(local, local)]
        sim = resimulate_video(traj, m_local, c_local, cfg, start_frame=2)
        stored = traj.positions[2:]
        present = traj.present[2:]
        diff = sim.positions - stored
        err = np.einsum("fnk,fnk->fn", diff, diff)
        total += float(err[present].sum())
    return total


def fit_by_simulation(video_set, cfg: SimConfig) -> PropertyGraph:
    """Exhaustive property search: enumerate all mass/charge assignments
    allowed by the set constraints, re-simulate every video from its first
    three observed frames, and return the assignment with the least total
    squared position error. Ties break toward fewer charged then fewer
    heavy objects, then lexicographically."""
    n = len(video_set.roster_attrs)
    if n > FIT_MAX_OBJECTS:
        raise SearchSpaceError(f"search space exceeded: {n} objects > {FIT_MAX_OBJECTS}")
    alignments = align_objects(video_set)
    videos = [video_set.target] + [r.trajectory for r in video_set.references]

    score_memo: dict[tuple, float] = {}
    best = None
    for charges in _enumerate_charges(n):
        coupling = np.outer(charges, charges).astype(float)
        for masses in _enumerate_masses(n):
            memo_key = (masses, tuple(coupling[np.triu_indices(n, 1)]))
            if memo_key in score_memo:
                score = score_memo[memo_key]
            else:
                score = _assignment_score(videos, alignments, masses, coupling, cfg)
                score_memo[memo_key] = score
            n_charged = sum(1 for q in charges if q != 0)
            n_heavy = sum(1 for m in masses if m == MASS_HEAVY)
            key = (score, n_charged, n_heavy, charges, masses)
            if best is None or key < best:
                best = key
    _score, _nc, _nh, charges, masses = best
    graph = PropertyGraph.empty(n)
    graph.signs = {i: int(charges[i]) for i in range(n)}
    for i in range(n):
        graph.masses[i] = HEAVY if masses[i] == MASS_HEAVY else LIGHT
        for j in range(i + 1, n):
            if charges[i] != 0 and charges[j] != 0:
                graph.set_relation(i, j, SAME if charges[i] == charges[j] else OPPOSITE)
            else:
                graph.set_relation(i, j, NONE)
    return graph
