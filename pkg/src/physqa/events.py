"""Event detection and annotation over recorded trajectories.

Five event kinds: ``in``/``out`` (frame-presence transitions), ``collision``
(contact between discs), and ``attraction``/``repulsion`` (charge
interactions). Collisions and charge interactions can be found two ways:

* annotation, which knows the hidden charge relations and applies a
  proximity rule, and
* kinematic detection, which works from positions alone and is the
  observational primitive the inference engine consumes.

All detectors ignore frames where a participant is off-screen, so they
behave identically on live simulator output and on the serialized record
(which zeroes absent samples).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from physqa.physics import Trajectory

IN = "in"
OUT = "out"
COLLISION = "collision"
ATTRACTION = "attraction"
REPULSION = "repulsion"

INTERACTION_KINDS = (COLLISION, ATTRACTION, REPULSION)

# Interaction radius for charge-event annotation.
D_INT = 0.4
# Kinematic detector: minimum mutual radial acceleration and run length.
A_THRESH = 0.05
MIN_RUN = 5
# Contact criteria. EPS_PROX is the plain proximity band. Elastic bounces
# faster than ~0.12 units/s resolve entirely between 25 fps frames, so a
# second path accepts distance local minima within EPS_CONTACT of touching
# when the relative velocity jumps (the impulse signature). EPS_CONTACT is
# also the reporting bound: no detected pair ever stayed farther apart.
EPS_PROX = 0.005
EPS_CONTACT = 0.02
JUMP_MIN = 0.05
# Contact episodes separated by fewer than this many clear frames merge.
EPISODE_GAP = 3


@dataclass(frozen=True)
class Event:
    kind: str
    participants: tuple[int, ...]
    frame: int
    video_id: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "participants": list(self.participants),
            "frame": self.frame,
            "video_id": self.video_id,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Event":
        return cls(raw["kind"], tuple(raw["participants"]), raw["frame"], raw.get("video_id", ""))


def events_to_json(events: Iterable[Event]) -> str:
    return json.dumps([e.to_dict() for e in events])


def events_from_json(text: str) -> list[Event]:
    return [Event.from_dict(r) for r in json.loads(text)]


def detect_in_out(traj: Trajectory, video_id: str = "") -> list[Event]:
    """One ``in`` event per false-to-true presence transition and one
    ``out`` per true-to-false, stamped with the first frame of the new
    state. Objects present from frame 0 produce no ``in``."""
    out: list[Event] = []
    for i in range(traj.n_objects):
        pres = traj.present[:, i]
        for f in range(1, traj.frame_count):
            if pres[f] and not pres[f - 1]:
                out.append(Event(IN, (i,), f, video_id))
            elif pres[f - 1] and not pres[f]:
                out.append(Event(OUT, (i,), f, video_id))
    out.sort(key=lambda e: (e.frame, e.participants))
    return out


def _pair_distance(traj: Trajectory, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    both = traj.present[:, i] & traj.present[:, j]
    d = np.linalg.norm(traj.positions[:, i] - traj.positions[:, j], axis=1)
    d = np.where(both, d, np.inf)
    return d, both


def _contact_mask(traj: Trajectory, i: int, j: int) -> np.ndarray:
    """Frames where the pair is judged in contact, combining the proximity
    path with the aliased-bounce path."""
    F = traj.frame_count
    d, both = _pair_distance(traj, i, j)
    rsum = float(traj.radii[i] + traj.radii[j])
    contact = np.zeros(F, dtype=bool)
    dt = 1.0 / traj.fps
    for f in range(1, F):
        if d[f] <= rsum + EPS_PROX and d[f] < d[f - 1]:
            contact[f] = True
    rel = traj.positions[:, i] - traj.positions[:, j]
    for f in range(2, F - 2):
        if contact[f]:
            continue
        if not (both[f - 2] and both[f - 1] and both[f] and both[f + 1] and both[f + 2]):
            continue
        if not (d[f] < d[f - 1] and d[f] <= d[f + 1] and d[f] <= rsum + EPS_CONTACT):
            continue
        v_before = (rel[f - 1] - rel[f - 2]) / dt
        v_after = (rel[f + 2] - rel[f + 1]) / dt
        if np.linalg.norm(v_after - v_before) >= JUMP_MIN:
            contact[f] = True
    return contact


def _episode_starts(contact: np.ndarray) -> list[tuple[int, int]]:
    """Group contact frames into episodes; gaps shorter than EPISODE_GAP
    merge. Returns (first, last) frame per episode."""
    frames = np.nonzero(contact)[0]
    if frames.size == 0:
        return []
    episodes = []
    start = prev = int(frames[0])
    for f in frames[1:]:
        f = int(f)
        if f - prev >= EPISODE_GAP:
            episodes.append((start, prev))
            start = f
        prev = f
    episodes.append((start, prev))
    return episodes


def collision_episodes(traj: Trajectory) -> dict[tuple[int, int], list[tuple[int, int]]]:
    out = {}
    for i in range(traj.n_objects):
        for j in range(i + 1, traj.n_objects):
            eps = _episode_starts(_contact_mask(traj, i, j))
            if eps:
                out[(i, j)] = eps
    return out


def detect_collisions(traj: Trajectory, video_id: str = "") -> list[Event]:
    """Collision event at the first frame of each contact episode."""
    out = []
    for (i, j), episodes in collision_episodes(traj).items():
        for first, _last in episodes:
            out.append(Event(COLLISION, (i, j), first, video_id))
    out.sort(key=lambda e: (e.frame, e.participants))
    return out


def charge_events_from_relations(
    traj: Trajectory,
    relations: dict[tuple[int, int], str],
    video_id: str = "",
    d_int: float = D_INT,
) -> list[Event]:
    """Attraction/repulsion onset events from known pair relations: for each
    charged pair, one event at the first frame both discs are on-screen
    within ``d_int``; nothing if they never get that close."""
    out = []
    for (i, j), rel in sorted(relations.items()):
        if rel not in ("same", "opposite"):
            continue
        d, _both = _pair_distance(traj, i, j)
        close = np.nonzero(d < d_int)[0]
        if close.size == 0:
            continue
        kind = REPULSION if rel == "same" else ATTRACTION
        out.append(Event(kind, (i, j), int(close[0]), video_id))
    out.sort(key=lambda e: (e.frame, e.participants))
    return out


def annotate_charge_events(traj: Trajectory, charges: Sequence[int], video_id: str = "") -> list[Event]:
    """Charge events from absolute signs (ground-truth annotation path)."""
    relations = {}
    n = len(charges)
    for i in range(n):
        for j in range(i + 1, n):
            if charges[i] != 0 and charges[j] != 0:
                relations[(i, j)] = "same" if charges[i] == charges[j] else "opposite"
    return charge_events_from_relations(traj, relations, video_id)


@dataclass(frozen=True)
class InteractionWindow:
    """One detected span of mutual charge-driven acceleration."""

    pair: tuple[int, int]
    polarity: str  # "attract" | "repel"
    frame: int
    confidence: float


def _object_contact_frames(traj: Trajectory) -> np.ndarray:
    """(frames, objects) mask of frames within 2 of any contact involving
    the object; impulses there corrupt second differences."""
    mask = np.zeros((traj.frame_count, traj.n_objects), dtype=bool)
    for (i, j), episodes in collision_episodes(traj).items():
        for first, last in episodes:
            a = max(0, first - 2)
            b = min(traj.frame_count, last + 3)
            mask[a:b, i] = True
            mask[a:b, j] = True
    return mask


def detect_interactions_kinematic(
    traj: Trajectory,
    damping: float = 0.1,
    a_thresh: float = A_THRESH,
    min_run: int = MIN_RUN,
) -> list[InteractionWindow]:
    """Find charged pairs from positions alone.

    Per-object accelerations come from central second differences at the
    recorded frame rate (endpoints skipped); the known velocity damping is
    compensated so only interaction forces remain. A pair is reported when
    both members accelerate toward (attract) or away from (repel) each
    other beyond ``a_thresh`` for at least ``min_run`` consecutive clean,
    contact-free frames."""
    F = traj.frame_count
    if F < 3:
        return []
    dt = 1.0 / traj.fps
    pos = traj.positions
    contact_near = _object_contact_frames(traj)
    out: list[InteractionWindow] = []
    for i in range(traj.n_objects):
        for j in range(i + 1, traj.n_objects):
            ok = np.zeros(F, dtype=bool)
            score = np.zeros(F)
            polar = np.zeros(F, dtype=np.int8)
            pres = traj.present
            for f in range(1, F - 1):
                if not (
                    pres[f - 1, i] and pres[f, i] and pres[f + 1, i]
                    and pres[f - 1, j] and pres[f, j] and pres[f + 1, j]
                ):
                    continue
                if contact_near[f, i] or contact_near[f, j]:
                    continue
                acc_i = (pos[f + 1, i] - 2 * pos[f, i] + pos[f - 1, i]) / dt**2
                acc_j = (pos[f + 1, j] - 2 * pos[f, j] + pos[f - 1, j]) / dt**2
                vel_i = (pos[f + 1, i] - pos[f - 1, i]) / (2 * dt)
                vel_j = (pos[f + 1, j] - pos[f - 1, j]) / (2 * dt)
                acc_i = acc_i + damping * vel_i
                acc_j = acc_j + damping * vel_j
                sep = pos[f, j] - pos[f, i]
                dist = np.linalg.norm(sep)
                if dist <= 0:
                    continue
                u = sep / dist
                s_i = float(np.dot(acc_i, u))  # accel of i toward j
                s_j = float(np.dot(acc_j, -u))  # accel of j toward i
                if s_i > a_thresh and s_j > a_thresh:
                    ok[f] = True
                    polar[f] = 1
                    score[f] = 0.5 * (s_i + s_j)
                elif s_i < -a_thresh and s_j < -a_thresh:
                    ok[f] = True
                    polar[f] = -1
                    score[f] = 0.5 * (-s_i - s_j)
            f = 1
            while f < F - 1:
                if not ok[f]:
                    f += 1
                    continue
                start = f
                sign = polar[f]
                while f < F - 1 and ok[f] and polar[f] == sign:
                    f += 1
                run = f - start
                if run >= min_run:
                    conf = float(min(1.0, score[start:f].mean() / a_thresh))
                    polarity = "attract" if sign > 0 else "repel"
                    out.append(InteractionWindow((i, j), polarity, start, conf))
    return out
