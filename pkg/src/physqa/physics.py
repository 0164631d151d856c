"""Deterministic 2D dynamics of charged, massive discs.

World model: a unit-square camera frame on an open plane. Discs carry a
hidden mass (light/heavy) and a hidden charge (-1/0/+1). Charged pairs feel
an inverse-square force along their separation axis, repulsive for equal
signs. A linear velocity damping term mimics ground friction. Contacts are
resolved with impulse-based elastic collisions that conserve momentum
exactly. Objects drifting outside the frame keep simulating but are flagged
not-present, which downstream code treats as off-screen.

Everything here is a pure function of its inputs: identical inputs produce
bitwise-identical trajectories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from physqa import _kernel

MASS_LIGHT = 1.0
MASS_HEAVY = 5.0

# Guard used when normalizing zero-length separation vectors; the resulting
# direction is the zero vector, so coincident softened pairs feel no force.
_DIR_EPS = 1e-300


class SingularSeparationError(ValueError):
    """Raised for coincident charged objects with force softening disabled."""


@dataclass
class ObjectState:
    """Kinematic state of one disc at one instant."""

    position: np.ndarray  # (2,) world units
    velocity: np.ndarray  # (2,) units/s
    radius: float
    present: bool = True

    def copy(self) -> "ObjectState":
        return ObjectState(
            self.position.copy(), self.velocity.copy(), self.radius, self.present
        )


@dataclass
class PhysProps:
    """Hidden physical properties of one disc."""

    mass: float = MASS_LIGHT  # one of {1.0, 5.0}
    charge: int = 0  # one of {-1, 0, +1}


@dataclass
class SimConfig:
    """Integrator and force constants.

    ``dt`` is the integrator step; frames are recorded every
    ``1 / (dt * record_fps)`` steps, which must be a whole number.
    """

    dt: float = 1.0 / 125.0
    record_fps: int = 25
    coulomb_k: float = 0.02
    damping: float = 0.1  # 1/s linear velocity damping
    restitution: float = 1.0
    softening_min_dist: float = 1e-3
    world_bounds: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)

    def substeps_per_frame(self) -> int:
        sub = 1.0 / (self.dt * self.record_fps)
        rounded = round(sub)
        if rounded < 1 or abs(sub - rounded) > 1e-9:
            raise ValueError(
                f"record_fps={self.record_fps} does not divide 1/dt={1.0 / self.dt:g} evenly"
            )
        return rounded

    def validate(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.record_fps <= 0:
            raise ValueError("record_fps must be positive")
        if not 0.0 < self.restitution <= 1.0:
            raise ValueError("restitution must lie in (0, 1]")
        self.substeps_per_frame()

    def to_json(self) -> str:
        return json.dumps(
            {
                "dt": self.dt,
                "record_fps": self.record_fps,
                "coulomb_k": self.coulomb_k,
                "damping": self.damping,
                "restitution": self.restitution,
                "softening_min_dist": self.softening_min_dist,
                "world_bounds": list(self.world_bounds),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        raw = json.loads(text)
        raw["world_bounds"] = tuple(raw["world_bounds"])
        return cls(**raw)


@dataclass
class Trajectory:
    """Recorded per-object time series at a fixed frame rate.

    ``positions`` has shape (frames, objects, 2); ``present`` marks frames
    where the disc overlaps the camera frame. ``velocities`` is kept for
    trajectories produced by the simulator and is dropped on serialization,
    the observable record carries positions and sizes only.
    """

    positions: np.ndarray
    radii: np.ndarray
    present: np.ndarray
    fps: int
    velocities: np.ndarray | None = None

    @property
    def frame_count(self) -> int:
        return self.positions.shape[0]

    @property
    def n_objects(self) -> int:
        return self.positions.shape[1]

    def slice_frames(self, start: int, stop: int) -> "Trajectory":
        vel = None if self.velocities is None else self.velocities[start:stop]
        return Trajectory(
            self.positions[start:stop], self.radii, self.present[start:stop], self.fps, vel
        )

    def states_at(self, frame: int) -> list[ObjectState]:
        if self.velocities is None:
            raise ValueError("trajectory carries no velocities")
        return [
            ObjectState(
                self.positions[frame, i].copy(),
                self.velocities[frame, i].copy(),
                float(self.radii[i]),
                bool(self.present[frame, i]),
            )
            for i in range(self.n_objects)
        ]

    def observable_frames(self) -> list[list[list[float]]]:
        """Frames as [frame][object][x, y, w, h, present] with off-screen
        samples zeroed, the canonical serialized form."""
        frames = []
        for f in range(self.frame_count):
            row = []
            for i in range(self.n_objects):
                if self.present[f, i]:
                    d = 2.0 * float(self.radii[i])
                    row.append(
                        [float(self.positions[f, i, 0]), float(self.positions[f, i, 1]), d, d, 1]
                    )
                else:
                    row.append([0.0, 0.0, 0.0, 0.0, 0])
            frames.append(row)
        return frames

    @classmethod
    def from_observable_frames(cls, frames: Sequence[Sequence[Sequence[float]]], fps: int) -> "Trajectory":
        arr = np.asarray(frames, dtype=np.float64)
        positions = arr[:, :, 0:2].copy()
        present = arr[:, :, 4] > 0.5
        # Radius is constant per object; recover it from any present frame.
        n = arr.shape[1]
        radii = np.zeros(n)
        for i in range(n):
            seen = np.nonzero(present[:, i])[0]
            if seen.size:
                radii[i] = arr[seen[0], i, 2] / 2.0
        return cls(positions, radii, present, fps)


def _as_arrays(states: Sequence[ObjectState], props: Sequence[PhysProps]):
    pos = np.array([s.position for s in states], dtype=np.float64)
    vel = np.array([s.velocity for s in states], dtype=np.float64)
    radii = np.array([s.radius for s in states], dtype=np.float64)
    mass = np.array([p.mass for p in props], dtype=np.float64)
    charge = np.array([p.charge for p in props], dtype=np.float64)
    return pos, vel, radii, mass, charge


def coupling_from_charges(charges: np.ndarray) -> np.ndarray:
    """Pairwise products q_i*q_j; positive entries repel, negative attract."""
    return np.outer(charges, charges)


def presence_mask(pos: np.ndarray, radii: np.ndarray, bounds) -> np.ndarray:
    x0, y0, x1, y1 = bounds
    return (
        (pos[:, 0] >= x0 - radii)
        & (pos[:, 0] <= x1 + radii)
        & (pos[:, 1] >= y0 - radii)
        & (pos[:, 1] <= y1 + radii)
    )


def _pair_forces(pos, vel, radii, mass, coupling, cfg: SimConfig, iu, jv):
    forces = -cfg.damping * mass[:, None] * vel
    if iu.size:
        d = pos[iu] - pos[jv]
        dist = np.sqrt(np.einsum("ij,ij->i", d, d))
        qq = coupling[iu, jv]
        if cfg.softening_min_dist <= 0 and np.any((dist == 0.0) & (qq != 0.0)):
            raise SingularSeparationError("singular separation: coincident charged objects")
        floor = np.maximum(radii[iu] + radii[jv], cfg.softening_min_dist)
        eff = np.maximum(dist, floor)
        mag = cfg.coulomb_k * qq / (eff * eff)
        direction = d / np.maximum(dist, _DIR_EPS)[:, None]
        fp = mag[:, None] * direction
        np.add.at(forces, iu, fp)
        np.add.at(forces, jv, -fp)
    return forces


def _resolve_overlaps(pos, vel, radii, mass, restitution, iu, jv, max_passes=8):
    inv_m = 1.0 / mass
    for _ in range(max_passes):
        any_overlap = False
        for p in range(iu.size):
            i, j = iu[p], jv[p]
            d = pos[i] - pos[j]
            dist = float(np.hypot(d[0], d[1]))
            rsum = radii[i] + radii[j]
            overlap = rsum - dist
            if overlap <= 0.0:
                continue
            any_overlap = True
            if dist > 0.0:
                n = d / dist
            else:
                n = np.array([1.0, 0.0])
            vrel_n = float(np.dot(vel[i] - vel[j], n))
            if vrel_n < 0.0:
                impulse = -(1.0 + restitution) * vrel_n / (inv_m[i] + inv_m[j])
                vel[i] += impulse * inv_m[i] * n
                vel[j] -= impulse * inv_m[j] * n
            share_i = inv_m[i] / (inv_m[i] + inv_m[j])
            corr = overlap + 1e-12
            pos[i] += n * corr * share_i
            pos[j] -= n * corr * (1.0 - share_i)
        if not any_overlap:
            break
    return pos, vel


def _step_arrays(pos, vel, radii, mass, coupling, cfg: SimConfig, iu, jv):
    """One semi-implicit Euler substep, in place."""
    forces = _pair_forces(pos, vel, radii, mass, coupling, cfg, iu, jv)
    vel += forces / mass[:, None] * cfg.dt
    pos += vel * cfg.dt
    return _resolve_overlaps(pos, vel, radii, mass, cfg.restitution, iu, jv)


def compute_forces(
    states: Sequence[ObjectState], props: Sequence[PhysProps], cfg: SimConfig
) -> list[np.ndarray]:
    """Total force on each disc: pairwise charge forces plus damping.

    Pair magnitudes follow ``coulomb_k * |q_i*q_j| / max(dist, floor)^2``
    where the floor is the larger of the radii sum and the configured
    softening distance. Contributions within a pair are equal and opposite.
    """
    pos, vel, radii, mass, charge = _as_arrays(states, props)
    iu, jv = np.triu_indices(len(states), k=1)
    coupling = coupling_from_charges(charge)
    forces = _pair_forces(pos, vel, radii, mass, coupling, cfg, iu, jv)
    return [forces[i] for i in range(len(states))]


def resolve_collisions(
    states: Sequence[ObjectState], props: Sequence[PhysProps], cfg: SimConfig
) -> list[ObjectState]:
    """Resolve every overlapping, approaching pair with an elastic impulse
    along the contact normal and separate the discs to non-overlap.
    Separated inputs pass through unchanged."""
    pos, vel, radii, mass, _ = _as_arrays(states, props)
    iu, jv = np.triu_indices(len(states), k=1)
    pos, vel = _resolve_overlaps(pos, vel, radii, mass, cfg.restitution, iu, jv)
    out = []
    for i, s in enumerate(states):
        out.append(ObjectState(pos[i], vel[i], s.radius, s.present))
    return out


def step(
    states: Sequence[ObjectState], props: Sequence[PhysProps], cfg: SimConfig
) -> list[ObjectState]:
    """Advance one integrator step: accelerate, move, resolve contacts,
    then refresh frame presence."""
    pos, vel, radii, mass, charge = _as_arrays(states, props)
    iu, jv = np.triu_indices(len(states), k=1)
    coupling = coupling_from_charges(charge)
    pos, vel = _step_arrays(pos, vel, radii, mass, coupling, cfg, iu, jv)
    present = presence_mask(pos, radii, cfg.world_bounds)
    return [
        ObjectState(pos[i], vel[i], states[i].radius, bool(present[i]))
        for i in range(len(states))
    ]


def simulate_arrays(
    pos0: np.ndarray,
    vel0: np.ndarray,
    radii: np.ndarray,
    mass: np.ndarray,
    coupling: np.ndarray,
    cfg: SimConfig,
    n_frames: int,
) -> Trajectory:
    """Array-level rollout recording ``n_frames`` frames, the first being
    the initial state. Used by every higher layer that already holds
    arrays; `simulate` is the ObjectState-facing wrapper."""
    sub = cfg.substeps_per_frame()
    n = pos0.shape[0]
    pos = pos0.astype(np.float64).copy()
    vel = vel0.astype(np.float64).copy()
    if _kernel.HAVE_NUMBA and cfg.softening_min_dist > 0:
        x0, y0, x1, y1 = cfg.world_bounds
        out_pos, out_vel, out_present = _kernel.rollout_kernel(
            pos,
            vel,
            radii.astype(np.float64),
            mass.astype(np.float64),
            coupling.astype(np.float64),
            cfg.dt,
            cfg.coulomb_k,
            cfg.damping,
            cfg.restitution,
            cfg.softening_min_dist,
            x0,
            y0,
            x1,
            y1,
            sub,
            n_frames,
        )
        return Trajectory(out_pos, radii.copy(), out_present, cfg.record_fps, out_vel)
    iu, jv = np.triu_indices(n, k=1)
    out_pos = np.empty((n_frames, n, 2))
    out_vel = np.empty((n_frames, n, 2))
    out_present = np.empty((n_frames, n), dtype=bool)
    out_pos[0] = pos
    out_vel[0] = vel
    out_present[0] = presence_mask(pos, radii, cfg.world_bounds)
    for f in range(1, n_frames):
        for _ in range(sub):
            pos, vel = _step_arrays(pos, vel, radii, mass, coupling, cfg, iu, jv)
        out_pos[f] = pos
        out_vel[f] = vel
        out_present[f] = presence_mask(pos, radii, cfg.world_bounds)
    return Trajectory(out_pos, radii.copy(), out_present, cfg.record_fps, out_vel)


def simulate(
    initial: Sequence[ObjectState],
    props: Sequence[PhysProps],
    cfg: SimConfig,
    duration: float,
) -> Trajectory:
    """Roll the world forward for ``duration`` seconds, recording
    ``round(duration * record_fps)`` frames (frame 0 is the initial state)."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    cfg.validate()
    pos, vel, radii, mass, charge = _as_arrays(initial, props)
    n_frames = round(duration * cfg.record_fps)
    return simulate_arrays(pos, vel, radii, mass, coupling_from_charges(charge), cfg, n_frames)
