"""Optional numba-accelerated integrator loop.

Same semantics as the numpy path in ``physics.simulate_arrays``; selected at
import time when numba is available and softening is enabled. Compiled
without fastmath so results are deterministic.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def rollout_kernel(
    pos,
    vel,
    radii,
    mass,
    coupling,
    dt,
    k,
    damping,
    restitution,
    soft_min,
    bx0,
    by0,
    bx1,
    by1,
    sub,
    n_frames,
):  # pragma: no cover - exercised via physics.simulate_arrays
    n = pos.shape[0]
    out_pos = np.empty((n_frames, n, 2))
    out_vel = np.empty((n_frames, n, 2))
    out_present = np.empty((n_frames, n), dtype=np.bool_)
    fx = np.zeros(n)
    fy = np.zeros(n)
    for f in range(n_frames):
        if f > 0:
            for _ in range(sub):
                for i in range(n):
                    fx[i] = -damping * mass[i] * vel[i, 0]
                    fy[i] = -damping * mass[i] * vel[i, 1]
                for i in range(n):
                    for j in range(i + 1, n):
                        qq = coupling[i, j]
                        if qq != 0.0:
                            dx = pos[i, 0] - pos[j, 0]
                            dy = pos[i, 1] - pos[j, 1]
                            dist = math.sqrt(dx * dx + dy * dy)
                            floor = radii[i] + radii[j]
                            if soft_min > floor:
                                floor = soft_min
                            eff = dist if dist > floor else floor
                            mag = k * qq / (eff * eff)
                            if dist > 0.0:
                                ux = dx / dist
                                uy = dy / dist
                                fx[i] += mag * ux
                                fy[i] += mag * uy
                                fx[j] -= mag * ux
                                fy[j] -= mag * uy
                for i in range(n):
                    vel[i, 0] += fx[i] / mass[i] * dt
                    vel[i, 1] += fy[i] / mass[i] * dt
                    pos[i, 0] += vel[i, 0] * dt
                    pos[i, 1] += vel[i, 1] * dt
                for _pass in range(8):
                    any_overlap = False
                    for i in range(n):
                        for j in range(i + 1, n):
                            dx = pos[i, 0] - pos[j, 0]
                            dy = pos[i, 1] - pos[j, 1]
                            dist = math.sqrt(dx * dx + dy * dy)
                            rsum = radii[i] + radii[j]
                            overlap = rsum - dist
                            if overlap <= 0.0:
                                continue
                            any_overlap = True
                            if dist > 0.0:
                                nx = dx / dist
                                ny = dy / dist
                            else:
                                nx = 1.0
                                ny = 0.0
                            inv_i = 1.0 / mass[i]
                            inv_j = 1.0 / mass[j]
                            vrel = (vel[i, 0] - vel[j, 0]) * nx + (vel[i, 1] - vel[j, 1]) * ny
                            if vrel < 0.0:
                                impulse = -(1.0 + restitution) * vrel / (inv_i + inv_j)
                                vel[i, 0] += impulse * inv_i * nx
                                vel[i, 1] += impulse * inv_i * ny
                                vel[j, 0] -= impulse * inv_j * nx
                                vel[j, 1] -= impulse * inv_j * ny
                            share_i = inv_i / (inv_i + inv_j)
                            corr = overlap + 1e-12
                            pos[i, 0] += nx * corr * share_i
                            pos[i, 1] += ny * corr * share_i
                            pos[j, 0] -= nx * corr * (1.0 - share_i)
                            pos[j, 1] -= ny * corr * (1.0 - share_i)
                    if not any_overlap:
                        break
        for i in range(n):
            out_pos[f, i, 0] = pos[i, 0]
            out_pos[f, i, 1] = pos[i, 1]
            out_vel[f, i, 0] = vel[i, 0]
            out_vel[f, i, 1] = vel[i, 1]
            out_present[f, i] = (
                pos[i, 0] >= bx0 - radii[i]
                and pos[i, 0] <= bx1 + radii[i]
                and pos[i, 1] >= by0 - radii[i]
                and pos[i, 1] <= by1 + radii[i]
            )
    return out_pos, out_vel, out_present
