"""Batched time stepping for the built-in models (internal).

State layout: chart points, paths along the first axis.  Inside the collar
(R < delta_0) the boundary-distance coordinate is advanced by a guarded scalar
walk driven by increment component 1 only, so coupled runs on a shared driver
see bit-identical Brownian input in the normal direction.  The remaining
regions use plain Euler steps with the blended frame (flat charts) or an
ambient step on the embedded sphere (cap interior, where the polar chart
degenerates).
"""
from __future__ import annotations

import numpy as np

from . import geometry as geo
from .errors import IntegrationError
from .grids import TimeGrid, guard_stream

_MAX_SUBSTEPS = 200
_MAX_BISECT = 20


def tanh_drift_magnitude(a: float, R):
    """Magnitude 2 / (a sinh(2R/a)) of the boundary-repelling drift."""
    z = np.asarray(2.0 * np.asarray(R, dtype=float) / a)
    small = z <= 30.0
    zs = np.where(small, z, 1.0)
    direct = np.where(small, 2.0 / (a * np.sinh(zs)), 0.0)
    ez = np.exp(np.where(small, -np.inf, -z))
    tail = (4.0 / a) * ez / (1.0 - ez * ez)
    out = np.where(small, direct, tail)
    return float(out) if out.ndim == 0 else out


def damping_rate(a: float, R):
    """Normal damping rate (4/a^2) cosh/sinh^2 (2R/a), evaluated stably."""
    z = np.asarray(2.0 * np.asarray(R, dtype=float) / a)
    small = z <= 30.0
    zs = np.where(small, z, 1.0)
    direct = np.where(small, (4.0 / a**2) * np.cosh(zs) / np.sinh(zs) ** 2, 0.0)
    ez = np.exp(np.where(small, -np.inf, -z))
    tail = (8.0 / a**2) * (ez + ez**3) / (1.0 - ez * ez) ** 2
    out = np.where(small, direct, tail)
    return float(out) if out.ndim == 0 else out


def _collar_radial_penalized(model, a, R0, w_total, h_total, seed, node):
    """Advance collar radial coordinates.

    Returns (R_new, local_time_inc, damping_inc), the increments accumulating
    the drift magnitude and the normal damping rate over the sub-steps.
    Sub-steps are shortened whenever |drift| * h exceeds R/2 and bisected with
    Brownian-bridge interpolation if a proposal crosses zero.
    """
    R = np.asarray(R0, dtype=float).copy()
    rem = np.full_like(R, h_total)
    w = np.asarray(w_total, dtype=float).copy()
    L_inc = np.zeros_like(R)
    C_inc = np.zeros_like(R)
    attempt = 0
    for _ in range(_MAX_SUBSTEPS):
        active = rem > 0
        if not active.any():
            return R, L_inc, C_inc
        mag = tanh_drift_magnitude(a, np.maximum(R, 1e-300))
        drift = mag + 0.5 * geo.laplacian_R_of_R(model, np.maximum(R, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            h_cap = np.where(np.abs(drift) > 0, 0.5 * R / np.abs(drift), np.inf)
        h = np.minimum(rem, h_cap)
        h = np.maximum(h, rem * 2.0**-_MAX_BISECT)
        safe_rem = np.where(rem > 0, rem, 1.0)
        theta = np.where(active, h / safe_rem, 0.0)
        z = guard_stream(seed, node, attempt).standard_normal(R.size)
        attempt += 1
        bridge = theta * w + np.sqrt(np.maximum(theta * (1.0 - theta), 0.0) * rem) * z
        delta = np.where(theta >= 1.0, w, bridge)
        prop = R + drift * h + delta
        bad = (prop <= 0) & active
        level = 0
        while bad.any():
            if level >= _MAX_BISECT:
                raise IntegrationError("positivity guard exhausted", node_index=node)
            h = np.where(bad, 0.5 * h, h)
            theta = np.where(active, h / safe_rem, 0.0)
            z = guard_stream(seed, node, attempt).standard_normal(R.size)
            attempt += 1
            bridge = theta * w + np.sqrt(np.maximum(theta * (1.0 - theta), 0.0) * rem) * z
            delta = np.where(bad, np.where(theta >= 1.0, w, bridge), delta)
            prop = np.where(bad, R + drift * h + delta, prop)
            bad = (prop <= 0) & active
            level += 1
        L_inc = np.where(active, L_inc + mag * h, L_inc)
        C_inc = np.where(active, C_inc + damping_rate(a, np.maximum(R, 1e-300)) * h, C_inc)
        R = np.where(active, prop, R)
        w = np.where(active, w - delta, w)
        rem = np.where(active, np.maximum(rem - h, 0.0), rem)
    raise IntegrationError("substep budget exhausted", node_index=node)


def _disk_noise(x, dB, beta_sqrt, comp_sqrt):
    """Blended-frame noise displacement for the disk, Cartesian components."""
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    e_r = np.where(r > 0, x / np.maximum(r, 1e-300), 0.0)
    e_t = np.stack([-e_r[..., 1], e_r[..., 0]], axis=-1)
    collar_part = -e_r * dB[:, 0:1] + e_t * dB[:, 1:2]
    return beta_sqrt[:, None] * collar_part + comp_sqrt[:, None] * dB[:, 2:4]


def _cap_chart_noise(x, dB, beta_sqrt, comp_sqrt):
    """Blended-frame noise in (theta, phi-hat) orthonormal components."""
    grad = geo._cap_gradient_frame(x)  # (..., 3, 2)
    interior = np.einsum("pkc,pk->pc", grad, dB[:, 2:5])
    collar_part = np.stack([-dB[:, 0], dB[:, 1]], axis=-1)
    return beta_sqrt[:, None] * collar_part + comp_sqrt[:, None] * interior


def _step_curved_penalized(model, a, x, dB_i, dt, seed, node, depth=0):
    """One penalized step for a curved-chart model; returns (x_new, dL, dC)."""
    R = geo.raw_boundary_distance(model, x)
    delta0 = model.tubular_radius
    collar = R < delta0
    beta = geo.blend(model, R)
    bs, ci = np.sqrt(beta), np.sqrt(1.0 - beta)
    new = np.empty_like(x)
    dL = np.zeros(x.shape[0])
    dC = np.zeros(x.shape[0])

    if model.id == geo.FLAT_DISK:
        if collar.any():
            idx = collar
            r = 1.0 - R[idx]
            ang = np.arctan2(x[idx, 1], x[idx, 0]) + dB_i[idx, 1] / r
            R_new, dl, dc = _collar_radial_penalized(model, a, R[idx], dB_i[idx, 0], dt, seed, node)
            new[idx, 0] = (1.0 - R_new) * np.cos(ang)
            new[idx, 1] = (1.0 - R_new) * np.sin(ang)
            dL[idx] = dl
            dC[idx] = dc
        out = ~collar
        if out.any():
            mag = tanh_drift_magnitude(a, R[out])
            noise = _disk_noise(x[out], dB_i[out], bs[out], ci[out])
            r = np.linalg.norm(x[out], axis=-1, keepdims=True)
            e_r = np.where(r > 0, x[out] / np.maximum(r, 1e-300), 0.0)
            new[out] = x[out] + noise - (mag * dt)[:, None] * e_r
            dL[out] = mag * dt
            dC[out] = damping_rate(a, R[out]) * dt
    else:  # spherical cap
        theta = x[:, 0]
        near = theta >= model.theta0 - 2.0 * delta0
        both = collar & near
        if both.any():
            idx = both
            R_new, dl, dc = _collar_radial_penalized(model, a, R[idx], dB_i[idx, 0], dt, seed, node)
            new[idx, 0] = model.theta0 - R_new
            new[idx, 1] = x[idx, 1] + dB_i[idx, 1] / np.sin(theta[idx])
            dL[idx] = dl
            dC[idx] = dc
        mid = near & ~collar
        if mid.any():
            mag = tanh_drift_magnitude(a, R[mid])
            noise = _cap_chart_noise(x[mid], dB_i[mid], bs[mid], ci[mid])
            cot = 1.0 / np.tan(theta[mid])
            new[mid, 0] = theta[mid] + noise[:, 0] + 0.5 * cot * dt - mag * dt
            new[mid, 1] = x[mid, 1] + noise[:, 1] / np.sin(theta[mid])
            dL[mid] = mag * dt
            dC[mid] = damping_rate(a, R[mid]) * dt
        far = ~near
        if far.any():
            p = geo.cap_to_ambient(x[far])
            dBv = dB_i[far, 2:5]
            noise = dBv - p * np.sum(p * dBv, axis=-1, keepdims=True)
            mag = tanh_drift_magnitude(a, R[far])
            e_theta = geo.cap_basis(x[far])[..., 0]
            prop = p + noise - p * dt - (mag * dt)[:, None] * e_theta
            prop /= np.linalg.norm(prop, axis=-1, keepdims=True)
            new[far] = geo.cap_from_ambient(prop)
            dL[far] = mag * dt
            dC[far] = damping_rate(a, R[far]) * dt

    bad = geo.raw_boundary_distance(model, new) <= 0
    if bad.any():
        if depth >= _MAX_BISECT:
            raise IntegrationError("positivity guard exhausted", node_index=node)
        # redo escaped steps (possible only on coarse grids, off the collar)
        # in two bridge halves
        idx = np.nonzero(bad)[0]
        z = guard_stream(seed, node, 4096 + depth).standard_normal(dB_i.shape)[idx]
        half1 = 0.5 * dB_i[idx] + 0.5 * np.sqrt(dt) * z
        half2 = dB_i[idx] - half1
        x1, dl1, dc1 = _step_curved_penalized(model, a, x[idx], half1, dt / 2, seed, node, depth + 1)
        x2, dl2, dc2 = _step_curved_penalized(model, a, x1, half2, dt / 2, seed, node, depth + 1)
        new[idx] = x2
        dL[idx] = dl1 + dl2
        dC[idx] = dc1 + dc2
    return new, dL, dC


def integrate_penalized_batch(
    model: geo.ManifoldModel,
    a: float,
    x0: np.ndarray,
    dB: np.ndarray,
    grid: TimeGrid,
    aux_seed: int = 0,
):
    """Euler-Maruyama with boundary-repelling drift; returns dict of arrays.

    dB has shape (P, N, m).  Output: points (P, N+1, d), R (P, N+1),
    L (P, N+1) (left-endpoint accumulation of the drift magnitude).
    """
    if a <= 0:
        raise ValueError("a must be positive")
    dB = np.asarray(dB, dtype=float)
    P, N, m = dB.shape
    if m != model.frame_count:
        raise ValueError("driver component count does not match model frame count")
    if N != grid.steps:
        raise ValueError("driver length does not match grid")
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    R0 = float(geo.boundary_distance(model, x0))
    if not R0 > 0:
        raise ValueError("start point must lie in the interior")
    dt = grid.dt
    d = model.dim

    points = np.empty((P, N + 1, d))
    R_out = np.empty((P, N + 1))
    L_out = np.empty((P, N + 1))
    C_out = np.empty((P, N + 1))
    points[:, 0] = x0
    R_out[:, 0] = R0
    L_out[:, 0] = 0.0
    C_out[:, 0] = 0.0

    if model.id in (geo.HALF_LINE, geo.HALF_SPACE):
        R = np.full(P, R0)
        L = np.zeros(P)
        C = np.zeros(P)
        tang = np.tile(x0[: d - 1], (P, 1))
        for i in range(N):
            R, dL, dC = _collar_radial_penalized(model, a, R, dB[:, i, 0], dt, aux_seed, i)
            L += dL
            C += dC
            if d > 1:
                tang = tang + dB[:, i, 1:]
                points[:, i + 1, : d - 1] = tang
            points[:, i + 1, d - 1] = R
            R_out[:, i + 1] = R
            L_out[:, i + 1] = L
            C_out[:, i + 1] = C
        return {"points": points, "R": R_out, "L": L_out, "C": C_out}

    x = np.tile(x0, (P, 1))
    L = np.zeros(P)
    C = np.zeros(P)
    for i in range(N):
        x, dL, dC = _step_curved_penalized(model, a, x, dB[:, i], dt, aux_seed, i)
        L += dL
        C += dC
        points[:, i + 1] = x
        R_out[:, i + 1] = geo.raw_boundary_distance(model, x)
        L_out[:, i + 1] = L
        C_out[:, i + 1] = C
    return {"points": points, "R": R_out, "L": L_out, "C": C_out}


def _project_to_domain(model, pts, R):
    """Push points with negative boundary distance back onto the boundary."""
    neg = R < 0
    if not np.any(neg):
        return pts, R, np.zeros_like(R)
    push = np.where(neg, -R, 0.0)
    out = pts.copy()
    if model.id == geo.FLAT_DISK:
        nrm = np.linalg.norm(out, axis=-1, keepdims=True)
        out = np.where(neg[:, None], out / np.maximum(nrm, 1e-300), out)
    elif model.id == geo.SPHERICAL_CAP:
        out[:, 0] = np.where(neg, model.theta0, out[:, 0])
    else:
        out[:, -1] = np.where(neg, 0.0, out[:, -1])
    return out, np.where(neg, 0.0, R), push


def integrate_reflected_batch(
    model: geo.ManifoldModel,
    x0: np.ndarray,
    dB: np.ndarray,
    grid: TimeGrid,
):
    """Reference reflected paths on a shared driver; returns dict of arrays.

    Flat-boundary models solve the normal coordinate exactly as the running
    infimum of the discretized driver; curved models take an Euler step and
    project back into the domain, the push distance feeding the local time.
    """
    dB = np.asarray(dB, dtype=float)
    P, N, m = dB.shape
    if m != model.frame_count:
        raise ValueError("driver component count does not match model frame count")
    if N != grid.steps:
        raise ValueError("driver length does not match grid")
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    R0 = float(geo.boundary_distance(model, x0))
    dt = grid.dt
    d = model.dim

    if model.id in (geo.HALF_LINE, geo.HALF_SPACE):
        # identical arithmetic to skorohod1d.skorohod_map on each path
        f = np.concatenate([np.zeros((P, 1)), np.cumsum(dB[:, :, 0], axis=1)], axis=1)
        h = np.maximum.accumulate(np.maximum(0.0, -(R0 + f)), axis=1)
        g = R0 + f + h
        points = np.empty((P, N + 1, d))
        points[..., d - 1] = g
        if d > 1:
            points[:, 0, : d - 1] = x0[: d - 1]
            points[:, 1:, : d - 1] = x0[: d - 1] + np.cumsum(dB[:, :, 1:], axis=1)
        return {"points": points, "R": g, "L": h}

    delta0 = model.tubular_radius
    x = np.tile(x0, (P, 1))
    L = np.zeros(P)
    points = np.empty((P, N + 1, d))
    R_out = np.empty((P, N + 1))
    L_out = np.empty((P, N + 1))
    points[:, 0] = x0
    R_out[:, 0] = R0
    L_out[:, 0] = 0.0

    for i in range(N):
        R = geo.raw_boundary_distance(model, x)
        collar = R < delta0
        beta = geo.blend(model, R)
        bs, ci = np.sqrt(beta), np.sqrt(1.0 - beta)
        new = np.empty_like(x)

        if model.id == geo.FLAT_DISK:
            if collar.any():
                idx = collar
                r = 1.0 - R[idx]
                ang = np.arctan2(x[idx, 1], x[idx, 0]) + dB[idx, i, 1] / r
                R_prop = R[idx] + dB[idx, i, 0] + 0.5 * geo.laplacian_R_of_R(model, R[idx]) * dt
                new[idx, 0] = (1.0 - R_prop) * np.cos(ang)
                new[idx, 1] = (1.0 - R_prop) * np.sin(ang)
            out = ~collar
            if out.any():
                new[out] = x[out] + _disk_noise(x[out], dB[out, i], bs[out], ci[out])
        else:
            theta = x[:, 0]
            near = theta >= model.theta0 - 2.0 * delta0
            both = collar & near
            if both.any():
                idx = both
                R_prop = R[idx] + dB[idx, i, 0] + 0.5 * geo.laplacian_R_of_R(model, R[idx]) * dt
                new[idx, 0] = model.theta0 - R_prop
                new[idx, 1] = x[idx, 1] + dB[idx, i, 1] / np.sin(theta[idx])
            mid = near & ~collar
            if mid.any():
                noise = _cap_chart_noise(x[mid], dB[mid, i], bs[mid], ci[mid])
                cot = 1.0 / np.tan(theta[mid])
                new[mid, 0] = theta[mid] + noise[:, 0] + 0.5 * cot * dt
                new[mid, 1] = x[mid, 1] + noise[:, 1] / np.sin(theta[mid])
            far = ~near
            if far.any():
                p = geo.cap_to_ambient(x[far])
                dBv = dB[far, i, 2:5]
                noise = dBv - p * np.sum(p * dBv, axis=-1, keepdims=True)
                prop = p + noise - p * dt
                prop /= np.linalg.norm(prop, axis=-1, keepdims=True)
                new[far] = geo.cap_from_ambient(prop)

        R_new = geo.raw_boundary_distance(model, new)
        new, R_new, push = _project_to_domain(model, new, R_new)
        L += push
        x = new
        points[:, i + 1] = x
        R_out[:, i + 1] = R_new
        L_out[:, i + 1] = L
    return {"points": points, "R": R_out, "L": L_out}
