"""Discrete parallel transport frames along simulated paths.

Flat-chart models carry the trivial connection, so transport is the identity.
On the cap each step composes the rotation carrying one ambient position to
the next (exact transport along the connecting geodesic); accumulated frames
are re-orthonormalized periodically and expressed in the chart orthonormal
bases of the endpoints.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .geometry import ManifoldModel
from .grids import DriverPath, TimeGrid

REORTHONORMALIZE_EVERY = 64


@dataclass
class TransportFrame:
    """Per-node orthonormal matrices mapping T_{Y_0} to T_{Y_{t_i}}."""

    matrices: np.ndarray = field(repr=False)  # (N+1, d, d)

    def __len__(self) -> int:
        return self.matrices.shape[0]


def _path_points(path_or_points) -> np.ndarray:
    pts = getattr(path_or_points, "points", path_or_points)
    return np.asarray(pts, dtype=float)


def transport_batch(model: ManifoldModel, points: np.ndarray) -> np.ndarray:
    """Transport matrices along batched paths, shape (P, N+1, d, d)."""
    points = np.asarray(points, dtype=float)
    P, n, d = points.shape
    if model.is_flat_chart:
        out = np.zeros((P, n, d, d))
        out[..., range(d), range(d)] = 1.0
        return out

    amb = geo.cap_to_ambient(points)  # (P, n, 3)
    frames = np.empty((P, n, 2, 2))
    frames[:, 0] = np.eye(2)
    basis0 = geo.cap_basis(points[:, 0])  # (P, 3, 2)
    f = basis0.copy()  # transported images of the start basis, ambient (P, 3, 2)
    for i in range(n - 1):
        u = amb[:, i]
        v = amb[:, i + 1]
        f = _rotate_frame(u, v, f)
        if (i + 1) % REORTHONORMALIZE_EVERY == 0:
            f = _reorthonormalize(v, f)
        basis = geo.cap_basis(points[:, i + 1])  # (P, 3, 2)
        frames[:, i + 1] = np.einsum("pkc,pkj->pcj", basis, f)
    return frames


def _rotate_frame(u, v, f):
    """Apply the rotation taking unit vector u to v to frame columns f."""
    axis = np.cross(u, v)
    s = np.linalg.norm(axis, axis=-1, keepdims=True)
    c = np.sum(u * v, axis=-1, keepdims=True)
    tiny = s < 1e-14
    k = axis / np.where(tiny, 1.0, s)
    out = np.empty_like(f)
    for j in range(f.shape[-1]):
        col = f[..., j]
        kxc = np.cross(k, col)
        kdc = np.sum(k * col, axis=-1, keepdims=True)
        rot = c * col + s * kxc + (1.0 - c) * kdc * k
        out[..., j] = np.where(tiny, col, rot)
    return out


def _reorthonormalize(base_point, f):
    """Project columns onto the tangent plane at base_point and Gram-Schmidt."""
    out = f.copy()
    for j in range(f.shape[-1]):
        col = out[..., j]
        col = col - base_point * np.sum(base_point * col, axis=-1, keepdims=True)
        for k in range(j):
            prev = out[..., k]
            col = col - prev * np.sum(prev * col, axis=-1, keepdims=True)
        out[..., j] = col / np.linalg.norm(col, axis=-1, keepdims=True)
    return out


def parallel_transport(model: ManifoldModel, path_or_points) -> TransportFrame:
    """Transport frame along one nodal path."""
    pts = _path_points(path_or_points)
    return TransportFrame(matrices=transport_batch(model, pts[None])[0])


def transport_convergence_check(
    model: ManifoldModel,
    a_list,
    driver: DriverPath,
    grid: TimeGrid,
    v,
    x0=None,
    aux_seed: int = 0,
):
    """Sup-norm gap between transported vectors along coupled penalized and
    reflected paths, one row per smoothing level a."""
    from . import stepping  # local import to avoid a cycle at module load

    v = np.asarray(getattr(v, "components", v), dtype=float)
    if x0 is None:
        x0 = default_start(model)
    dB = driver.increments[None]
    ref = stepping.integrate_reflected_batch(model, x0, dB, grid)
    ref_frames = transport_batch(model, ref["points"])
    ref_v = ref_frames[0] @ v
    rows = []
    for a in a_list:
        pen = stepping.integrate_penalized_batch(model, a, x0, dB, grid, aux_seed=aux_seed)
        pen_v = transport_batch(model, pen["points"])[0] @ v
        gap = float(np.linalg.norm(pen_v - ref_v, axis=-1).max())
        rows.append({"a": float(a), "sup_gap": gap})
    return rows


def default_start(model: ManifoldModel) -> np.ndarray:
    """A generic interior start point used by convergence studies."""
    if model.id == geo.HALF_LINE:
        return np.array([0.5])
    if model.id == geo.HALF_SPACE:
        x = np.zeros(model.dim)
        x[-1] = 0.5
        return x
    if model.id == geo.FLAT_DISK:
        return np.array([0.5, 0.0])
    return np.array([model.theta0 - 0.15, 0.0])
