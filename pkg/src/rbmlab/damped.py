"""Damped parallel transport: smooth, excursion-jump, and limit variants.

All variants integrate, in frame coordinates transported back to the start
tangent space, the linear system

    dw = -1/2 ric(w) dt - kappa <w, q> q dL - (normal damping or jumps),

where ric is the transported Ricci operator (a multiple of the identity on
every built-in model), q spans the transported tangent direction of the
boundary-distance level set and kappa its principal curvature.  The smooth
variant damps the normal row by the exact integrating factor exp(-c dt) of
its stiff linear term; the jump variants erase the normal row at right ends
of interior excursions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .geometry import ManifoldModel
from .grids import DriverPath
from .penalized import PenalizedPath
from .reflected import ReflectedPath, excursions
from .transport import TransportFrame

VARIANT_PENALIZED = "penalized"
VARIANT_EPS = "eps-jump"
VARIANT_LIMIT = "limit"


@dataclass
class DampedState:
    """Damped transport along one path, in start-space coordinates.

    tangential[i] is the block with columns orthogonal to carrier[i];
    normal[i] is the row f_i with w_i = tangential_i + outer(carrier_i, f_i).
    """

    variant: str
    param: float
    times: np.ndarray = field(repr=False)
    tangential: np.ndarray = field(repr=False)  # (N+1, d, d)
    normal: np.ndarray = field(repr=False)  # (N+1, d)
    carrier: np.ndarray = field(repr=False)  # (N+1, d), unit

    @property
    def matrices(self) -> np.ndarray:
        return self.tangential + self.carrier[:, :, None] * self.normal[:, None, :]


@dataclass
class CauchyReport:
    """Inter-level sup gaps of the jump variant as epsilon is halved."""

    epsilons: list[float]
    gaps: list[float]
    nonincreasing: bool


def _safe_unit(vecs):
    nrm = np.linalg.norm(vecs, axis=-1, keepdims=True)
    out = np.where(nrm > 1e-12, vecs / np.maximum(nrm, 1e-300), 0.0)
    # degenerate points (disk center) get an arbitrary unit carrier
    bad = nrm[..., 0] <= 1e-12
    if np.any(bad):
        out = out.copy()
        out[bad, 0] = 1.0
    return out


def _node_geometry(model, points, frames):
    """Transported normal n, level tangent q, curvature kappa per node."""
    P, n, d = points.shape
    nu = _safe_unit(geo._normal_components(model, points))
    if model.id in (geo.HALF_LINE, geo.HALF_SPACE):
        kappa = np.zeros((P, n))
    elif model.id == geo.FLAT_DISK:
        kappa = 1.0 / np.maximum(np.linalg.norm(points, axis=-1), 1e-300)
    else:
        kappa = 1.0 / np.tan(np.clip(points[..., 0], 1e-12, None))
    if d == 1:
        q = np.zeros_like(nu)
    elif model.id == geo.SPHERICAL_CAP:
        q_chart = np.zeros_like(nu)
        q_chart[..., 1] = 1.0
        q = q_chart
    else:
        q = np.stack([-nu[..., 1], nu[..., 0]], axis=-1)
    if frames is not None:
        # transported coordinates: apply inverse (transpose) frame matrices
        nu = np.einsum("pnij,pnj->pni", np.swapaxes(frames, -1, -2), nu)
        q = np.einsum("pnij,pnj->pni", np.swapaxes(frames, -1, -2), q)
    return nu, q, kappa


def _damped_engine(
    model,
    points,
    frames,
    dt,
    dL,
    *,
    c_increments=None,
    jump_flags=None,
    collect="series",
):
    """Shared integrator; see module docstring for the system.

    dL: (P, N) local-time increments, coefficients frozen at left nodes.
    c_increments: (P, N) per-step integrals of the normal damping rate
    (smooth variant) or None.
    jump_flags: (P, N+1) boolean, erase normal row after the step into a
    flagged node (jump variants) or None.
    """
    P, n, d = points.shape
    N = n - 1
    rho = geo.ricci_factor(model)
    nu, q, kappa = _node_geometry(model, points, frames)
    w = np.broadcast_to(np.eye(d), (P, d, d)).copy()

    series = np.empty((P, n, d, d)) if collect == "series" else None
    norm2 = np.empty((P, n)) if collect == "norm2" else None
    normal_rows = np.empty((P, n, d)) if collect in ("series", "normal") else None
    if series is not None:
        series[:, 0] = w
    if norm2 is not None:
        norm2[:, 0] = np.sum(w * w, axis=(1, 2))
    if normal_rows is not None:
        normal_rows[:, 0] = np.einsum("pi,pij->pj", nu[:, 0], w)

    for i in range(N):
        # continuous part, explicit Euler with left-endpoint coefficients
        if rho != 0.0:
            w = w - 0.5 * rho * dt * w
        dl = dL[:, i]
        active = dl > 0
        if active.any():
            qi = q[:, i]
            qw = np.einsum("pi,pij->pj", qi, w)
            fac = np.where(active, kappa[:, i] * dl, 0.0)
            w = w - fac[:, None, None] * (qi[:, :, None] * qw[:, None, :])
        if c_increments is not None:
            shrink = -np.expm1(-c_increments[:, i])  # 1 - exp(-int c), exact factor
            hit = shrink > 0
            if hit.any():
                ni = nu[:, i]
                fw = np.einsum("pi,pij->pj", ni, w)
                w = w - np.where(hit, shrink, 0.0)[:, None, None] * (
                    ni[:, :, None] * fw[:, None, :]
                )
        if jump_flags is not None:
            flagged = jump_flags[:, i + 1]
            if flagged.any():
                ni = nu[:, i + 1]
                fw = np.einsum("pi,pij->pj", ni, w)
                w = w - flagged[:, None, None] * (ni[:, :, None] * fw[:, None, :])
        if series is not None:
            series[:, i + 1] = w
        if norm2 is not None:
            norm2[:, i + 1] = np.sum(w * w, axis=(1, 2))
        if normal_rows is not None:
            normal_rows[:, i + 1] = np.einsum("pi,pij->pj", nu[:, i + 1], w)

    out = {"final": w, "carrier": nu}
    if series is not None:
        out["series"] = series
    if norm2 is not None:
        out["norm2"] = norm2
    if normal_rows is not None:
        out["normal"] = normal_rows
    return out


def _frames_matrices(frame: TransportFrame | None, n: int, d: int):
    if frame is None:
        return None
    mats = frame.matrices
    if mats.shape[0] != n:
        raise ValueError("frame length does not match path")
    return mats[None]


def _state_from(engine_out, variant, param, times):
    series = engine_out["series"][0]
    nu = engine_out["carrier"][0]
    normal = engine_out["normal"][0]
    tangential = series - nu[:, :, None] * normal[:, None, :]
    return DampedState(
        variant=variant,
        param=param,
        times=times,
        tangential=tangential,
        normal=normal,
        carrier=nu,
    )


def damped_penalized(
    model: ManifoldModel, a: float, path: PenalizedPath, frame: TransportFrame | None = None
) -> DampedState:
    """Smooth damped transport along a penalized path.

    The stiff normal damping is integrated by its exact exponential factor
    per step; curvature terms use explicit Euler with the smoothed local-time
    increments stored on the path.
    """
    pts = path.points[None]
    frames = None if model.is_flat_chart else _require_frames(model, path, frame)
    out = _damped_engine(
        model,
        pts,
        frames,
        path.grid.dt,
        np.diff(path.local_time)[None],
        c_increments=np.diff(path.damping_integral)[None],
        collect="series",
    )
    return _state_from(out, VARIANT_PENALIZED, a, path.grid.times)


def _require_frames(model, path, frame):
    if frame is None:
        from .transport import parallel_transport

        frame = parallel_transport(model, path.points)
    return _frames_matrices(frame, path.points.shape[0], model.dim)


def _jump_flag_array(path: ReflectedPath, eps: float, eta: float | None):
    flags = np.zeros(path.points.shape[0], dtype=bool)
    exc = excursions(path, eps, eta)
    flags[exc.right_ends] = True
    return flags


def damped_eps(
    model: ManifoldModel,
    path: ReflectedPath,
    frame: TransportFrame | None,
    eps: float,
    eta: float | None = None,
) -> DampedState:
    """Jump damped transport: the normal row is erased exactly at the right
    end of every interior excursion of duration >= eps, after the continuous
    update into that node."""
    frames = None if model.is_flat_chart else _require_frames(model, path, frame)
    out = _damped_engine(
        model,
        path.points[None],
        frames,
        path.grid.dt,
        np.diff(path.local_time)[None],
        jump_flags=_jump_flag_array(path, eps, eta)[None],
        collect="series",
    )
    return _state_from(out, VARIANT_EPS, eps, path.grid.times)


def damped_limit(
    model: ManifoldModel,
    path: ReflectedPath,
    frame: TransportFrame | None,
    eps0: float,
    levels: int,
    eta: float | None = None,
):
    """Jump variants at eps0 * 2^-k for k < levels, plus a Cauchy report.

    Returns the finest-level state and the sup-norm gaps between consecutive
    levels; a non-monotone gap sequence is reported, not raised.
    """
    if levels < 2:
        raise ValueError("need at least two levels")
    eps_list = [eps0 * 2.0**-k for k in range(levels)]
    states = [damped_eps(model, path, frame, e, eta) for e in eps_list]
    gaps = []
    for s0, s1 in zip(states[:-1], states[1:]):
        diff = s0.matrices - s1.matrices
        gaps.append(float(np.sqrt(np.sum(diff * diff, axis=(1, 2))).max()))
    noninc = all(g1 <= 2.0 * g0 + 1e-12 for g0, g1 in zip(gaps[:-1], gaps[1:]))
    report = CauchyReport(epsilons=eps_list, gaps=gaps, nonincreasing=noninc)
    return states[-1], report


def limit_state(
    model: ManifoldModel,
    path: ReflectedPath,
    frame: TransportFrame | None = None,
    eta: float | None = None,
) -> DampedState:
    """Discrete limit variant: jumps at every excursion right end resolved by
    the grid (duration threshold of one step)."""
    state = damped_eps(model, path, frame, eps=path.grid.dt * 0.5, eta=eta)
    return DampedState(
        variant=VARIANT_LIMIT,
        param=0.0,
        times=state.times,
        tangential=state.tangential,
        normal=state.normal,
        carrier=state.carrier,
    )


def normal_part_formula_check(
    model: ManifoldModel,
    path: ReflectedPath,
    frame: TransportFrame | None,
    state: DampedState,
    driver: DriverPath,
    v=None,
    eta: float | None = None,
) -> float:
    """Residual of the normal-part representation along one path.

    Reconstructs the running normal component of the damped transport from
    its stochastic representation (initial normal part, Ricci-against-normal
    quadrature, and the transport-against-normal-field increments) and
    compares with the stored normal row between boundary contacts.  Returns
    the sup-node absolute residual for the start vector v (default: the
    inward normal at the start).
    """
    if state.variant != VARIANT_LIMIT:
        raise ValueError("check requires the limit-variant state")
    pts = path.points
    n_nodes, d = pts.shape
    dt = path.grid.dt
    eta = path.eta if eta is None else eta
    frames = None if model.is_flat_chart else _require_frames(model, path, frame)
    nu_t, q_t, kappa = _node_geometry(model, pts[None], frames)
    nu_t, q_t, kappa = nu_t[0], q_t[0], kappa[0]
    if v is None:
        v = nu_t[0]
    v = np.asarray(getattr(v, "components", v), dtype=float)

    w_v = state.matrices @ v  # (N+1, d) transported image of v
    f = np.einsum("ni,ni->n", nu_t, w_v)
    rho = geo.ricci_factor(model)

    # q-direction component of the frame noise at the left nodes
    F = geo.frame_matrix(model, pts[:-1])  # (N, m, d)
    noise = np.einsum("nmd,nm->nd", F, driver.increments)  # (N, d) chart comps
    if model.id == geo.SPHERICAL_CAP:
        q_chart = np.zeros((n_nodes, d))
        q_chart[:, 1] = 1.0
    elif d > 1:
        nu_chart = _safe_unit(geo._normal_components(model, pts))
        q_chart = np.stack([-nu_chart[:, 1], nu_chart[:, 0]], axis=-1)
    else:
        q_chart = np.zeros((n_nodes, d))
    noise_q = np.einsum("nd,nd->n", noise, q_chart[:-1])

    qw = np.einsum("ni,ni->n", q_t, w_v)
    incr = (
        -0.5 * rho * f[:-1] * dt
        - kappa[:-1] * noise_q * qw[:-1]
        - 0.5 * kappa[:-1] ** 2 * f[:-1] * dt
    )
    r = np.concatenate([[f[0]], f[0] + np.cumsum(incr)])

    contact = path.boundary_dist < eta
    idx = np.arange(n_nodes)
    last = np.where(contact, idx, -1)
    last = np.maximum.accumulate(last)
    r_alpha = np.where(last >= 0, r[np.maximum(last, 0)], 0.0)
    return float(np.abs(f - (r - r_alpha)).max())
