"""1-jets on finite sets and the pairwise extension criteria.

A 1-jet assigns a value and a gradient to every point of a finite set
E in R^n (n <= 4).  This module implements the intrinsic two-point
criterion ``check_W``, its closed form ``check_wells_W11`` for the
linear modulus, the half-extrinsic criterion ``check_mg`` whose inner
minimization runs over ambient points x, the sharp sup-ratio functional
``compute_A``, the gradient modulus ``m_omega_G``, and the constant
comparisons between all of them in ``check_equivalences``.

The inner problems over x are solved on a planar slice: both the
mg-objective and the A-ratio depend on x only through the inner product
with G(y)-G(z) and the distances to y and z, so projecting x onto the
affine plane through y and z spanned by {z-y, G(y)-G(z)} never hurts
the objective.  The slice is scanned on a coarse grid and refined with
a short Nelder-Mead run.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .modulus import Modulus
from .reports import CheckReport, as_point_list

__all__ = [
    "Jet",
    "SearchBox",
    "CheckReport",
    "check_W",
    "check_wells_W11",
    "check_mg",
    "compute_A",
    "m_omega_G",
    "check_equivalences",
]

BISECT_LO = 1e-8
BISECT_HI = 1e8
TOL_CLOSED = 1e-9
TOL_INNER = 1e-6

# Pairs refined with Nelder-Mead after the coarse scan: all of them for
# small sets, the best _REFINE_CAP coarse candidates for dense ones.
_REFINE_CAP = 64
_REFINE_ALL_BELOW = 256


def worker_count() -> int:
    """Worker cap from the JETX_THREADS environment variable (default 1)."""
    try:
        w = int(os.environ.get("JETX_THREADS", "1"))
    except ValueError:
        w = 1
    return max(1, min(w, os.cpu_count() or 1))


@dataclass(frozen=True)
class Jet:
    """Finite 1-jet: points of E with values f and gradients G."""

    points: np.ndarray
    values: np.ndarray
    gradients: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        grads = np.asarray(self.gradients, dtype=float)
        if grads.ndim == 1:
            grads = grads[:, None]
        if pts.ndim != 2 or grads.ndim != 2:
            raise ValueError("points and gradients must be 2-d arrays")
        n = pts.shape[1]
        if not (1 <= n <= 4):
            raise ValueError("jet dimension must be between 1 and 4")
        if not (len(pts) == len(vals) == len(grads)) or len(pts) < 1:
            raise ValueError("points, values and gradients must have equal length >= 1")
        if grads.shape[1] != n:
            raise ValueError("gradient dimension does not match point dimension")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(vals))
                and np.all(np.isfinite(grads))):
            raise ValueError("jet entries must be finite")
        if len(pts) > 1:
            diff = pts[:, None, :] - pts[None, :, :]
            dist = np.sqrt(np.sum(diff * diff, axis=-1))
            np.fill_diagonal(dist, np.inf)
            if dist.min() <= 1e-12:
                raise ValueError("jet points must be pairwise distinct (min distance > 1e-12)")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "gradients", grads)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def diameter(self) -> float:
        if self.size < 2:
            return 0.0
        diff = self.points[:, None, :] - self.points[None, :, :]
        return float(np.sqrt(np.sum(diff * diff, axis=-1)).max())

    @classmethod
    def from_dict(cls, d) -> "Jet":
        pts = np.asarray(d["points"], dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if "dim" in d and int(d["dim"]) != pts.shape[1]:
            raise ValueError("declared dim does not match the point coordinates")
        return cls(points=pts, values=d["values"], gradients=d["gradients"])

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "points": [list(map(float, p)) for p in self.points],
            "values": [float(v) for v in self.values],
            "gradients": [list(map(float, g)) for g in self.gradients],
        }


@dataclass(frozen=True)
class SearchBox:
    """Protocol for the planar inner searches.

    ``half_width`` is the half-side of the slice box (default four times
    the set diameter), ``resolution`` the coarse grid count per slice
    axis, ``refine_steps`` the Nelder-Mead iteration budget.
    """

    half_width: float | None = None
    resolution: int = 101
    refine_steps: int = 20

    def width_for(self, jet: Jet) -> float:
        if self.half_width is not None:
            if self.half_width <= 0:
                raise ValueError("half_width must be positive")
            return float(self.half_width)
        return 4.0 * max(jet.diameter, 1.0)


# ---------------------------------------------------------------------------
# closed-form pairwise checks


def _pair_matrices(jet: Jet):
    P, f, G = jet.points, jet.values, jet.gradients
    diff = P[None, :, :] - P[:, None, :]          # diff[i, j] = P_j - P_i
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    gdiff = G[:, None, :] - G[None, :, :]          # G_i - G_j
    gnorm = np.sqrt(np.sum(gdiff * gdiff, axis=-1))
    return diff, dist, gnorm


def _worst_pair(slack: np.ndarray):
    """Worst off-diagonal entry; the diagonal is identically zero and
    only meaningful for single-point sets."""
    if slack.shape[0] == 1:
        return 0, 0, float(slack[0, 0])
    masked = slack.copy()
    np.fill_diagonal(masked, np.inf)
    i, j = np.unravel_index(np.argmin(masked), masked.shape)
    return int(i), int(j), float(masked[i, j])


def check_W(jet: Jet, m: Modulus, M: float, tol: float = TOL_CLOSED) -> CheckReport:
    """Intrinsic two-point criterion with constant M.

    For every ordered pair (y, z) the slack

        f(y) - f(z) + <G(y)+G(z), z-y>/2 + M phi(|y-z|)
            - 2M phi*(|G(y)-G(z)| / (2M))

    must be nonnegative.  The report's witness is the worst pair.
    """
    if not (M > 0.0) or not math.isfinite(M):
        raise ValueError("M must be positive and finite")
    P, f, G = jet.points, jet.values, jet.gradients
    diff, dist, gnorm = _pair_matrices(jet)
    mid = 0.5 * np.einsum("ijk,ijk->ij", G[:, None, :] + G[None, :, :], diff)
    slack = (f[:, None] - f[None, :] + mid + M * m.phi(dist)
             - 2.0 * M * m.phi_star(gnorm / (2.0 * M)))
    i, j, worst = _worst_pair(slack)
    return CheckReport(
        condition="W",
        constant=float(M),
        worst_slack=worst,
        witness=as_point_list([P[i], P[j]]),
        passed=bool(worst >= -tol),
    )


def check_wells_W11(jet: Jet, M: float, tol: float = TOL_CLOSED) -> CheckReport:
    """Closed-form quadratic criterion for the linear modulus w(t) = t.

    Checks f(z) <= f(y) + <G(y)+G(z), z-y>/2 + (M/4)|y-z|^2
    - |G(y)-G(z)|^2/(4M) for every ordered pair.  The caller asserts
    that the intended modulus is linear with slope 1.
    """
    if not (M > 0.0) or not math.isfinite(M):
        raise ValueError("M must be positive and finite")
    P, f, G = jet.points, jet.values, jet.gradients
    diff, dist, gnorm = _pair_matrices(jet)
    mid = 0.5 * np.einsum("ijk,ijk->ij", G[:, None, :] + G[None, :, :], diff)
    slack = (f[:, None] - f[None, :] + mid + 0.25 * M * dist * dist
             - 0.25 * gnorm * gnorm / M)
    i, j, worst = _worst_pair(slack)
    return CheckReport(
        condition="W11",
        constant=float(M),
        worst_slack=worst,
        witness=as_point_list([P[i], P[j]]),
        passed=bool(worst >= -tol),
    )


def m_omega_G(jet: Jet, m: Modulus) -> CheckReport:
    """Gradient modulus: max over pairs of |G(y)-G(z)| / w(|y-z|)."""
    if jet.size < 2:
        raise ValueError("m_omega_G needs at least two points")
    P = jet.points
    _, dist, gnorm = _pair_matrices(jet)
    iu = np.triu_indices(jet.size, k=1)
    ratios = gnorm[iu] / m.omega(dist[iu])
    k = int(np.argmax(ratios))
    i, j = iu[0][k], iu[1][k]
    return CheckReport(
        condition="M-omega-G",
        constant=float(ratios[k]),
        worst_slack=0.0,
        witness=as_point_list([P[i], P[j]]),
        passed=True,
    )


# ---------------------------------------------------------------------------
# planar inner searches


class _PairProblem:
    """Inner optimization data for one ordered pair (y, z)."""

    __slots__ = ("y", "z", "fy", "fz", "gy", "gz", "center", "e1", "e2", "rank")

    def __init__(self, y, z, fy, fz, gy, gz):
        self.y, self.z = y, z
        self.fy, self.fz = fy, fz
        self.gy, self.gz = gy, gz
        self.center = 0.5 * (y + z)
        d1 = z - y
        n1 = float(np.linalg.norm(d1))
        dg = gy - gz
        if n1 > 0.0:
            e1 = d1 / n1
        else:
            ng = float(np.linalg.norm(dg))
            e1 = dg / ng if ng > 0.0 else None
        if e1 is None:
            self.e1 = None
            self.e2 = None
            self.rank = 0
            return
        w = dg - np.dot(dg, e1) * e1
        nw = float(np.linalg.norm(w))
        scale = float(np.linalg.norm(dg)) + 1e-300
        if nw > 1e-12 * max(1.0, scale):
            self.e1, self.e2, self.rank = e1, w / nw, 2
        else:
            self.e1, self.e2, self.rank = e1, None, 1

    def point(self, uv: np.ndarray) -> np.ndarray:
        x = self.center.copy()
        if self.rank >= 1:
            x = x + uv[0] * self.e1
        if self.rank == 2:
            x = x + uv[1] * self.e2
        return x


def _objective_terms(prob: _PairProblem, X: np.ndarray, phi_fn):
    """Numerator N(x) and phi-sum D(x) of the pair objective at rows of X."""
    dy = X - prob.y
    dz = X - prob.z
    N = (prob.fy - prob.fz + dy @ prob.gy - dz @ prob.gz)
    D = phi_fn(np.sqrt(np.sum(dy * dy, axis=-1))) + phi_fn(np.sqrt(np.sum(dz * dz, axis=-1)))
    return N, D


def _batch_frames(Y, Z, GY, GZ):
    """Vectorized slice frames for many pairs at once."""
    d1 = Z - Y
    n1 = np.linalg.norm(d1, axis=1)
    dg = GY - GZ
    ng = np.linalg.norm(dg, axis=1)
    e1 = np.zeros_like(d1)
    sep = n1 > 0.0
    e1[sep] = d1[sep] / n1[sep, None]
    grad_only = (~sep) & (ng > 0.0)
    e1[grad_only] = dg[grad_only] / ng[grad_only, None]
    w = dg - np.einsum("ij,ij->i", dg, e1)[:, None] * e1
    nw = np.linalg.norm(w, axis=1)
    rank2 = nw > 1e-12 * np.maximum(1.0, ng)
    e2 = np.zeros_like(w)
    e2[rank2] = w[rank2] / nw[rank2, None]
    rank = np.where(rank2, 2, np.where(sep | grad_only, 1, 0))
    return e1, e2, rank


def _coarse_group(c0, a1, a2, b1, b2, h, phi_fn, M, U, V, mode):
    """Coarse objective extrema for a batch of pairs, in slice coordinates.

    With e1 pointing from y to z and the box centered at the midpoint,
    the candidate x = center + u e1 + v e2 has |x-y|^2 = (u+h)^2 + v^2
    and |x-z|^2 = (u-h)^2 + v^2, where h = |y-z|/2, and the numerator is
    affine in (u, v) with the per-pair coefficients

        c0 = f(y) - f(z),  a1 = <G(y), e1>,  a2 = <G(y), e2>,
        b1 = <G(z), e1>,   b2 = <G(z), e2>.

    Returns per-pair extreme values and the extreme offset index.
    """
    up = U[None, :] + h[:, None]
    um = U[None, :] - h[:, None]
    if V is None:
        dy = np.abs(up)
        dz = np.abs(um)
        N = c0[:, None] + up * a1[:, None] - um * b1[:, None]
    else:
        v2 = V[None, :] ** 2
        dy = np.sqrt(up * up + v2)
        dz = np.sqrt(um * um + v2)
        N = (c0[:, None] + up * a1[:, None] - um * b1[:, None]
             + V[None, :] * (a2 - b2)[:, None])
    D = phi_fn(dy) + phi_fn(dz)
    if mode == "mg":
        vals = N + M * D
        k = np.argmin(vals, axis=1)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(D > 0.0, np.abs(N) / D, 0.0)
        k = np.argmax(vals, axis=1)
    return vals[np.arange(len(c0)), k], k


def _refine(prob: _PairProblem, phi_fn, M, uv0, steps, mode):
    """Short Nelder-Mead polish from the coarse optimum."""
    if prob.rank == 0 or steps <= 0:
        X = prob.point(np.zeros(max(prob.rank, 1)))[None, :]
        N, D = _objective_terms(prob, X, phi_fn)
        val = N[0] + M * D[0] if mode == "mg" else 0.0
        return float(val), prob.point(np.zeros(max(prob.rank, 1)))

    def fun(uv):
        X = prob.point(np.asarray(uv))[None, :]
        N, D = _objective_terms(prob, X, phi_fn)
        if mode == "mg":
            return N[0] + M * D[0]
        return -(abs(N[0]) / D[0]) if D[0] > 0.0 else 0.0

    res = optimize.minimize(fun, uv0, method="Nelder-Mead",
                            options={"maxiter": steps, "xatol": 1e-12, "fatol": 1e-14})
    cand = float(res.fun)
    base = fun(uv0)
    if cand <= base:
        uv, val = res.x, cand
    else:
        uv, val = uv0, base
    if mode == "ratio":
        val = -val
    return float(val), prob.point(np.asarray(uv))


def _run_inner(jet, m, M, search, mode):
    """Coarse scan of every pair followed by refinement of the candidates.

    For ``mode="mg"`` returns the pairwise minima of V; for
    ``mode="ratio"`` the pairwise maxima of the A-ratio.  The extreme
    pair, its ambient witness x, and a boundary flag come back with the
    value.  The coarse stage is batched across pairs; only promising
    pairs get the Nelder-Mead polish once the pair count is large.
    """
    search = search or SearchBox()
    B = search.width_for(jet)
    res = search.resolution
    phi_fn = m.phi
    P, f, G = jet.points, jet.values, jet.gradients
    n = jet.dim

    idx = np.arange(jet.size)
    I, J = np.meshgrid(idx, idx, indexing="ij")
    I, J = I.ravel(), J.ravel()
    if mode == "ratio":
        keep = I != J
        I, J = I[keep], J[keep]
    Y, Z, FY, FZ, GY, GZ = P[I], P[J], f[I], f[J], G[I], G[J]
    E1, E2, rank = _batch_frames(Y, Z, GY, GZ)
    half = 0.5 * np.linalg.norm(Z - Y, axis=1)
    c0 = FY - FZ
    a1 = np.einsum("ij,ij->i", GY, E1)
    a2 = np.einsum("ij,ij->i", GY, E2)
    b1 = np.einsum("ij,ij->i", GZ, E1)
    b2 = np.einsum("ij,ij->i", GZ, E2)

    npairs = len(I)
    values = np.zeros(npairs)
    off_idx = np.zeros(npairs, dtype=int)
    u = np.linspace(-B, B, res)

    off1 = np.column_stack([u, np.zeros_like(u)])
    uu, vv = np.meshgrid(u, u, indexing="ij")
    off2 = np.column_stack([uu.ravel(), vv.ravel()])

    for r, offsets in ((1, off1), (2, off2)):
        sel = np.where(rank == r)[0]
        if sel.size == 0:
            continue
        U = offsets[:, 0]
        V = offsets[:, 1] if r == 2 else None
        batch = max(1, int(8_000_000 // offsets.shape[0]))
        for s in range(0, sel.size, batch):
            b = sel[s:s + batch]
            vals, k = _coarse_group(c0[b], a1[b], a2[b], b1[b], b2[b], half[b],
                                    phi_fn, M, U, V, mode)
            values[b] = vals
            off_idx[b] = k
    # rank 0 pairs (y = z with equal gradients) sit at slack 0 by inspection

    def offset_of(k):
        if rank[k] == 1:
            return off1[off_idx[k]][:1]
        if rank[k] == 2:
            return off2[off_idx[k]]
        return np.zeros(1)

    def boundary_of(k):
        if rank[k] == 1:
            return off_idx[k] in (0, res - 1)
        if rank[k] == 2:
            ki, kj = divmod(int(off_idx[k]), res)
            return ki in (0, res - 1) or kj in (0, res - 1)
        return False

    if npairs <= _REFINE_ALL_BELOW:
        chosen = [k for k in range(npairs) if rank[k] > 0]
    else:
        order = np.argsort(values if mode == "mg" else -values)
        chosen = [int(k) for k in order[:_REFINE_CAP] if rank[k] > 0]

    def job(k):
        prob = _PairProblem(Y[k], Z[k], FY[k], FZ[k], GY[k], GZ[k])
        return _refine(prob, phi_fn, M, offset_of(k), search.refine_steps, mode)

    workers = worker_count()
    if workers > 1 and len(chosen) > 8:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            refined = list(ex.map(job, chosen))
    else:
        refined = [job(k) for k in chosen]

    refined_x: dict[int, np.ndarray] = {}
    for k, (val, x) in zip(chosen, refined):
        improved = val < values[k] if mode == "mg" else val > values[k]
        if improved:
            values[k] = val
        refined_x[k] = x
    k_ext = int(np.argmin(values) if mode == "mg" else np.argmax(values))
    if k_ext in refined_x:
        x_ext = refined_x[k_ext]
    else:
        prob = _PairProblem(Y[k_ext], Z[k_ext], FY[k_ext], FZ[k_ext], GY[k_ext], GZ[k_ext])
        x_ext = prob.point(offset_of(k_ext))
    return float(values[k_ext]), (int(I[k_ext]), int(J[k_ext]), x_ext), bool(boundary_of(k_ext))


def check_mg(jet: Jet, m: Modulus, M: float, search: SearchBox | None = None,
             tol: float = TOL_INNER) -> CheckReport:
    """Half-extrinsic criterion with constant M.

    For every ordered pair (y, z) the function

        V(x) = f(y) - f(z) + <G(y), x-y> - <G(z), x-z>
               + M phi(|x-y|) + M phi(|x-z|)

    is minimized over ambient x (restricted to the planar slice through
    y, z spanned by {z-y, G(y)-G(z)}); the check passes when every
    pairwise minimum is >= -tol.  A minimizer on the slice-box boundary
    is flagged with a "search box too small" warning.
    """
    if not (M > 0.0) or not math.isfinite(M):
        raise ValueError("M must be positive and finite")
    worst, (i, j, x), boundary = _run_inner(jet, m, M, search, "mg")
    P = jet.points
    return CheckReport(
        condition="MG",
        constant=float(M),
        worst_slack=float(worst),
        witness=as_point_list([P[i], P[j], x]),
        passed=bool(worst >= -tol),
        warning="search box too small" if boundary else None,
    )


def compute_A(jet: Jet, m: Modulus, search: SearchBox | None = None) -> CheckReport:
    """Sharp sup-ratio functional of the jet.

    Returns sup over ordered pairs (y, z), y != z, and ambient x of

        |f(y) + <G(y), x-y> - f(z) - <G(z), x-z>|
            / (phi(|x-y|) + phi(|x-z|)),

    which is also the smallest constant for which ``check_mg`` passes.
    Affine-consistent jets give 0, as do single-point sets.
    """
    if jet.size < 2:
        return CheckReport(condition="A-value", constant=0.0, worst_slack=0.0,
                           witness=as_point_list([jet.points[0]]), passed=True)
    best, (i, j, x), _ = _run_inner(jet, m, None, search, "ratio")
    P = jet.points
    return CheckReport(
        condition="A-value",
        constant=float(best),
        worst_slack=0.0,
        witness=as_point_list([P[i], P[j], x]),
        passed=True,
    )


# ---------------------------------------------------------------------------
# constant comparisons


def _bisect_threshold(passes, lo: float = BISECT_LO, hi: float = BISECT_HI,
                      iters: int = 30) -> float | None:
    """Smallest passing constant by bisection on the exponent.

    Returns None when even ``hi`` fails.  Thirty halvings of the
    exponent range [log lo, log hi] pin the threshold to about 3e-8
    relative precision.
    """
    if passes(lo):
        return lo
    if not passes(hi):
        return None
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = math.exp(0.5 * (llo + lhi))
        if passes(mid):
            lhi = math.log(mid)
        else:
            llo = math.log(mid)
    return math.exp(lhi)


def check_equivalences(jet: Jet, m: Modulus, search: SearchBox | None = None,
                       rel_tol: float = 1e-3) -> CheckReport:
    """Cross-check the constant relations between the criteria.

    Finds the smallest constants M_W and M_mg by bisection, then
    asserts: the mg-check passes with 4 M_W; the W-check passes with
    M_mg (Euclidean route); M_omega(G) <= (8/sqrt(15)) M_mg and
    <= 3 M_mg; and M_omega(G) <= 4 M_W.  Slacks are normalized by their
    bounds, so ``worst_slack`` is dimensionless.
    """
    M_W = _bisect_threshold(lambda M: check_W(jet, m, M).passed)
    M_mg = _bisect_threshold(lambda M: check_mg(jet, m, M, search).passed)
    if M_W is None and M_mg is None:
        return CheckReport(condition="equivalences", constant=math.inf,
                           worst_slack=-math.inf, passed=False,
                           warning="no finite constant in [1e-8, 1e8]")
    if M_W is None or M_mg is None:
        return CheckReport(condition="equivalences",
                           constant=float(M_mg if M_mg is not None else M_W),
                           worst_slack=-math.inf, passed=False,
                           warning="bisection bracket failed for one criterion")

    mg_at_4MW = check_mg(jet, m, 4.0 * M_W, search)
    W_at_Mmg = check_W(jet, m, M_mg * (1.0 + 1e-6))
    Mw_g = m_omega_G(jet, m).constant if jet.size >= 2 else 0.0

    c_hilbert = 8.0 / math.sqrt(15.0)
    bounds = {
        "mg_with_4MW": (mg_at_4MW.worst_slack, max(abs(mg_at_4MW.constant), 1e-30)),
        "W_with_Mmg": (W_at_Mmg.worst_slack, max(abs(W_at_Mmg.constant), 1e-30)),
        "Mmg_le_4MW": (4.0 * M_W - M_mg, max(4.0 * M_W, 1e-30)),
        "MW_le_Mmg": (M_mg - M_W, max(M_mg, 1e-30)),
        "MomegaG_le_hilbert_Mmg": (c_hilbert * M_mg - Mw_g, max(c_hilbert * M_mg, 1e-30)),
        "MomegaG_le_3Mmg": (3.0 * M_mg - Mw_g, max(3.0 * M_mg, 1e-30)),
        "MomegaG_le_4MW": (4.0 * M_W - Mw_g, max(4.0 * M_W, 1e-30)),
    }
    normalized = {name: s / scale for name, (s, scale) in bounds.items()}
    worst_name = min(normalized, key=normalized.get)
    worst = normalized[worst_name]
    details = {
        "M_W": M_W,
        "M_mg": M_mg,
        "M_omega_G": Mw_g,
        "normalized_slacks": normalized,
        "worst_check": worst_name,
    }
    return CheckReport(
        condition="equivalences",
        constant=float(M_mg),
        worst_slack=float(worst),
        witness=[],
        passed=bool(worst >= -rel_tol),
        details=details,
    )
