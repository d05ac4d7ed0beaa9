"""Grid construction of the paraconvex-envelope extension.

Given a jet with finite sup-ratio constant A, the extension is built on
a regular box grid as the largest function below the upper field

    g(x) = min_y { f(y) + <G(y), x-y> + M phi(|x-y|) }

that satisfies the discrete chord inequalities

    u(x) <= [t/(s+t)] u(x + s d) + [s/(s+t)] u(x - t d)
            + C [s t/(s+t)^2] phi((s+t) |d|_h)

along every stencil direction d and all integer steps s, t >= 1, and is
clamped below by the matching lower field m.  The fixed point is found
by Gauss-Seidel value-iteration sweeps and certified by a final Jacobi
pass.  Variants: Holder constants, the fast biconjugate path for the
linear modulus, bounded and Lipschitz builds, and lp norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .jet import Jet, SearchBox, compute_A
from .modulus import Modulus

__all__ = [
    "GridSpec",
    "GridFunction",
    "ExtensionResult",
    "FamilyBudget",
    "NotExtendableError",
    "OffGridError",
    "default_grid_spec",
    "default_stencil",
    "eval_m",
    "eval_g",
    "paraconvex_envelope_grid",
    "extend",
    "extend_c11_biconjugate",
    "bounded_extend",
    "lipschitz_extend",
    "family_F_lower_bound",
    "lp_smoothness_constant",
    "certify_fixed_point",
]

# Constants above this bisection ceiling count as "no finite constant".
BIG_CONSTANT = 1e8
_DEFAULT_RES = {1: 257, 2: 129, 3: 33, 4: 33}
_MAX_SWEEPS = 100_000


class NotExtendableError(RuntimeError):
    """The jet admits no finite constant within the search bracket."""


class OffGridError(ValueError):
    """A jet point does not snap to any node of the requested grid."""


def _norm(V: np.ndarray, p: float | None = None) -> np.ndarray:
    if p is None:
        return np.sqrt(np.sum(V * V, axis=-1))
    return np.sum(np.abs(V) ** p, axis=-1) ** (1.0 / p)


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box and node counts for a regular grid."""

    box: tuple
    shape: tuple

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        shape = tuple(int(k) for k in self.shape)
        if len(box) != len(shape) or not box:
            raise ValueError("box and shape must list the same number of axes")
        for (lo, hi), k in zip(box, shape):
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValueError("box must be nondegenerate and finite")
            if k < 2:
                raise ValueError("need at least 2 nodes per axis")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "shape", shape)


def default_grid_spec(jet: Jet, resolution: int | None = None) -> GridSpec:
    """Bounding box of E inflated by twice the diameter, default node counts."""
    n = jet.dim
    res = resolution or _DEFAULT_RES[n]
    margin = 2.0 * max(jet.diameter, 0.5)
    lo = jet.points.min(axis=0) - margin
    hi = jet.points.max(axis=0) + margin
    return GridSpec(box=tuple((float(a), float(b)) for a, b in zip(lo, hi)),
                    shape=(res,) * n)


@dataclass
class GridFunction:
    """Scalar field on a regular box grid in up to four dimensions."""

    box: np.ndarray
    values: np.ndarray
    norm_mode: str = "euclidean"
    p: float = 2.0

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=float).reshape(-1, 2)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != len(self.box):
            raise ValueError("value array rank must match the number of box axes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        if np.any(self.box[:, 1] <= self.box[:, 0]):
            raise ValueError("box must be nondegenerate")
        if self.norm_mode not in ("euclidean", "lp"):
            raise ValueError("norm_mode must be 'euclidean' or 'lp'")
        if self.norm_mode == "lp" and not (1.0 < self.p <= 2.0):
            raise ValueError("lp mode needs p in (1, 2]")

    @property
    def dim(self) -> int:
        return len(self.box)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        counts = np.asarray(self.shape, dtype=float)
        return (self.box[:, 1] - self.box[:, 0]) / (counts - 1.0)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, k) for (lo, hi), k in zip(self.box, self.shape)]

    @property
    def norm_p(self) -> float | None:
        return self.p if self.norm_mode == "lp" else None

    def vec_norm(self, V: np.ndarray) -> np.ndarray:
        return _norm(V, self.norm_p)

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (prod(shape), dim)."""
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def coords_of(self, flat_idx: np.ndarray) -> np.ndarray:
        """Coordinates of nodes given flat indices."""
        multi = np.unravel_index(np.asarray(flat_idx, dtype=np.int64), self.shape)
        lo = self.box[:, 0]
        h = self.spacing
        return np.stack([lo[a] + h[a] * multi[a] for a in range(self.dim)], axis=-1)

    def interp(self, x) -> np.ndarray:
        """Multilinear interpolation; convenience only, not certified."""
        from scipy.interpolate import RegularGridInterpolator
        itp = RegularGridInterpolator(self.axes, self.values, method="linear")
        return itp(np.atleast_2d(np.asarray(x, dtype=float)))

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(box=self.box.copy(), values=values,
                            norm_mode=self.norm_mode, p=self.p)


def default_stencil(n: int) -> list[tuple]:
    """Axis directions plus the face diagonals of every axis pair."""
    dirs = []
    for a in range(n):
        d = [0] * n
        d[a] = 1
        dirs.append(tuple(d))
    for a in range(n):
        for b in range(a + 1, n):
            for sb in (1, -1):
                d = [0] * n
                d[a], d[b] = 1, sb
                dirs.append(tuple(d))
    return dirs


def _direction_lines(shape: tuple, d) -> np.ndarray:
    """Flat-index lines of the grid along lattice direction d.

    Rows are maximal chains p, p+d, p+2d, ... padded with -1; for a
    fixed direction the rows partition the grid, so scatter by these
    indices never collides.
    """
    nd = len(shape)
    d = np.asarray(d, dtype=np.int64)
    mask = np.zeros(shape, dtype=bool)
    for ax in range(nd):
        if d[ax] == 0:
            continue
        coord = np.arange(shape[ax]) - d[ax]
        bad = (coord < 0) | (coord >= shape[ax])
        view = [1] * nd
        view[ax] = shape[ax]
        mask |= bad.reshape(view)
    flat = np.flatnonzero(mask.ravel())
    starts = np.stack(np.unravel_index(flat, shape), axis=1).astype(np.int64)
    steps = np.full(len(starts), np.iinfo(np.int64).max)
    for ax in range(nd):
        if d[ax] > 0:
            steps = np.minimum(steps, (shape[ax] - 1 - starts[:, ax]) // d[ax])
        elif d[ax] < 0:
            steps = np.minimum(steps, starts[:, ax] // (-d[ax]))
    L = int(steps.max()) + 1
    lines = np.full((len(starts), L), -1, dtype=np.int64)
    pos = starts.copy()
    for k in range(L):
        alive = steps >= k
        lines[alive, k] = np.ravel_multi_index(pos[alive].T, shape)
        pos[alive] += d
    return lines


def _gather(u_flat: np.ndarray, lines: np.ndarray) -> np.ndarray:
    U = np.full(lines.shape, np.inf)
    valid = lines >= 0
    U[valid] = u_flat[lines[valid]]
    return U


def _chord_sweep_inplace(U: np.ndarray, phi_k: np.ndarray, C: float) -> None:
    """One in-place pass of all chord candidates over stacked lines.

    ``phi_k[k]`` is phi(k * delta) for the direction's physical step.
    Candidates are applied in fixed (k, s) order, each reading the
    current values, so the pass is a deterministic Gauss-Seidel step.
    """
    Lmax = U.shape[1]
    for k in range(2, Lmax):
        right = U[:, k:]
        left = U[:, :Lmax - k]
        base = C * phi_k[k] / (k * k)
        for s in range(1, k):
            t = k - s
            cand = (t * right + s * left) / k
            cand += base * (s * t)
            np.minimum(U[:, t:Lmax - s], cand, out=U[:, t:Lmax - s])


def _chord_min(U: np.ndarray, phi_k: np.ndarray, C: float) -> np.ndarray:
    """Minimum chord candidate per node from frozen line values."""
    Lmax = U.shape[1]
    out = np.full(U.shape, np.inf)
    for k in range(2, Lmax):
        right = U[:, k:]
        left = U[:, :Lmax - k]
        base = C * phi_k[k] / (k * k)
        for s in range(1, k):
            t = k - s
            cand = (t * right + s * left) / k
            cand += base * (s * t)
            np.minimum(out[:, t:Lmax - s], cand, out=out[:, t:Lmax - s])
    return out


def _lipschitz_sweep_inplace(U: np.ndarray, bound: float) -> None:
    """Clamp line values to the one-step Lipschitz cone (both passes)."""
    Lmax = U.shape[1]
    for j in range(1, Lmax):
        np.minimum(U[:, j], U[:, j - 1] + bound, out=U[:, j])
    for j in range(Lmax - 2, -1, -1):
        np.minimum(U[:, j], U[:, j + 1] + bound, out=U[:, j])


def _fixed_point(u0_flat, floor_flat, dirs, C, phi_fn, eps, lip_cap=None,
                 max_sweeps=_MAX_SWEEPS):
    """Iterate the envelope operator to its fixed point.

    ``dirs`` is a list of (lines, delta) pairs.  Gauss-Seidel sweeps run
    until the sweep change drops below eps, then a Jacobi pass from the
    frozen state certifies the fixed point; its change is the residual.
    """
    u = u0_flat.copy()
    scale = float(np.max(np.abs(u0_flat))) if u0_flat.size else 1.0
    mono_tol = 1e-9 * max(scale, 1.0)
    dir_data = []
    for lines, delta in dirs:
        Lmax = lines.shape[1]
        phi_k = phi_fn(delta * np.arange(max(Lmax, 2), dtype=float))
        dir_data.append((lines, lines >= 0, phi_k, delta))

    sweeps = 0
    while True:
        if sweeps >= max_sweeps:
            raise RuntimeError(
                f"envelope iteration cap exceeded ({max_sweeps} sweeps), residual {change:.3e}")
        before = u.copy()
        for lines, valid, phi_k, delta in dir_data:
            U = _gather(u, lines)
            _chord_sweep_inplace(U, phi_k, C)
            if lip_cap is not None:
                _lipschitz_sweep_inplace(U, lip_cap * delta)
            u[lines[valid]] = U[valid]
        np.maximum(u, floor_flat, out=u)
        sweeps += 1
        if np.any(u > before + mono_tol):
            raise RuntimeError("non-monotone envelope iterate (numerical pathology)")
        change = float(np.max(np.abs(u - before)))
        if change < eps:
            residual = _jacobi_residual(u, floor_flat, dir_data, C, lip_cap)
            if residual < eps:
                return u, sweeps, residual


def _jacobi_residual(u, floor_flat, dir_data, C, lip_cap) -> float:
    """Change produced by one Jacobi application from the frozen state."""
    new = u.copy()
    for lines, valid, phi_k, delta in dir_data:
        U = _gather(u, lines)
        cmin = _chord_min(U, phi_k, C)
        if lip_cap is not None:
            b = lip_cap * delta
            np.minimum(cmin[:, 1:], U[:, :-1] + b, out=cmin[:, 1:])
            np.minimum(cmin[:, :-1], U[:, 1:] + b, out=cmin[:, :-1])
        idx = lines[valid]
        new[idx] = np.minimum(new[idx], cmin[valid])
    np.maximum(new, floor_flat, out=new)
    return float(np.max(np.abs(new - u)))


def paraconvex_envelope_grid(u0: GridFunction, floor: GridFunction, C: float,
                             m: Modulus, stencil=None,
                             eps: float | None = None) -> GridFunction:
    """Largest discrete C*phi-paraconvex minorant of u0 above floor.

    The chord inequalities are enforced along every stencil direction
    for all integer step pairs; see the module docstring for the exact
    operator.  Returns the fixed point as a new grid function.
    """
    return _envelope_public(u0, floor, C, m.phi, stencil, eps)[0]


def _envelope_public(u0, floor, C, phi_fn, stencil, eps, lip_cap=None):
    if u0.shape != floor.shape or np.any(u0.box != floor.box):
        raise ValueError("u0 and floor must live on the same grid")
    if np.any(u0.values < floor.values - 1e-12 * max(1.0, float(np.max(np.abs(u0.values))))):
        raise ValueError("u0 must dominate floor node-wise")
    if C < 0.0 or not math.isfinite(C):
        raise ValueError("C must be nonnegative and finite")
    stencil = stencil or default_stencil(u0.dim)
    h = u0.spacing
    dirs = []
    for d in stencil:
        delta = float(_norm(np.asarray(d, dtype=float) * h, u0.norm_p))
        dirs.append((_direction_lines(u0.shape, d), delta))
    if eps is None:
        spread = float(u0.values.max() - floor.values.min())
        eps = 1e-9 * max(spread, 1e-6)
    vals, sweeps, residual = _fixed_point(u0.values.ravel(), floor.values.ravel(),
                                          dirs, C, phi_fn, eps, lip_cap=lip_cap)
    out = u0.with_values(vals.reshape(u0.shape))
    return out, sweeps, residual, eps


# ---------------------------------------------------------------------------
# upper and lower fields of a jet


def _fields_at(jet: Jet, phi_fn, M: float, X: np.ndarray, p: float | None = None,
               cap: float | None = None):
    """Lower and upper fields at the rows of X, optionally truncated at -+2*cap."""
    K = X.shape[0]
    g = np.full(K, np.inf)
    mm = np.full(K, -np.inf)
    for z, fz, Gz in zip(jet.points, jet.values, jet.gradients):
        dx = X - z
        lin = fz + dx @ Gz
        pen = M * phi_fn(_norm(dx, p))
        np.minimum(g, lin + pen, out=g)
        np.maximum(mm, lin - pen, out=mm)
    if cap is not None:
        np.minimum(g, 2.0 * cap, out=g)
        np.maximum(mm, -2.0 * cap, out=mm)
    return mm, g


def eval_m(jet: Jet, m: Modulus, M: float, x, p: float | None = None):
    """Lower field max_z { f(z) + <G(z), x-z> - M phi(|x-z|) }."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    scalar = np.asarray(x).ndim <= 1
    vals = _fields_at(jet, m.phi, M, X, p)[0]
    return float(vals[0]) if scalar else vals


def eval_g(jet: Jet, m: Modulus, M: float, x, p: float | None = None):
    """Upper field min_y { f(y) + <G(y), x-y> + M phi(|x-y|) }."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    scalar = np.asarray(x).ndim <= 1
    vals = _fields_at(jet, m.phi, M, X, p)[1]
    return float(vals[0]) if scalar else vals


def _fields_on_grid(jet: Jet, phi_fn, M: float, grid: GridFunction,
                    cap: float | None = None):
    nodes = grid.nodes()
    chunk = max(1, 2_000_000 // max(jet.size, 1))
    mm = np.empty(nodes.shape[0])
    gg = np.empty(nodes.shape[0])
    for s in range(0, nodes.shape[0], chunk):
        sl = slice(s, s + chunk)
        mm[sl], gg[sl] = _fields_at(jet, phi_fn, M, nodes[sl], grid.norm_p, cap)
    return mm.reshape(grid.shape), gg.reshape(grid.shape)


# ---------------------------------------------------------------------------
# extension results


@dataclass
class ExtensionResult:
    """A built extension and everything needed to certify it.

    ``F`` carries the node values, ``grad_F`` the central-difference
    gradient field with components on the last axis.  ``lower`` and
    ``upper`` are the envelopes the build was clamped between; ``phi``
    and ``omega`` are the scalar functions the build's constants refer
    to (they differ from the input modulus only for the Lipschitz
    variant, which linearizes beyond unit distance).
    """

    F: GridFunction
    grad_F: np.ndarray
    M_used: float
    C_used: float
    variant: str
    iterations: int
    residual: float
    lower: GridFunction
    upper: GridFunction
    stencil: list
    phi: Callable
    omega: Callable
    snap_index: np.ndarray
    snap_dist: np.ndarray
    eps_used: float
    lip_cap: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_diagnostics_dict(self) -> dict:
        d = {
            "variant": self.variant,
            "M_used": float(self.M_used),
            "C_used": float(self.C_used),
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "eps": float(self.eps_used),
            "box": [[float(a), float(b)] for a, b in self.F.box],
            "shape": [int(k) for k in self.F.shape],
            "norm_mode": self.F.norm_mode,
        }
        if self.F.norm_mode == "lp":
            d["p"] = float(self.F.p)
        if self.lip_cap is not None:
            d["lip_cap"] = float(self.lip_cap)
        d.update(self.diagnostics)
        return d


def _snap_points(jet: Jet, grid: GridFunction):
    lo = grid.box[:, 0]
    h = grid.spacing
    shape = np.asarray(grid.shape)
    idx = np.rint((jet.points - lo) / h).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= shape):
        k = int(np.argmax(np.any((idx < 0) | (idx >= shape), axis=1)))
        raise OffGridError(f"point off-grid: E point {jet.points[k].tolist()} "
                           "is outside the grid box")
    nodes = lo + idx * h
    dist = _norm(jet.points - nodes, grid.norm_p)
    flat = np.ravel_multi_index(idx.T, grid.shape)
    return flat, dist


def _gradient_field(F: GridFunction) -> np.ndarray:
    grads = np.gradient(F.values, *F.axes, edge_order=2)
    if F.dim == 1:
        grads = [grads]
    return np.stack(grads, axis=-1)


def _jet_constant(jet: Jet, modulus: Modulus, search: SearchBox | None) -> float:
    A = compute_A(jet, modulus, search).constant
    if not math.isfinite(A) or A > BIG_CONSTANT:
        raise NotExtendableError(
            f"not extendable: no finite constant below {BIG_CONSTANT:g} (A ~ {A:.3e})")
    return A


def _node_constant(jet: Jet, phi_fn, grid: GridFunction) -> float:
    """Sup-ratio constant restricted to grid nodes.

    Exact on the nodes, so any M at or above it makes the lower field
    dominate nowhere above the upper field on this grid.  Complements
    the search-based estimate, which can undershoot by its refinement
    tolerance.
    """
    E = jet.size
    if E < 2:
        return 0.0
    nodes = grid.nodes()
    P, f, G = jet.points, jet.values, jet.gradients
    p = grid.norm_p
    best = 0.0
    chunk = max(1, 4_000_000 // (E * E))
    for s in range(0, len(nodes), chunk):
        X = nodes[s:s + chunk]
        dx = X[:, None, :] - P[None, :, :]
        lin = f[None, :] + np.einsum("ken,en->ke", dx, G)
        pen = phi_fn(_norm(dx, p))
        num = lin[:, :, None] - lin[:, None, :]
        den = pen[:, :, None] + pen[:, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(den > 1e-300, num / den, 0.0)
        best = max(best, float(ratio.max()))
    return best


def _resolve_M(A: float, M: float | None, A_nodes: float = 0.0) -> float:
    need = max(A, A_nodes)
    if M is None:
        return need
    if M < need * (1.0 - 1e-6) - 1e-12:
        raise ValueError(f"supplied M={M:g} is below the computed A(f,G)={need:g}")
    # Search and bisection estimates may sit a hair below the node-implied
    # minimum; never run the fields below it.
    return max(float(M), A_nodes)


def extend(jet: Jet, m: Modulus, variant: str = "general",
           grid_spec: GridSpec | None = None, *, M: float | None = None,
           search: SearchBox | None = None, stencil=None,
           resolution: int | None = None, p: float | None = None,
           lp_constant: float | None = None) -> ExtensionResult:
    """Build the grid extension of a jet.

    Variants: "general" (C = 2M), "holder" (C = 2^(1-alpha) M, requires
    a Holder modulus), "c11" / "c11-biconjugate" (linear modulus fast
    path), "bounded", "lipschitz", and "lp" (needs p in (1, 2]).  M
    defaults to the computed A(f,G) and may only be raised above it.
    """
    if variant in ("c11", "c11-biconjugate"):
        return extend_c11_biconjugate(jet, M=M, grid_spec=grid_spec, search=search,
                                      stencil=stencil, resolution=resolution)
    if variant == "bounded":
        return bounded_extend(jet, m, grid_spec, search=search, stencil=stencil,
                              resolution=resolution)
    if variant == "lipschitz":
        return lipschitz_extend(jet, m, grid_spec, search=search, stencil=stencil,
                                resolution=resolution)
    if variant not in ("general", "holder", "lp"):
        raise ValueError(f"unknown variant {variant!r}")

    A = _jet_constant(jet, m, search)
    n = jet.dim
    norm_p = p if variant == "lp" else None
    if variant == "lp" and (p is None or not (1.0 < p <= 2.0)):
        raise ValueError("lp variant needs p in (1, 2]")

    spec = grid_spec or default_grid_spec(jet, resolution)
    grid = GridFunction(box=np.asarray(spec.box, float), values=np.zeros(spec.shape),
                        norm_mode="lp" if norm_p else "euclidean", p=norm_p or 2.0)
    A_nodes = _node_constant(jet, m.phi, grid)
    M_used = _resolve_M(A, M, A_nodes)

    if variant == "holder":
        if m.kind != "holder":
            raise ValueError("holder variant requires a holder modulus")
        C = 2.0 ** (1.0 - m.alpha) * M_used
        extra = {"alpha": m.alpha}
    elif variant == "lp":
        alpha = p - 1.0
        C_norm = lp_constant if lp_constant is not None else lp_smoothness_constant(p, n)
        C_star = 1.0 + 3.0 ** (1.0 + alpha) / (1.0 + alpha) * C_norm
        C = C_star * M_used
        extra = {"p": p, "lp_norm_constant": C_norm, "C_star": C_star}
    else:
        C = 2.0 * M_used
        extra = {}

    snap_idx, snap_dist = _snap_points(jet, grid)
    m_vals, g_vals = _fields_on_grid(jet, m.phi, M_used, grid)
    lower = grid.with_values(m_vals)
    upper = grid.with_values(g_vals)
    F, sweeps, residual, eps = _envelope_public(upper, lower, C, m.phi, stencil, None)
    diag = {"A": A, "A_nodes": A_nodes, "snap_max_dist": float(snap_dist.max())}
    diag.update(extra)
    return ExtensionResult(
        F=F, grad_F=_gradient_field(F), M_used=M_used, C_used=C,
        variant=variant, iterations=sweeps, residual=residual,
        lower=lower, upper=upper, stencil=stencil or default_stencil(n),
        phi=m.phi, omega=m.omega, snap_index=snap_idx, snap_dist=snap_dist,
        eps_used=eps, diagnostics=diag)


# ---------------------------------------------------------------------------
# fast biconjugate path for the linear modulus


def _biconjugate_line(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Exact convex biconjugate of line samples via two Legendre transforms.

    The slope grid contains every pairwise difference quotient, which
    includes all edge slopes of the lower hull, so the double transform
    reproduces the hull values at the nodes exactly.
    """
    L = len(x)
    dw = w[None, :] - w[:, None]
    dx = x[None, :] - x[:, None]
    iu = np.triu_indices(L, k=1)
    slopes = np.unique(dw[iu] / dx[iu])
    wstar = np.empty(len(slopes))
    chunk = max(1, 2_000_000 // L)
    for s in range(0, len(slopes), chunk):
        sl = slice(s, s + chunk)
        wstar[sl] = np.max(slopes[sl, None] * x[None, :] - w[None, :], axis=1)
    out = np.empty(L)
    for s in range(0, L, max(1, 2_000_000 // max(len(slopes), 1))):
        sl = slice(s, s + max(1, 2_000_000 // max(len(slopes), 1)))
        out[sl] = np.max(x[sl, None] * slopes[None, :] - wstar[None, :], axis=1)
    return out


def extend_c11_biconjugate(jet: Jet, M: float | None = None,
                           grid_spec: GridSpec | None = None, *,
                           search: SearchBox | None = None, stencil=None,
                           resolution: int | None = None) -> ExtensionResult:
    """Linear-modulus fast path: conv(g + (M/2)|x|^2) - (M/2)|x|^2.

    The convex envelope is approached by per-axis biconjugation (two
    discrete Legendre transforms per line) and finished with chord
    sweeps at constant C = M, which also certify the fixed point.  For
    one-dimensional grids the axis pass alone is already exact.
    """
    mod = Modulus.linear(1.0)
    A = _jet_constant(jet, mod, search)
    spec = grid_spec or default_grid_spec(jet, resolution)
    grid = GridFunction(box=np.asarray(spec.box, float), values=np.zeros(spec.shape))
    A_nodes = _node_constant(jet, mod.phi, grid)
    M_used = _resolve_M(A, M, A_nodes)
    snap_idx, snap_dist = _snap_points(jet, grid)
    m_vals, g_vals = _fields_on_grid(jet, mod.phi, M_used, grid)
    lower = grid.with_values(m_vals)
    upper = grid.with_values(g_vals)

    nodes = grid.nodes()
    psi = (0.5 * M_used * np.sum(nodes * nodes, axis=-1)).reshape(grid.shape)
    w = (g_vals + psi).ravel()
    n = grid.dim
    for ax in range(n):
        d = tuple(1 if a == ax else 0 for a in range(n))
        lines = _direction_lines(grid.shape, d)
        xcoord = grid.axes[ax]
        for row in lines:
            w[row] = _biconjugate_line(xcoord, w[row])
    u0_vals = np.maximum(w.reshape(grid.shape) - psi, m_vals)
    u0 = grid.with_values(u0_vals)
    F, sweeps, residual, eps = _envelope_public(u0, lower, M_used, mod.phi, stencil, None)
    return ExtensionResult(
        F=F, grad_F=_gradient_field(F), M_used=M_used, C_used=M_used,
        variant="c11-biconjugate", iterations=sweeps, residual=residual,
        lower=lower, upper=upper, stencil=stencil or default_stencil(n),
        phi=mod.phi, omega=mod.omega, snap_index=snap_idx, snap_dist=snap_dist,
        eps_used=eps, diagnostics={"A": A, "snap_max_dist": float(snap_dist.max())})


# ---------------------------------------------------------------------------
# bounded and Lipschitz variants


def bounded_extend(jet: Jet, m: Modulus, grid_spec: GridSpec | None = None, *,
                   search: SearchBox | None = None, stencil=None,
                   resolution: int | None = None,
                   continuity_A: float | None = None) -> ExtensionResult:
    """Extension with bounded values and gradient.

    Uses M = max{(3/phi(1)) (|f|_inf + |G|_inf), A(f,G)} and truncates
    both fields at +-2(|f|_inf + |G|_inf) before the envelope run.  With
    ``continuity_A`` the constant becomes (3/phi(1)) R + continuity_A,
    which is the choice whose extensions depend continuously on the jet
    for a fixed constant budget; pass the shared bound A there when
    comparing extensions of nearby jets.
    """
    A = _jet_constant(jet, m, search)
    R = float(np.max(np.abs(jet.values)) + np.max(_norm(jet.gradients)))
    phi1 = float(m.phi(1.0))
    spec = grid_spec or default_grid_spec(jet, resolution)
    grid = GridFunction(box=np.asarray(spec.box, float), values=np.zeros(spec.shape))
    A_nodes = _node_constant(jet, m.phi, grid)
    if continuity_A is not None:
        M_used = 3.0 / phi1 * R + float(continuity_A)
        if A > continuity_A * (1.0 + 1e-9) + 1e-12:
            raise ValueError("continuity_A must dominate the jet's A(f,G)")
        M_used = max(M_used, A_nodes)
    else:
        M_used = max(3.0 / phi1 * R, A, A_nodes)
    C = 2.0 * M_used

    snap_idx, snap_dist = _snap_points(jet, grid)
    m_vals, g_vals = _fields_on_grid(jet, m.phi, M_used, grid, cap=R)
    lower = grid.with_values(m_vals)
    upper = grid.with_values(g_vals)
    F, sweeps, residual, eps = _envelope_public(upper, lower, C, m.phi, stencil, None)
    diag = {
        "A": A,
        "snap_max_dist": float(snap_dist.max()),
        "sup_norm_bound": 2.0 * R,
        "F_sup_norm": float(np.max(np.abs(F.values))),
        "rho": R + A,
        "cap": R,
    }
    return ExtensionResult(
        F=F, grad_F=_gradient_field(F), M_used=M_used, C_used=C,
        variant="bounded", iterations=sweeps, residual=residual,
        lower=lower, upper=upper, stencil=stencil or default_stencil(jet.dim),
        phi=m.phi, omega=m.omega, snap_index=snap_idx, snap_dist=snap_dist,
        eps_used=eps, diagnostics=diag)


def lipschitz_extend(jet: Jet, m: Modulus, grid_spec: GridSpec | None = None, *,
                     search: SearchBox | None = None, stencil=None,
                     resolution: int | None = None) -> ExtensionResult:
    """Extension with a global Lipschitz bound.

    The modulus primitive is linearized beyond unit distance, the
    constant is raised to cover the sampled Lipschitz constant of f and
    the sup norm of G, and slope clipping during the sweeps enforces the
    cap lip(F) <= |G|_inf + w(1) M~ along every stencil line.
    """
    A = _jet_constant(jet, m, search)
    pts = jet.points
    if jet.size >= 2:
        diff = pts[:, None, :] - pts[None, :, :]
        dist = _norm(diff)
        np.fill_diagonal(dist, np.inf)
        lip_f = float(np.max(np.abs(jet.values[:, None] - jet.values[None, :]) / dist))
    else:
        lip_f = 0.0
    G_inf = float(np.max(_norm(jet.gradients)))
    phi1 = float(m.phi(1.0))
    w1 = float(m.omega(1.0))

    def phi_t(t):
        arr = np.asarray(t, dtype=float)
        out = np.where(arr <= 1.0, m.phi(np.minimum(arr, 1.0)),
                       phi1 + w1 * (arr - 1.0))
        return float(out[()]) if np.isscalar(t) or arr.ndim == 0 else out

    def omega_t(t):
        arr = np.asarray(t, dtype=float)
        out = np.minimum(m.omega(arr), w1)
        return float(out[()]) if np.isscalar(t) or arr.ndim == 0 else out

    spec = grid_spec or default_grid_spec(jet, resolution)
    grid = GridFunction(box=np.asarray(spec.box, float), values=np.zeros(spec.shape))
    A_nodes = _node_constant(jet, phi_t, grid)
    M_t = max(A, 2.0 / phi1 * (lip_f + G_inf), A_nodes)
    # Paraconvexity constant of the linearized kernel: the unit-ball part
    # contributes 2 * (16 / sqrt(15)) and the conical part 4.
    C = (2.0 * (16.0 / math.sqrt(15.0)) + 4.0) * M_t
    lip_cap = G_inf + w1 * M_t

    scale = float(np.max(np.abs(jet.values)) + G_inf)
    if max(A, A_nodes) <= 1e-12 * max(1.0, scale):
        # affine-consistent jet: the tangent plane is the extension
        snap_idx, snap_dist = _snap_points(jet, grid)
        nodes = grid.nodes()
        plane = (jet.values[0]
                 + (nodes - jet.points[0]) @ jet.gradients[0]).reshape(grid.shape)
        F = grid.with_values(plane)
        return ExtensionResult(
            F=F, grad_F=_gradient_field(F), M_used=M_t, C_used=C,
            variant="lipschitz", iterations=0, residual=0.0,
            lower=grid.with_values(plane.copy()), upper=grid.with_values(plane.copy()),
            stencil=stencil or default_stencil(jet.dim),
            phi=phi_t, omega=omega_t, snap_index=snap_idx, snap_dist=snap_dist,
            eps_used=0.0, lip_cap=lip_cap,
            diagnostics={"A": A, "A_nodes": A_nodes, "snap_max_dist": float(snap_dist.max()),
                         "M_tilde": M_t, "lip_f": lip_f, "G_inf": G_inf,
                         "lip_bound": lip_cap})

    snap_idx, snap_dist = _snap_points(jet, grid)
    m_vals, g_vals = _fields_on_grid(jet, phi_t, M_t, grid)
    lower = grid.with_values(m_vals)
    upper = grid.with_values(g_vals)
    F, sweeps, residual, eps = _envelope_public(upper, lower, C, phi_t, stencil, None,
                                                lip_cap=lip_cap)
    diag = {
        "A": A,
        "snap_max_dist": float(snap_dist.max()),
        "M_tilde": M_t,
        "lip_f": lip_f,
        "G_inf": G_inf,
        "lip_bound": lip_cap,
    }
    return ExtensionResult(
        F=F, grad_F=_gradient_field(F), M_used=M_t, C_used=C,
        variant="lipschitz", iterations=sweeps, residual=residual,
        lower=lower, upper=upper, stencil=stencil or default_stencil(jet.dim),
        phi=phi_t, omega=omega_t, snap_index=snap_idx, snap_dist=snap_dist,
        eps_used=eps, lip_cap=lip_cap, diagnostics=diag)


# ---------------------------------------------------------------------------
# the explicit lower-bound family


@dataclass(frozen=True)
class FamilyBudget:
    """Budget for the knot-family lower bound: at most 8 knots."""

    knots: int = 4
    iterations: int = 200
    grid_spec: GridSpec | None = None
    resolution: int | None = None

    def __post_init__(self):
        if not (1 <= self.knots <= 8):
            raise ValueError("knots must be between 1 and 8")


def family_F_lower_bound(jet: Jet, m: Modulus, M: float, x,
                         budget: FamilyBudget | None = None) -> float:
    """Best member value at x over the explicit minorant family.

    Members have the form a + <xi, x> - sum_i lambda_i M phi(|x - p_i|)
    with the weights on the simplex; a is always chosen as the largest
    offset keeping the member below the upper field on a dense
    constraint grid, so the returned value is a lower bound for the
    envelope at x up to the constraint-grid slack.  Optimization starts
    from the best single-knot tangent member and falls back to it.
    """
    from scipy import optimize as _opt

    budget = budget or FamilyBudget()
    x = np.asarray(x, dtype=float).reshape(-1)
    n = jet.dim
    spec = budget.grid_spec or default_grid_spec(jet, budget.resolution)
    grid = GridFunction(box=np.asarray(spec.box, float), values=np.zeros(spec.shape))
    Zc = grid.nodes()
    g_c = eval_g(jet, m, M, Zc)

    def member_value(xi, P, lam):
        pen_c = np.zeros(len(Zc))
        pen_x = 0.0
        for pi, li in zip(P, lam):
            pen_c += li * M * m.phi(_norm(Zc - pi))
            pen_x += li * M * float(m.phi(_norm(x - pi)))
        a = float(np.min(g_c - Zc @ xi + pen_c))
        return a + float(x @ xi) - pen_x

    best = -math.inf
    best_y = 0
    for k in range(jet.size):
        v = member_value(jet.gradients[k], [jet.points[k]], [1.0])
        if v > best:
            best, best_y = v, k

    kn = min(budget.knots, max(jet.size, 1))
    order = np.argsort(_norm(jet.points - x))
    P0 = jet.points[order[np.arange(kn) % jet.size]]
    theta0 = np.concatenate([jet.gradients[best_y], P0.ravel(), np.zeros(kn)])

    def unpack(theta):
        xi = theta[:n]
        P = theta[n:n + kn * n].reshape(kn, n)
        wts = theta[n + kn * n:]
        e = np.exp(wts - wts.max())
        return xi, P, e / e.sum()

    def neg(theta):
        xi, P, lam = unpack(theta)
        return -member_value(xi, P, lam)

    res = _opt.minimize(neg, theta0, method="Nelder-Mead",
                        options={"maxiter": budget.iterations,
                                 "xatol": 1e-10, "fatol": 1e-12})
    return float(max(best, -res.fun))


# ---------------------------------------------------------------------------
# lp norm smoothness sampling


def lp_smoothness_constant(p: float, n: int, samples: int = 200_000,
                           seed: int = 0) -> float:
    """Sampled midpoint-smoothness constant of the lp norm on R^n.

    Maximizes (|u+h|^(1+a) + |u-h|^(1+a) - 2|u|^(1+a)) / |h|^(1+a) with
    a = p - 1 over random pairs; a numerical lower estimate of the true
    norm constant.  For p = 2 the parallelogram identity makes the ratio
    identically 2.
    """
    if not (1.0 < p <= 2.0):
        raise ValueError("p must lie in (1, 2]")
    if n < 1:
        raise ValueError("n must be positive")
    a = p - 1.0
    q = 1.0 + a
    rng = np.random.default_rng(seed)
    best = 2.0  # attained by u = 0 for every h
    batch = 50_000
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        u = rng.standard_normal((b, n)) * np.exp(rng.normal(0.0, 1.2, size=(b, 1)))
        h = rng.standard_normal((b, n))
        nh = _norm(h, p)
        ok = nh > 1e-12
        num = (_norm(u + h, p) ** q + _norm(u - h, p) ** q - 2.0 * _norm(u, p) ** q)
        ratio = num[ok] / nh[ok] ** q
        if ratio.size:
            best = max(best, float(ratio.max()))
        done += b
    return best


def certify_fixed_point(ext: ExtensionResult) -> float:
    """Residual of one Jacobi pass applied to a finished extension."""
    grid = ext.F
    h = grid.spacing
    dir_data = []
    for d in ext.stencil:
        lines = _direction_lines(grid.shape, d)
        delta = float(_norm(np.asarray(d, dtype=float) * h, grid.norm_p))
        Lmax = lines.shape[1]
        phi_k = ext.phi(delta * np.arange(max(Lmax, 2), dtype=float))
        dir_data.append((lines, lines >= 0, phi_k, delta))
    return _jacobi_residual(grid.values.ravel(), ext.lower.values.ravel(),
                            dir_data, ext.C_used, ext.lip_cap)
