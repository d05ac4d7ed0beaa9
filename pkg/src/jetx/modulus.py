"""Moduli of continuity and the convex calculus built on them.

A modulus here is a concave, strictly increasing function w on
[0, inf) with w(0) = 0 and w(t) -> inf.  Every consumer in this package
needs, besides w itself, the primitive phi(t) = int_0^t w(s) ds, the
inverse w^-1, and the conjugate primitive phi*(s) = int_0^s w^-1(r) dr,
which coincides with the Fenchel conjugate of phi.  All four are
exposed as evaluators on a single immutable object.

Supported kinds:

* ``holder``     w(t) = t**alpha with alpha in (0, 1]
* ``linear``     w(t) = a*t with a > 0
* ``tabulated``  piecewise-linear interpolation of concave increasing
                 sample pairs, extrapolated with the last slope
"""

from __future__ import annotations

import math
from typing import Any

import numpy as np
from scipy.interpolate import CubicSpline

from .reports import CheckReport

__all__ = [
    "Modulus",
    "RangeExceededError",
    "fenchel_conjugate_numeric",
    "check_modulus_identities",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class RangeExceededError(ValueError):
    """Numeric conjugation attained its supremum at the right edge."""


def _require_nonneg(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.any(arr < 0.0):
        raise ValueError(f"{name} must be nonnegative")
    return arr


def _maybe_scalar(arr: np.ndarray, scalar_in: bool):
    return float(arr[0]) if scalar_in else arr


class Modulus:
    """Concave increasing modulus with w(0) = 0 and its derived calculus.

    Instances are immutable; all evaluators are pure and accept scalars
    or arrays of nonnegative arguments.
    """

    __slots__ = ("kind", "alpha", "slope", "_t", "_w", "_seg", "_phi_knots", "_phistar_knots")

    def __init__(self, kind: str, *, alpha: float | None = None,
                 slope: float | None = None, samples=None):
        self.kind = kind
        self.alpha = None
        self.slope = None
        self._t = None
        self._w = None
        self._seg = None
        self._phi_knots = None
        self._phistar_knots = None
        if kind == "holder":
            if alpha is None or not (0.0 < alpha <= 1.0):
                raise ValueError("holder modulus needs alpha in (0, 1]")
            self.alpha = float(alpha)
        elif kind == "linear":
            if slope is None or not (slope > 0.0) or not math.isfinite(slope):
                raise ValueError("linear modulus needs slope > 0")
            self.slope = float(slope)
        elif kind == "tabulated":
            self._init_tabulated(samples)
        else:
            raise ValueError(f"unknown modulus kind {kind!r}")

    # -- constructors -------------------------------------------------

    @classmethod
    def holder(cls, alpha: float) -> "Modulus":
        return cls("holder", alpha=alpha)

    @classmethod
    def linear(cls, slope: float = 1.0) -> "Modulus":
        return cls("linear", slope=slope)

    @classmethod
    def tabulated(cls, samples) -> "Modulus":
        return cls("tabulated", samples=samples)

    @classmethod
    def from_config(cls, cfg: dict[str, Any]) -> "Modulus":
        """Build from the JSON configuration form.

        Accepted shapes: {"kind":"holder","alpha":a},
        {"kind":"linear","slope":a},
        {"kind":"tabulated","samples":[[t, w], ...]}.
        """
        kind = cfg.get("kind")
        if kind == "holder":
            return cls.holder(float(cfg["alpha"]))
        if kind == "linear":
            return cls.linear(float(cfg["slope"]))
        if kind == "tabulated":
            return cls.tabulated(cfg["samples"])
        raise ValueError(f"unknown modulus kind {kind!r}")

    def to_config(self) -> dict[str, Any]:
        if self.kind == "holder":
            return {"kind": "holder", "alpha": self.alpha}
        if self.kind == "linear":
            return {"kind": "linear", "slope": self.slope}
        return {"kind": "tabulated",
                "samples": [[float(t), float(w)] for t, w in zip(self._t, self._w)]}

    # -- tabulated internals ------------------------------------------

    def _init_tabulated(self, samples):
        arr = np.asarray(samples, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
            raise ValueError("tabulated modulus needs at least two (t, w) sample pairs")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tabulated samples must be finite")
        t, w = arr[:, 0].copy(), arr[:, 1].copy()
        if t[0] < 0.0 or w[0] < 0.0:
            raise ValueError("tabulated samples must be nonnegative")
        if t[0] > 0.0:
            # w(0) = 0 always holds; anchor the interpolant there.
            t = np.concatenate(([0.0], t))
            w = np.concatenate(([0.0], w))
        elif w[0] != 0.0:
            raise ValueError("tabulated modulus must have w(0) = 0")
        dt = np.diff(t)
        dw = np.diff(w)
        if np.any(dt <= 0.0):
            raise ValueError("tabulated abscissae must be strictly increasing")
        if np.any(dw <= 0.0):
            raise ValueError("tabulated modulus must be strictly increasing")
        seg = dw / dt
        tol = 1e-9 * seg[0]
        if np.any(np.diff(seg) > tol):
            raise ValueError("tabulated modulus must be concave (nonincreasing slopes)")
        self._t, self._w, self._seg = t, w, seg
        # Exact cumulative integrals of the interpolant at the knots.
        self._phi_knots = np.concatenate(([0.0], np.cumsum(0.5 * (w[:-1] + w[1:]) * dt)))
        self._phistar_knots = np.concatenate(([0.0], np.cumsum(0.5 * (t[:-1] + t[1:]) * dw)))

    # -- evaluators ----------------------------------------------------

    def omega(self, t):
        """Evaluate w(t) for t >= 0."""
        arr = _require_nonneg(t, "t")
        scalar = arr.ndim == 0
        arr = np.atleast_1d(arr)
        if self.kind == "holder":
            out = arr ** self.alpha
        elif self.kind == "linear":
            out = self.slope * arr
        else:
            kt, kw, seg = self._t, self._w, self._seg
            i = np.clip(np.searchsorted(kt, arr, side="right") - 1, 0, len(kt) - 2)
            out = kw[i] + seg[i] * (arr - kt[i])
            beyond = arr > kt[-1]
            if np.any(beyond):
                out = np.where(beyond, kw[-1] + seg[-1] * (arr - kt[-1]), out)
        return _maybe_scalar(out, scalar)

    def omega_inv(self, s):
        """Evaluate the inverse w^-1(s) for s >= 0."""
        arr = _require_nonneg(s, "s")
        scalar = arr.ndim == 0
        arr = np.atleast_1d(arr)
        if self.kind == "holder":
            out = arr ** (1.0 / self.alpha)
        elif self.kind == "linear":
            out = arr / self.slope
        else:
            # The interpolant is piecewise linear and strictly increasing,
            # so interpolation on the swapped pairs inverts it exactly.
            kt, kw, seg = self._t, self._w, self._seg
            out = np.interp(arr, kw, kt)
            beyond = arr > kw[-1]
            if np.any(beyond):
                out = np.where(beyond, kt[-1] + (arr - kw[-1]) / seg[-1], out)
        return _maybe_scalar(out, scalar)

    def phi(self, t):
        """Evaluate phi(t) = int_0^t w(s) ds."""
        arr = _require_nonneg(t, "t")
        scalar = arr.ndim == 0
        arr = np.atleast_1d(arr)
        if self.kind == "holder":
            out = arr ** (1.0 + self.alpha) / (1.0 + self.alpha)
        elif self.kind == "linear":
            out = 0.5 * self.slope * arr * arr
        else:
            kt, kw, seg, cum = self._t, self._w, self._seg, self._phi_knots
            i = np.clip(np.searchsorted(kt, arr, side="right") - 1, 0, len(kt) - 2)
            dt = arr - kt[i]
            out = cum[i] + kw[i] * dt + 0.5 * seg[i] * dt * dt
            beyond = arr > kt[-1]
            if np.any(beyond):
                dte = arr - kt[-1]
                out = np.where(beyond, cum[-1] + kw[-1] * dte + 0.5 * seg[-1] * dte * dte, out)
        return _maybe_scalar(out, scalar)

    def phi_star(self, s):
        """Evaluate phi*(s) = int_0^s w^-1(r) dr, the conjugate of phi."""
        arr = _require_nonneg(s, "s")
        scalar = arr.ndim == 0
        arr = np.atleast_1d(arr)
        if self.kind == "holder":
            q = 1.0 + 1.0 / self.alpha
            out = arr ** q / q
        elif self.kind == "linear":
            out = 0.5 * arr * arr / self.slope
        else:
            kt, kw, seg, cum = self._t, self._w, self._seg, self._phistar_knots
            i = np.clip(np.searchsorted(kw, arr, side="right") - 1, 0, len(kw) - 2)
            ds = arr - kw[i]
            out = cum[i] + kt[i] * ds + 0.5 * ds * ds / seg[i]
            beyond = arr > kw[-1]
            if np.any(beyond):
                dse = arr - kw[-1]
                out = np.where(beyond, cum[-1] + kt[-1] * dse + 0.5 * dse * dse / seg[-1], out)
        return _maybe_scalar(out, scalar)

    def __repr__(self) -> str:
        if self.kind == "holder":
            return f"Modulus.holder({self.alpha})"
        if self.kind == "linear":
            return f"Modulus.linear({self.slope})"
        return f"Modulus.tabulated(<{len(self._t)} samples>)"


def _golden_max(fun, a: float, b: float, tol: float = 1e-12, max_iter: int = 200):
    """Golden-section maximization of a unimodal function on [a, b]."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    return x, fun(x)


def fenchel_conjugate_numeric(t_samples, f_samples, s: float) -> float:
    """Numeric Fenchel conjugate sup_t {s*t - f(t)} from samples on [0, T].

    The samples are treated as an even function of t, so the supremum
    is searched on t >= 0 only.  The coarse maximum over the samples is
    refined by a golden-section search on a cubic-spline interpolant.

    Raises
    ------
    RangeExceededError
        If the supremum is attained at the right edge T, which means the
        sample range is too short for this slope s.
    """
    t = np.asarray(t_samples, dtype=float)
    f = np.asarray(f_samples, dtype=float)
    if t.ndim != 1 or t.shape != f.shape or t.size < 4:
        raise ValueError("need matching 1-d sample arrays with at least 4 points")
    if np.any(np.diff(t) <= 0.0):
        raise ValueError("t samples must be strictly increasing")
    s = float(s)
    if not math.isfinite(s) or s < 0.0:
        raise ValueError("s must be nonnegative and finite")
    vals = s * t - f
    j = int(np.argmax(vals))
    if j == t.size - 1:
        raise RangeExceededError(
            f"conjugate of the samples at s={s} is attained at the right edge; enlarge T")
    spline = CubicSpline(t, f)
    lo = t[max(j - 1, 0)]
    hi = t[j + 1]
    _, refined = _golden_max(lambda x: s * x - float(spline(x)), lo, hi,
                             tol=1e-13 * max(1.0, t[-1]))
    return float(max(vals[j], refined))


def check_modulus_identities(m: Modulus, t_samples, tol: float | None = None) -> CheckReport:
    """Verify the elementary inequalities and identities of the calculus.

    Per sample t the following are checked:

    * (t/2) w(t) <= phi(t) <= t w(t/2)
    * t w^-1(t/2) <= phi*(t) <= (t/2) w^-1(t)
    * phi(t) + phi*(w(t)) = t w(t) within tol
    * w(c t) <= c w(t) for c in {1, 2, 5}

    The report records the worst slack and the sample realizing it.
    """
    if tol is None:
        tol = 1e-6 if m.kind == "tabulated" else 1e-8
    t = _require_nonneg(t_samples, "t_samples")
    t = np.atleast_1d(t)
    if np.any(t <= 0.0):
        raise ValueError("t_samples must be strictly positive")

    w_t = m.omega(t)
    w_half = m.omega(0.5 * t)
    ph = m.phi(t)
    phs = m.phi_star(t)
    winv_t = m.omega_inv(t)
    winv_half = m.omega_inv(0.5 * t)

    slacks = {
        "phi_lower": ph - 0.5 * t * w_t,
        "phi_upper": t * w_half - ph,
        "phistar_lower": phs - t * winv_half,
        "phistar_upper": 0.5 * t * winv_t - phs,
        "young_equality": -np.abs(ph + m.phi_star(w_t) - t * w_t),
    }
    for c in (1.0, 2.0, 5.0):
        slacks[f"subadditive_c{c:g}"] = c * w_t - m.omega(c * t)

    worst = math.inf
    worst_t = t[0]
    per_identity = {}
    for name, sl in slacks.items():
        k = int(np.argmin(sl))
        per_identity[name] = float(sl[k])
        if sl[k] < worst:
            worst = float(sl[k])
            worst_t = float(t[k])
    passed = worst >= -tol
    return CheckReport(
        condition="modulus-identities",
        constant=float(tol),
        worst_slack=float(worst),
        witness=[[worst_t]],
        passed=bool(passed),
        details=per_identity,
    )
