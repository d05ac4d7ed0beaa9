"""Shared generators and oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from jetx import GridSpec, Jet


def smooth_jet(rng, n, k, waves=3, scale=1.0):
    """Jet sampled from a random trig polynomial; A stays moderate."""
    W = rng.normal(size=(waves, n))
    a = rng.normal(size=waves) * scale
    b = rng.uniform(0.0, 2.0 * np.pi, waves)
    pts = _distinct_points(rng, n, k)
    z = pts @ W.T + b
    vals = np.sin(z) @ a
    grads = np.einsum("kj,jn->kn", np.cos(z) * a, W)
    return Jet(points=pts, values=vals, gradients=grads)


def raw_jet(rng, n, k, scale=1.0):
    """Arbitrary finite jet: independent random values and gradients."""
    pts = _distinct_points(rng, n, k)
    return Jet(points=pts, values=rng.normal(size=k) * scale,
               gradients=rng.normal(size=(k, n)) * scale)


def _distinct_points(rng, n, k, min_sep=None):
    if min_sep is None:
        min_sep = min(0.05, 1.0 / k)
    pts = [rng.uniform(-1.0, 1.0, n)]
    attempts = 0
    while len(pts) < k:
        cand = rng.uniform(-1.0, 1.0, n)
        if min(np.linalg.norm(cand - p) for p in pts) > min_sep:
            pts.append(cand)
        attempts += 1
        if attempts > 10_000:
            raise RuntimeError("could not place distinct points")
    return np.asarray(pts)


def grid_aligned_jet(rng, n, k, resolution, box=(-2.0, 2.0), smooth=True):
    """Jet whose points sit exactly on nodes of the returned grid spec."""
    spec = GridSpec(box=tuple([box] * n), shape=(resolution,) * n)
    axes = [np.linspace(lo, hi, resolution) for lo, hi in spec.box]
    # keep points away from the box edge so the envelope has room
    margin = resolution // 4
    chosen = set()
    while len(chosen) < k:
        idx = tuple(int(rng.integers(margin, resolution - margin)) for _ in range(n))
        chosen.add(idx)
    pts = np.array([[axes[a][i[a]] for a in range(n)] for i in sorted(chosen)])
    if smooth:
        W = rng.normal(size=(3, n))
        a = rng.normal(size=3)
        b = rng.uniform(0.0, 2.0 * np.pi, 3)
        z = pts @ W.T + b
        vals = np.sin(z) @ a
        grads = np.einsum("kj,jn->kn", np.cos(z) * a, W)
    else:
        vals = rng.normal(size=len(pts))
        grads = rng.normal(size=pts.shape)
    return Jet(points=pts, values=vals, gradients=grads), spec


def lower_hull_values(x, y):
    """Lower convex hull of the points (x_i, y_i), evaluated back at x.

    Monotone-chain scan; the test-side oracle for envelope identities.
    """
    pts = []
    for xi, yi in zip(x, y):
        while len(pts) >= 2:
            (x1, y1), (x2, y2) = pts[-2], pts[-1]
            if (x2 - x1) * (yi - y1) <= (xi - x1) * (y2 - y1):
                pts.pop()
            else:
                break
        pts.append((xi, yi))
    hx = np.array([p[0] for p in pts])
    hy = np.array([p[1] for p in pts])
    return np.interp(x, hx, hy)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
