"""Command-line front end: ingest jets, run checks, build extensions.

Commands
--------
check      pairwise criteria, the sup-ratio constant, the gradient
           modulus and the constant equivalences of a jet file
extend     build an extension; writes the grid as CSV plus a JSON
           diagnostics sidecar with sampled constants
verify     build and certify an extension; writes the verification
           report and exits nonzero when any check fails
conjugate  tabulate w, phi and phi* for a modulus as CSV
golden     run the quantitative golden example

All structured output is JSON with floats at 17 significant digits, so
identical configurations and seeds produce byte-identical reports.
Dense grids go to CSV.  The JETX_THREADS environment variable caps the
worker count of the inner searches.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import envelope as env
from . import verify as ver
from ._json import dump, write_csv
from .jet import (Jet, SearchBox, check_equivalences, check_mg, check_W,
                  check_wells_W11, compute_A, m_omega_G)
from .modulus import Modulus, check_modulus_identities

__all__ = ["RunConfig", "run", "main"]

_RES_MIN, _RES_MAX = 17, 2049
_NODE_BUDGET = 2 * 10 ** 7
_VARIANTS = ("general", "holder", "c11", "bounded", "lipschitz", "lp")


@dataclass
class RunConfig:
    """Parsed and validated invocation."""

    command: str
    jet_path: str | None = None
    modulus: dict | None = None
    M: float | None = None
    variant: str = "general"
    p: float | None = None
    box: list | None = None
    res: list | None = None
    samples: int = 10_000
    seed: int = 0
    out_dir: str = "."

    def validate(self) -> None:
        if self.command not in ("check", "extend", "verify", "conjugate", "golden"):
            raise ValueError(f"unknown command {self.command!r}")
        if self.command in ("check", "extend", "verify"):
            if not self.jet_path:
                raise ValueError(f"{self.command} requires --jet")
            if not os.path.exists(self.jet_path):
                raise FileNotFoundError(f"jet file not found: {self.jet_path}")
            if self.modulus is None:
                raise ValueError(f"{self.command} requires --modulus")
        if self.command == "conjugate" and self.modulus is None:
            raise ValueError("conjugate requires --modulus")
        if self.variant not in _VARIANTS:
            raise ValueError(f"variant must be one of {_VARIANTS}")
        if self.res is not None:
            for k in self.res:
                if not (_RES_MIN <= k <= _RES_MAX):
                    raise ValueError(f"resolution {k} outside [{_RES_MIN}, {_RES_MAX}]")
        if self.box is not None and self.res is not None:
            if len(self.box) != len(self.res):
                raise ValueError("--box and --res must list the same number of axes")
        if self.res is not None:
            nodes = 1
            for k in self.res:
                nodes *= k
            if len(self.res) * nodes > _NODE_BUDGET:
                raise ValueError(f"grid too large: n*prod(shape) exceeds {_NODE_BUDGET}")
        if self.samples < 1:
            raise ValueError("--samples must be positive")


def _parse_box(text: str) -> list:
    out = []
    for part in text.split(";"):
        lo, hi = part.split(",")
        out.append((float(lo), float(hi)))
    return out


def _load_jet(path: str) -> Jet:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValueError(f"parse error in {path}: line {e.lineno} column {e.colno}: {e.msg}")
    try:
        return Jet.from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"schema error in {path}: {e}")


def _grid_spec(config: RunConfig, jet: Jet) -> env.GridSpec | None:
    if config.box is None and config.res is None:
        return None
    if config.box is not None:
        box = config.box
        if len(box) != jet.dim:
            raise ValueError(f"--box lists {len(box)} axes for a {jet.dim}-d jet")
    else:
        spec = env.default_grid_spec(jet)
        box = list(spec.box)
    if config.res is not None:
        res = list(config.res)
        if len(res) == 1 and jet.dim > 1:
            res = res * jet.dim
        if len(res) != jet.dim:
            raise ValueError(f"--res lists {len(res)} axes for a {jet.dim}-d jet")
    else:
        res = [env._DEFAULT_RES[jet.dim]] * jet.dim
    return env.GridSpec(box=tuple(box), shape=tuple(res))


def _build(config: RunConfig, jet: Jet, modulus: Modulus) -> env.ExtensionResult:
    spec = _grid_spec(config, jet)
    kwargs = dict(grid_spec=spec, M=config.M)
    if config.variant == "lp":
        kwargs["p"] = config.p
    if config.variant in ("bounded", "lipschitz"):
        kwargs.pop("M")
    return env.extend(jet, modulus, config.variant, **kwargs)


def _extension_rows(ext: env.ExtensionResult):
    grid = ext.F
    n = grid.dim
    F = grid.values.ravel()
    grad = ext.grad_F.reshape(-1, n)
    chunk = 100_000
    total = F.size
    for s in range(0, total, chunk):
        idx = np.arange(s, min(s + chunk, total))
        coords = grid.coords_of(idx)
        for k, i in enumerate(idx):
            yield (*coords[k], F[i], *grad[i])


def _write_extension(config: RunConfig, jet: Jet, modulus: Modulus,
                     ext: env.ExtensionResult) -> None:
    n = ext.F.dim
    header = ([f"x{a}" for a in range(n)] + ["F"] + [f"dF_dx{a}" for a in range(n)])
    csv_path = os.path.join(config.out_dir, "extension.csv")
    write_csv(csv_path, header, _extension_rows(ext))

    rng = np.random.default_rng(config.seed)
    nsample = min(config.samples, 5000)
    ratio, _ = ver.sampled_ratio_constant(ext, nsample, rng)
    momega, _ = ver.sampled_gradient_modulus(ext, nsample, rng)
    para_p, _ = ver.sampled_paraconvexity(ext, 1.0, nsample, rng)
    para_n, _ = ver.sampled_paraconvexity(ext, -1.0, nsample, rng)
    diag = ext.to_diagnostics_dict()
    diag["sampled"] = {
        "samples": nsample,
        "seed": config.seed,
        "ratio_constant": ratio,
        "gradient_modulus": momega,
        "paraconvexity_F": para_p,
        "paraconvexity_negF": para_n,
        "grid_tol": ver.default_grid_tol(ext),
    }
    dump(diag, os.path.join(config.out_dir, "extension.json"))
    print(csv_path)
    print(os.path.join(config.out_dir, "extension.json"))


def _run_check(config: RunConfig) -> int:
    jet = _load_jet(config.jet_path)
    modulus = Modulus.from_config(config.modulus)
    search = SearchBox()
    reports = [compute_A(jet, modulus, search)]
    if jet.size >= 2:
        reports.append(m_omega_G(jet, modulus))
    if config.M is not None:
        reports.append(check_W(jet, modulus, config.M))
        reports.append(check_mg(jet, modulus, config.M, search))
        linearish = modulus.kind == "linear" or (modulus.kind == "holder"
                                                 and modulus.alpha == 1.0)
        if linearish:
            reports.append(check_wells_W11(jet, config.M))
    reports.append(check_equivalences(jet, modulus, search))
    out = {"reports": [r.to_dict() for r in reports]}
    path = os.path.join(config.out_dir, "check.json")
    dump(out, path)
    print(path)
    return 0 if all(r.passed for r in reports) else 1


def _run_extend(config: RunConfig) -> int:
    jet = _load_jet(config.jet_path)
    modulus = Modulus.from_config(config.modulus)
    ext = _build(config, jet, modulus)
    _write_extension(config, jet, modulus, ext)
    return 0


def _run_verify(config: RunConfig) -> int:
    jet = _load_jet(config.jet_path)
    modulus = Modulus.from_config(config.modulus)
    ext = _build(config, jet, modulus)
    rep = ver.verify_extension(jet, modulus, ext, samples=config.samples,
                               seed=config.seed)
    p26 = ver.verify_prop26(ext, modulus, samples=config.samples, seed=config.seed)
    rep.checks.extend(p26.checks)
    path = os.path.join(config.out_dir, "verification.json")
    dump(rep.to_dict(), path)
    print(path)
    return 0 if rep.passed else 1


def _run_conjugate(config: RunConfig) -> int:
    modulus = Modulus.from_config(config.modulus)
    lo, hi = config.box[0] if config.box else (0.0, 10.0)
    res = config.res[0] if config.res else 257
    t = np.linspace(lo, hi, res)
    if t[0] < 0:
        raise ValueError("conjugate table needs a nonnegative range")
    rows = zip(t, modulus.omega(t), modulus.phi(t), modulus.phi_star(t))
    path = os.path.join(config.out_dir, "conjugate.csv")
    write_csv(path, ["t", "omega", "phi", "phi_star"], rows)
    ident = check_modulus_identities(modulus, t[t > 0])
    dump({"identities": ident.to_dict()}, os.path.join(config.out_dir, "conjugate.json"))
    print(path)
    return 0 if ident.passed else 1


def _run_golden(config: RunConfig) -> int:
    rep = ver.golden_example_holder_half(samples=config.samples, seed=config.seed or 1)
    path = os.path.join(config.out_dir, "golden.json")
    dump(rep.to_dict(), path)
    print(path)
    for c in rep.checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}")
    return 0 if rep.passed else 1


def run(config: RunConfig) -> int:
    """Execute a validated configuration; returns the exit status."""
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    dispatch = {
        "check": _run_check,
        "extend": _run_extend,
        "verify": _run_verify,
        "conjugate": _run_conjugate,
        "golden": _run_golden,
    }
    return dispatch[config.command](config)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jetx",
                                 description="validate, build and certify "
                                             "first-order extensions of 1-jets")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("check", "extend", "verify", "conjugate", "golden"):
        sp = sub.add_parser(name)
        sp.add_argument("--jet", dest="jet_path", help="jet JSON file")
        sp.add_argument("--modulus", help="modulus JSON, e.g. "
                        "'{\"kind\":\"holder\",\"alpha\":0.5}'")
        sp.add_argument("--M", type=float, default=None,
                        help="constant to test or build with (default: computed)")
        sp.add_argument("--variant", default="general", choices=_VARIANTS)
        sp.add_argument("--p", type=float, default=None, help="lp exponent in (1,2]")
        sp.add_argument("--box", default=None, help="per-axis 'lo,hi;lo,hi;...'")
        sp.add_argument("--res", default=None, help="per-axis node counts 'k,k,...'")
        sp.add_argument("--samples", type=int, default=10_000)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", dest="out_dir", default=".")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        modulus = json.loads(args.modulus) if args.modulus else None
    except json.JSONDecodeError as e:
        print(f"error: malformed --modulus JSON: line {e.lineno} column {e.colno}: {e.msg}",
              file=sys.stderr)
        return 1
    try:
        config = RunConfig(
            command=args.command,
            jet_path=args.jet_path,
            modulus=modulus,
            M=args.M,
            variant=args.variant,
            p=args.p,
            box=_parse_box(args.box) if args.box else None,
            res=[int(v) for v in args.res.split(",")] if args.res else None,
            samples=args.samples,
            seed=args.seed,
            out_dir=args.out_dir,
        )
        return run(config)
    except env.NotExtendableError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, env.OffGridError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
