"""Command-line entry point: ``gmclab --experiment NAME [options] [key=value ...]``.

Parameters are resolved in order defaults < config file < key=value pairs <
dedicated flags.  Every run writes its results and a manifest (resolved
config, package version, seed lineage, wall time) to ``--out`` atomically.

Exit codes: 0 success, 1 numerical failure, 2 usage error, 3 precondition.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import config
from .errors import NumericalError, PreconditionError
from .io import VERSION, UsageError, dumps, read_config, write_outputs

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE, EXIT_PRECONDITION = 0, 1, 2, 3


# ------------------------------------------------------------ param types

def _floats(v):
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(x) for x in str(v).split(",") if x.strip()]


def _ints(v):
    if isinstance(v, (list, tuple)):
        return [int(x) for x in v]
    return [int(x) for x in str(v).split(",") if x.strip()]


def _json(v):
    return json.loads(v) if isinstance(v, str) else v


def _complex_list(v):
    """JSON list of [x, y] pairs or numbers."""
    out = []
    for p in _json(v):
        out.append(complex(p[0], p[1]) if isinstance(p, (list, tuple)) else complex(p))
    return out


def _insertions(v):
    """JSON list of {"z": [x, y], "alpha": a} objects or [x, y, alpha] triples."""
    out = []
    for it in _json(v):
        if isinstance(it, dict):
            z = it["z"]
            out.append((complex(z[0], z[1]), float(it["alpha"])))
        else:
            out.append((complex(it[0], it[1]), float(it[2])))
    return out


def _bool(v):
    if isinstance(v, bool):
        return v
    return str(v).lower() in ("1", "true", "yes", "on")


@dataclass
class Experiment:
    name: str
    anchor: str
    params: dict  # name -> (parser, default)
    run: Callable


REGISTRY: dict[str, Experiment] = {}


def experiment(name, anchor, **params):
    def deco(fn):
        REGISTRY[name] = Experiment(name, anchor, params, fn)
        return fn
    return deco


def list_experiments():
    return [{"name": e.name, "anchor": e.anchor,
             "params": sorted(e.params)} for _, e in sorted(REGISTRY.items())]


# ------------------------------------------------------------ experiments

@experiment("gmc-build", "chaos measure M_eps,gamma on the unit square (cell weights)",
            gamma=(float, 1.0), eps=(float, 2**-5), refine=(int, 2),
            base=(str, "uniform"), mollifier=(str, "bump"), mode=(str, "auto"))
def _gmc_build(p, seed):
    from .field import LogKernelSpec, MollifierSpec, sample_log_field
    from .gmc import build_gmc, grid_for
    k = LogKernelSpec()
    grid = grid_for(k, p["eps"], p["refine"])
    f = sample_log_field(k, MollifierSpec(p["mollifier"]), grid, p["eps"],
                         seed, p["mode"])
    m = build_gmc(f, p["gamma"], p["base"])
    table = [{"x": x, "y": y, "weight": w}
             for (x, y), w in zip(m.points, m.weights)]
    return {"total_mass": m.total_mass, "total_mass_exact": True,
            "cells": len(table), "sampler": f.mode,
            "cov_error": f.cov_error}, table


@experiment("gmc-moments", "moments E[M_eps(O)^q] over a ball with divergence flags",
            gamma=(float, 1.0), eps=(float, 1 / 16), qs=(_floats, [2.0, 5.0]),
            n=(int, 20000), radius=(float, 0.5), mode=(str, "auto"))
def _gmc_moments(p, seed):
    from .field import LogKernelSpec
    from .gmc import Ball, moment_scan
    res = moment_scan(LogKernelSpec(), p["gamma"], Ball((0.5, 0.5), p["radius"]),
                      p["qs"], p["eps"], p["n"], seed, p["mode"])
    table = [r.__dict__ for r in res]
    return {"results": table}, table


@experiment("gmc-cauchy", "L2 Cauchy diagnostic E[(M_eps(A)-M_eps/2(A))^2] along a dyadic ladder",
            gamma=(float, 0.8), levels=(_ints, [3, 4, 5]), n=(int, 10000),
            oracle=(_bool, True), mode=(str, "auto"))
def _gmc_cauchy(p, seed):
    from .field import Box, LogKernelSpec
    from .gmc import cauchy_diagnostic, grid_for
    k = LogKernelSpec()
    rows = []
    for lv in p["levels"]:
        e = 2.0**-lv
        r = cauchy_diagnostic(k, p["gamma"], Box(), e, e / 2, p["n"], seed,
                              grid=grid_for(k, e / 2), oracle=p["oracle"],
                              mode=p["mode"])
        rows.append({"eps": r.eps, "eps_p": r.eps_p, "estimate": r.estimate,
                     "stderr": r.stderr,
                     "oracle": r.oracle if r.oracle is not None else float("nan")})
    return {"results": rows}, rows


@experiment("zeta-fit", "structure function: E[M(B(x,r))^q] ~ r^zeta(q)",
            d=(int, 2), gamma=(float, 0.5), q=(float, 2.0), eps=(float, 2**-7),
            radii=(_floats, [1 / 4, 1 / 8, 1 / 16, 1 / 32]), n=(int, 2000),
            mode=(str, "auto"))
def _zeta_fit(p, seed):
    from .field import LogKernelSpec
    from .multifractal import estimate_zeta
    if p["d"] != 2:
        raise PreconditionError("only d = 2 fields are implemented")
    fit = estimate_zeta(LogKernelSpec(), p["gamma"], p["q"], radii=p["radii"],
                        eps=p["eps"], n=p["n"], seed=seed, mode=p["mode"])
    rows = [{"radius": r, "log_moment": lm, "log_moment_se": se}
            for r, lm, se in zip(fit.radii, fit.log_moments, fit.log_moment_se)]
    return {"slope": fit.slope, "slope_ci": list(fit.slope_ci),
            "stderr": fit.boot_sd, "target": fit.target,
            "ci_meets_10pct_band": fit.ci_meets_band(), "q": fit.q}, rows


@experiment("thick-points", "field ratio X_{2^-n}(x)/(n ln 2) at points sampled from M_gamma",
            gamma=(float, 1.0), levels=(int, 7), n=(int, 4000), eta=(float, 0.5))
def _thick(p, seed):
    from .field import LogKernelSpec
    from .multifractal import reference_tail_rate, thick_point_histogram
    h = thick_point_histogram(LogKernelSpec(), p["gamma"], p["levels"], p["n"],
                              seed, eta=p["eta"])
    rows = [{"bin_lo": a, "bin_hi": b, "count": int(c)}
            for a, b, c in zip(h.edges[:-1], h.edges[1:], h.counts)]
    return {"mean": h.mean, "stderr": h.stderr, "mode": h.mode,
            "tail_mass": h.tail_mass, "tail_slope": h.tail_slope,
            "reference_rate": reference_tail_rate(p["eta"])}, rows


@experiment("seiberg-scan", "dyadic-shell verdicts for int |y-x|^{-alpha gamma} M(dy)",
            gamma=(float, 1.0), alphas=(_floats, [1.0, 3.0]), runs=(int, 20),
            eps=(float, 2**-8))
def _seiberg_scan(p, seed):
    from .multifractal import seiberg_runs
    rows = seiberg_runs(p["gamma"], p["alphas"], p["runs"], seed, p["eps"])
    counts = {}
    for r in rows:
        c = counts.setdefault(str(r["alpha"]), {})
        c[r["verdict"]] = c.get(r["verdict"], 0) + 1
    return {"verdict_counts": counts}, rows


def _lqft_common(p):
    from .lqft import InsertionSet, LqftParams
    return InsertionSet.of([z for z, _ in p["insertions"]],
                           [a for _, a in p["insertions"]]), \
        LqftParams(p["gamma"], p["mu"])


_TRIPLE = [[0, 0, 1.632993161855452], [1, 0, 1.632993161855452],
           [1, 1, 1.632993161855452]]


@experiment("lqft-corr", "LQFT correlation: Green prefactor x Gamma(s,mu) x E[Z(S)^-s]",
            gamma=(float, float(np.sqrt(8 / 3))), mu=(float, 1.0),
            insertions=(_insertions, _TRIPLE), n=(int, 2000),
            grid=(float, 1 / 24))
def _lqft_corr(p, seed):
    from .field.sphere import SphereGrid
    from .lqft import correlation_mc
    ins, par = _lqft_common(p)
    r = correlation_mc(ins, par, p["n"], seed, SphereGrid(h=p["grid"]))
    return r.as_dict(), None


def _mobius(spec):
    from .lqft import Mobius
    kind, _, arg = str(spec).partition(":")
    if kind == "identity":
        return Mobius.identity()
    if kind == "rotation":
        return Mobius.rotation(float(arg))
    if kind == "scaling":
        return Mobius.scaling(float(arg))
    if kind == "abcd":
        return Mobius(*[complex(x) for x in arg.split(",")])
    raise UsageError(f"bad Mobius spec {spec!r} (identity | rotation:t | "
                     "scaling:l | abcd:a,b,c,d)")


@experiment("lqft-kpz", "Mobius covariance of LQFT correlations with weights Delta_alpha",
            gamma=(float, float(np.sqrt(8 / 3))), mu=(float, 1.0),
            insertions=(_insertions, _TRIPLE), psi=(str, "scaling:2"),
            n=(int, 2000), grid=(float, 1 / 24))
def _lqft_kpz(p, seed):
    from .field.sphere import SphereGrid
    from .lqft import kpz_covariance_check
    ins, par = _lqft_common(p)
    r = kpz_covariance_check(ins, _mobius(p["psi"]), par, p["n"], seed,
                             SphereGrid(h=p["grid"]))
    return {"ratio": r.ratio, "stderr": r.stderr, "z": r.z,
            "insertions": ins.as_list(), "gamma": par.gamma, "mu": par.mu,
            "estimate": r.ratio, "ess": min(r.lhs.ess, r.rhs.ess),
            "seed": seed}, None


@experiment("lqft-measure", "unit-volume Liouville measure ensemble (mu-free)",
            gamma=(float, float(np.sqrt(8 / 3))), mu=(float, 1.0),
            insertions=(_insertions, _TRIPLE), n=(int, 2000),
            grid=(float, 1 / 24))
def _lqft_measure(p, seed):
    from .field.sphere import SphereGrid
    from .lqft import unit_volume_sample
    ins, par = _lqft_common(p)
    grid = SphereGrid(h=p["grid"])
    ens = unit_volume_sample(ins, par.gamma, p["n"], seed, grid, params=par)
    upper = ens.measures @ (np.abs(grid.z) > 1)
    m, se = ens.expect(upper)
    rows = [{"member": i, "log_total": lt, "weight": w, "upper_mass": u}
            for i, (lt, w, u) in enumerate(zip(ens.log_total, ens.weights, upper))]
    return {"insertions": ins.as_list(), "gamma": par.gamma, "mu": par.mu,
            "estimate": m, "stderr": se, "ess": ens.ess, "seed": seed,
            "functional": "mass of |z| > 1", "s": ens.s}, rows


@experiment("reroot-test", "rerooting invariance of the three-gamma unit-volume measure",
            gamma=(float, float(np.sqrt(8 / 3))), n=(int, 10000),
            grid=(float, 1 / 24))
def _reroot(p, seed):
    from .field.sphere import SphereGrid
    from .lqft import rerooting_check
    res = rerooting_check(p["gamma"], ("total-mass", "cap-mass", "cap-mass-squared"),
                          p["n"], seed, SphereGrid(h=p["grid"]))
    rows = [r.as_dict() for r in res]
    return {"results": rows, "any_rejected": any(r.reject for r in res)}, rows


@experiment("ising-exact", "continuum spin correlation <sigma(z_1)...sigma(z_n)> (exact sum)",
            points=(_complex_list, [[0, 0], [1, 0]]))
def _ising_exact(p, seed):
    from .ising import spin_correlation_exact
    v = spin_correlation_exact(p["points"])
    return {"value": v, "exact": True,
            "points": [[z.real, z.imag] for z in p["points"]]}, None


@experiment("ising-mc", "+ boundary Ising chain: magnetization and centre correlations",
            N=(int, 32), beta=(float, float(0.5 * np.log1p(np.sqrt(2)))),
            sweeps=(int, 2000), algorithm=(str, "cluster"))
def _ising_mc(p, seed):
    from .gmc import mean_se
    from .ising import sample_ising
    mags, rows = [], []
    for c in sample_ising(p["N"], p["beta"], p["sweeps"], p["algorithm"], seed):
        m = float(c.spins.mean())
        mags.append(m)
        rows.append({"sweep": c.sweep, "magnetization": m})
    e = mean_se(mags)
    return {"magnetization": e.value, "stderr": e.stderr,
            "stderr_note": "naive (ignores autocorrelation)"}, rows


@experiment("ising-scaling", "lattice vs continuum four-point ratio at beta_c",
            points=(_complex_list, [[-16, -16], [16, -16], [16, 16], [-16, 16]]),
            N=(int, 128), eps=(float, 1.0), n=(int, 4000))
def _ising_scaling(p, seed):
    from .ising import scaling_ratio_check
    r = scaling_ratio_check(p["points"], p["N"], p["eps"], p["n"], seed)
    return r.as_dict(), None


# ---------------------------------------------------------------- driver

_FLAG_KEYS = {"samples": "n", "gamma": "gamma", "mu": "mu", "grid": "grid"}


def resolve(exp: Experiment, file_cfg: dict, pairs: dict, flags: dict):
    """(experiment params, numerical settings) after merging all sources."""
    merged = {**file_cfg, **pairs}
    for flag, key in _FLAG_KEYS.items():
        if flags.get(flag) is not None:
            merged[key] = flags[flag]
    settings = {k: merged.pop(k) for k in list(merged) if k in config.KEYS}
    out = {}
    for k, v in merged.items():
        if k not in exp.params:
            raise UsageError(f"unknown parameter {k!r} for experiment "
                             f"{exp.name!r} (known: {', '.join(sorted(exp.params))})")
        parser = exp.params[k][0]
        try:
            out[k] = parser(v)
        except (TypeError, ValueError, KeyError, IndexError,
                json.JSONDecodeError) as e:
            raise UsageError(f"bad value for {k!r}: {v!r} ({e})") from None
    for k, (parser, default) in exp.params.items():
        out.setdefault(k, parser(default) if parser in (_insertions, _complex_list)
                       else default)
    return out, settings


def run(name, params_in=None, seed=0, out=None, fmt="csv", file_cfg=None,
        flags=None):
    """Resolve and execute one experiment; returns the result record."""
    if name not in REGISTRY:
        raise UsageError(f"unknown experiment {name!r}; see --list")
    exp = REGISTRY[name]
    params, settings = resolve(exp, file_cfg or {}, params_in or {}, flags or {})
    t0 = time.perf_counter()
    with config.override(**{config.KEYS[k]: config._coerce(config.KEYS[k], v)
                            for k, v in settings.items()}):
        caught = []
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            record, table = exp.run(params, seed)
            caught = [str(x.message) for x in w]
        snap = config.snapshot()
    wall = time.perf_counter() - t0
    record = {"experiment": name, "seed": seed, **record}
    if caught:
        record["warnings"] = caught
    if out is not None:
        manifest = {"experiment": name, "anchor": exp.anchor,
                    "version": VERSION, "seed": seed,
                    "seed_lineage": f"philox(seed={seed}, path=<task tag>, <chunk>)",
                    "params": params, "settings": snap, "format": fmt,
                    "wall_time_s": wall}
        write_outputs(out, name, record, table, fmt, manifest)
    return {**record, "wall_time_s": wall}


def _parse_pairs(items):
    out = {}
    for it in items:
        if "=" not in it:
            raise UsageError(f"expected key=value, got {it!r}")
        k, v = it.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="gmclab", description=__doc__.split("\n")[0])
    p.add_argument("--experiment", "-e")
    p.add_argument("--list", action="store_true", help="print the experiment catalog")
    p.add_argument("--config", help="flat key = value (TOML) config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--samples", type=int)
    p.add_argument("--grid", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("pairs", nargs="*", metavar="key=value")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        if args.list:
            cat = list_experiments()
            if args.format == "json":
                sys.stdout.write(dumps(cat))
            else:
                for e in cat:
                    print(f"{e['name']:<14} {e['anchor']}")
            return EXIT_OK
        if not args.experiment:
            raise UsageError("--experiment is required (or --list)")
        file_cfg = read_config(args.config) if args.config else {}
        if "seed" in file_cfg and args.seed == 0:
            args.seed = int(file_cfg.pop("seed"))
        file_cfg.pop("seed", None)
        flags = {"samples": args.samples, "gamma": args.gamma, "mu": args.mu,
                 "grid": args.grid}
        rec = run(args.experiment, _parse_pairs(args.pairs), args.seed,
                  args.out, args.format, file_cfg, flags)
        sys.stdout.write(dumps(rec))
        return EXIT_OK
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PreconditionError as e:
        print(f"precondition [{e.code}]: {e}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericalError as e:
        print(f"numerical failure [{e.code}]: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
