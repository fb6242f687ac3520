"""Command-line interface: ``endotree <command> [model.json | --builtin NAME]``.

JSON reports go to stdout, CSV tables to ``--out`` (stdout if omitted).
Exit codes: 0 success/decided, 2 invalid input, 3 indeterminate verdict,
4 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from . import __version__
from ._backend import BACKEND
from .endogeny import bivariate_uniqueness_probe, classify, random_coupling
from .kernels import product_coupling, two_point_kernel, number_form, one_point_kernel
from .model import BUILTINS, ModelError, builtin, load, to_dict, validate
from .oracle import (ResourceError, exact_coupling_disagreement, exact_kn_residual,
                     exact_pgf, exact_spectral_measure)
from .spectral import analyze as spectral_analyze

EXIT_OK, EXIT_INVALID, EXIT_INDETERMINATE, EXIT_RESOURCE = 0, 2, 3, 4


class _Invalid(Exception):
    pass


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _dump(obj, stream=None):
    stream = stream or sys.stdout
    json.dump(obj, stream, indent=1, default=_json_default)
    stream.write("\n")


def _raw_model(args):
    if args.builtin:
        return builtin(args.builtin)
    if not args.model:
        raise _Invalid("give a model file or --builtin NAME")
    return load(args.model)


def _valid_model(args):
    report = validate(_raw_model(args))
    if not report.ok:
        _dump({"validation": report.to_dict()})
        raise _Invalid("model failed validation")
    return report


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _seed_comment(args) -> str:
    return f"# endotree {__version__} backend={BACKEND} seed={getattr(args, 'seed', None)}\n"


# -- commands ---------------------------------------------------------------

def cmd_validate(args) -> int:
    report = validate(_raw_model(args))
    _dump(report.to_dict())
    return EXIT_OK if report.ok else EXIT_INVALID


def _kernel_stats(model, kernel):
    P = one_point_kernel(model)
    diag = kernel.index.diagonal
    off = kernel.index.off_diagonal
    return {
        "one_point_row_sum_error": float(np.abs(P.sum(axis=1) - 1).max()),
        "two_point_row_sum_error": float(np.abs(kernel.P2.sum(axis=1) - 1).max()),
        "diagonal_absorption_exact": bool((kernel.P2[np.ix_(diag, off)] == 0).all()),
        "mu_stationarity_residual": float(np.abs(model.mu @ P - model.mu).max()),
        "Pminus": kernel.Pminus.tolist(),
    }


def cmd_analyze(args) -> int:
    t0 = time.perf_counter()
    report = _valid_model(args)
    model = report.model
    kernel = two_point_kernel(model)
    t1 = time.perf_counter()
    spectral = spectral_analyze(kernel, model.mu)
    t2 = time.perf_counter()
    verdict = classify(model, spectral, m_max=args.mmax, kernel=kernel)
    t3 = time.perf_counter()
    out = {
        "model": {"states": list(model.states), "innovations": list(model.innovations),
                  "s": model.s, "e": model.e, "symmetric": report.symmetric},
        "validation": report.to_dict(),
        "kernels": _kernel_stats(model, kernel),
        "spectral": spectral.to_dict(kernel.index, model.states),
        "verdict": verdict.to_dict(),
        "settings": {"mmax": args.mmax, "tol_crit": 1e-9, "seed": args.seed},
        "versions": {"endotree": __version__, "numpy": np.__version__, "backend": BACKEND},
        "timings": {"kernels": t1 - t0, "spectral": t2 - t1, "classify": t3 - t2},
    }
    if args.bivariate:
        probe = bivariate_uniqueness_probe(model, n=args.bivariate,
                                           rng=np.random.default_rng(args.seed))
        out["bivariate"] = {"terminal_masses": probe.terminal_masses,
                            "evidence_for_uniqueness": probe.evidence_for_uniqueness}
    _dump(out)
    return EXIT_OK if verdict.decided else EXIT_INDETERMINATE


def cmd_bivariate(args) -> int:
    model = _valid_model(args).model
    rng = np.random.default_rng(args.seed)
    starts = [product_coupling(model.mu)]
    starts += [random_coupling(model.mu, rng) for _ in range(max(0, args.starts - 1))]
    probe = bivariate_uniqueness_probe(model, starts, n=args.n, tol=args.tol)
    fh, close = _open_out(args.out)
    try:
        fh.write(_seed_comment(args))
        w = csv.writer(fh)
        w.writerow(["start", "step", "off_diagonal_mass"])
        for i, trace in enumerate(probe.traces):
            for k, d in enumerate(trace):
                w.writerow([i, k, repr(d)])
    finally:
        if close:
            fh.close()
    if args.out not in (None, "-"):
        _dump({"terminal_masses": probe.terminal_masses,
               "evidence_for_uniqueness": probe.evidence_for_uniqueness, "seed": args.seed})
    return EXIT_OK


def cmd_spectrum(args) -> int:
    from .superop import (MAX_RECOVER_LEVEL, laplace_limit, pgf_spectral_measure,
                          recover_masses)

    model = _valid_model(args).model
    f = np.asarray(_floats(args.f)) if args.f else np.arange(model.s, dtype=float)
    if len(f) != model.s:
        raise _Invalid(f"--f needs {model.s} values")
    zs = _floats(args.z)
    rows = []
    for n in range(args.n + 1):
        for z in zs:
            rows.append((n, "pgf", z, pgf_spectral_measure(model, f, n, z)))
        rows.append((n, "total_mass", 1.0, pgf_spectral_measure(model, f, n, 1.0)))
        rows.append((n, "mean", 1.0, number_form(model, f, n)))
        if n <= min(MAX_RECOVER_LEVEL, args.masses):
            for k, mass in enumerate(recover_masses(model, f, n)):
                rows.append((n, "mass", k, float(mass)))
    if args.t:
        kernel = two_point_kernel(model)
        spectral = spectral_analyze(kernel, model.mu)
        try:
            for t in _floats(args.t):
                lim = laplace_limit(model, spectral, f, t, args.n)
                rows.extend((n, "laplace", t, v) for n, v in enumerate(lim.values))
        except ValueError as exc:
            print(f"laplace values skipped: {exc}", file=sys.stderr)
    fh, close = _open_out(args.out)
    try:
        w = csv.writer(fh)
        w.writerow(["n", "quantity", "point", "value"])
        for n, q, x, v in rows:
            w.writerow([n, q, repr(float(x)) if isinstance(x, float) else x, repr(float(v))])
    finally:
        if close:
            fh.close()
    return EXIT_OK


def cmd_dynamics(args) -> int:
    from .montecarlo import (gillespie_qn, qn_autocovariance, qn_semigroup_exact,
                             refresh_autocovariance, refresh_dynamics)
    from .superop import build_Q, laplace_limit, pgf_spectral_measure

    model = _valid_model(args).model
    f = np.asarray(_floats(args.f)) if args.f else np.arange(model.s, dtype=float)
    lags = _floats(args.lags)
    comparison = {"mode": args.mode, "n": args.n, "seed": args.seed, "lags": lags}
    if args.mode == "qn":
        kernel = two_point_kernel(model)
        spectral = spectral_analyze(kernel, model.mu)
        Q = build_Q(model, spectral)
        traj = gillespie_qn(model, spectral, Q, args.n, args.t_end, args.seed)
        est = qn_autocovariance(model, spectral, Q, f, args.n, lags, args.trials, args.seed,
                                threads=args.threads)
        comparison["exact_finite_n"] = [qn_semigroup_exact(model, spectral, Q, f, args.n, t)
                                        for t in lags]
        try:
            comparison["laplace_limit"] = [laplace_limit(model, spectral, f, t).estimate
                                           for t in lags]
        except ValueError as exc:
            comparison["laplace_limit"] = str(exc)
    else:
        traj = refresh_dynamics(model, args.n, args.t_end, args.seed)
        est = refresh_autocovariance(model, f, args.n, lags, args.trials, args.seed,
                                     threads=args.threads)
        comparison["exact_finite_n"] = [pgf_spectral_measure(model, f, args.n, np.exp(-t))
                                        for t in lags]
    comparison.update(estimate=est.values, se=est.se, trials=est.trials, events=est.events)
    fh, close = _open_out(args.out)
    try:
        fh.write(_seed_comment(args))
        w = csv.writer(fh)
        w.writerow(["time", "root_state"])
        for t, x in zip(traj.times, traj.roots):
            w.writerow([repr(t), model.states[x]])
    finally:
        if close:
            fh.close()
    _dump(comparison, sys.stdout if close else sys.stderr)
    return EXIT_OK


def oracle_table(model, n: int) -> list[tuple[str, bool, float]]:
    """(check, passed, worst deviation) rows over the brute-force identities."""
    kernel = two_point_kernel(model)
    tests = [np.eye(model.s)[i] for i in range(model.s)] + [np.arange(model.s, dtype=float)]
    rows = []
    from .superop import pgf_spectral_measure

    worst = {"completeness": 0.0, "mean identity": 0.0, "generating function": 0.0,
             "number-operator bound": 0.0}
    for f in tests:
        masses = exact_spectral_measure(model, f, n)
        worst["completeness"] = max(worst["completeness"], abs(masses.sum() - model.mu @ f**2))
        nf = number_form(model, f, n, kernel=kernel)
        worst["mean identity"] = max(worst["mean identity"],
                                     abs(np.arange(len(masses)) @ masses - nf))
        for z in (0.0, 0.25, 0.5, 0.75, 1.0):
            worst["generating function"] = max(
                worst["generating function"],
                abs(pgf_spectral_measure(model, f, n, z) - exact_pgf(model, f, n, z)))
        resid, af = exact_kn_residual(model, f, n)
        worst["number-operator bound"] = max(worst["number-operator bound"],
                                             max(0.0, -resid - 1e-12, resid - af - 1e-12))
    for name, val in worst.items():
        rows.append((name, val <= 1e-10, float(val)))
    from .kernels import bivariate_iterate

    lam = bivariate_iterate(model, product_coupling(model.mu), n).masses[-1]
    dev = abs(exact_coupling_disagreement(model, n) - lam)
    rows.append(("coupling disagreement", dev <= 1e-12, float(dev)))
    return rows


def cmd_oracle_check(args) -> int:
    raw = _raw_model(args)
    report = validate(raw)
    rows = [("validation", report.ok, report.invariance_residual)]
    if report.ok:
        rows += oracle_table(report.model, args.n)
    for name, ok, dev in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<24} {dev:.3e}")
    if not report.ok:
        return EXIT_INVALID
    return EXIT_OK if all(ok for _, ok, _ in rows) else 1


def cmd_search(args) -> int:
    from .montecarlo import search_critical_symmetric

    inject = [builtin(b) for b in args.inject] if args.inject else []
    inject = [validate(m).model for m in inject if validate(m).ok]
    found = search_critical_symmetric(args.seed, args.budget, band=args.band, inject=inject)
    _dump({"seed": args.seed, "budget": args.budget, "band": args.band,
           "candidates": [{"model": to_dict(m), "verdict": v.to_dict()} for m, v in found]})
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .montecarlo import default_threads

    p = argparse.ArgumentParser(prog="endotree", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def model_cmd(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("model", nargs="?", help="model JSON file")
        sp.add_argument("--builtin", choices=BUILTINS, type=str.upper)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=default_threads())
        sp.set_defaults(func=func)
        return sp

    model_cmd("validate", cmd_validate, "check a model file")
    sp = model_cmd("analyze", cmd_analyze, "kernels, Perron data and endogeny verdict")
    sp.add_argument("--mmax", type=int, default=3)
    sp.add_argument("--bivariate", type=int, default=0, metavar="N",
                    help="also run the bivariate probe for N steps")
    sp = model_cmd("bivariate", cmd_bivariate, "off-diagonal mass of the two-point recursion")
    sp.add_argument("--starts", type=int, default=10)
    sp.add_argument("--n", type=int, default=60)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--out")
    sp = model_cmd("spectrum", cmd_spectrum, "generating functions of the spectral measures")
    sp.add_argument("--f", help="root observable, comma separated")
    sp.add_argument("--n", type=int, default=4)
    sp.add_argument("--z", default="0,0.25,0.5,0.75,1")
    sp.add_argument("--t", help="times for rescaled Laplace values")
    sp.add_argument("--masses", type=int, default=6, help="recover masses up to this level")
    sp.add_argument("--out")
    sp = model_cmd("dynamics", cmd_dynamics, "simulate tree dynamics against exact values")
    sp.add_argument("--mode", choices=("qn", "refresh"), default="qn")
    sp.add_argument("--n", type=int, default=4)
    sp.add_argument("--t-end", type=float, default=1.0)
    sp.add_argument("--f")
    sp.add_argument("--lags", default="0.2,1")
    sp.add_argument("--trials", type=int, default=20_000)
    sp.add_argument("--out")
    sp = model_cmd("oracle-check", cmd_oracle_check, "brute-force identity table")
    sp.add_argument("--n", type=int, choices=(1, 2), default=1)

    sp = sub.add_parser("search", help="scan random symmetric critical models")
    sp.add_argument("--budget", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--band", type=float, default=1e-6)
    sp.add_argument("--inject", nargs="*", type=str.upper, choices=BUILTINS)
    sp.set_defaults(func=cmd_search)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModelError, _Invalid) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ResourceError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
