"""Command-line entry point: sample, solve, estimate, sweep, large-n.

Every subcommand accepts ``--config FILE`` (a JSON object). Keys are the long
option names of that subcommand, with ``-`` or ``_``, either at the top level
or grouped one level deep in blocks such as ``{"kernel": {"l": 0.3}}``.
Unknown keys are rejected. Explicit flags override the file.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import json
import os
import sys
import warnings

import numpy as np
from threadpoolctl import threadpool_limits

from . import bench
from .estimator import UndefinedEstimateError, estimate_with_bound, parse_integrand
from .kernels import DEFAULT_BUDGET_BYTES, DEFAULT_DENSE_LIMIT, KernelAction, SteinKernel
from .precond import FAMILIES, PreconditionerError, build_preconditioner
from .samples import distinct_prefix, generate_logistic_data, load_samples, rwmh_sample, save_samples
from .solver import DenseSolveError, SolveConfig, dense_solve, pcg

CONFIG_BLOCKS = ("target", "sampler", "kernel", "precond", "solver", "sweep", "study", "output")


class UsageError(Exception):
    pass


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _words(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _N(text):
    return "all" if str(text) == "all" else int(text)


# (flag, type, default, help); a default of None means "unset"
COMMON = [
    ("config", str, None, "JSON config file; flags override it"),
    ("seed", int, 0, "master seed"),
    ("threads", int, None, "parallel width for kernel actions and sweep replicates (default: all cores)"),
]

SAMPLE = [
    ("d", int, 4, "parameter dimension"),
    ("n-data", int, 1000, "number of logistic-regression observations"),
    ("intercept", bool, False, "make the first covariate column all ones"),
    ("step", float, None, "random-walk step size (default: tuned value for d)"),
    ("iters", int, 50_000, "MCMC iterations"),
    ("burn-in", int, 0, "iterations discarded from the start of the chain"),
    ("N", _N, "all", "keep the first N distinct states, or 'all'"),
    ("output", str, None, "output sample file (.npz)"),
]

KERNEL = [
    ("kernel", str, "imq", "base kernel profile"),
    ("l", float, 1.0, "kernel length scale"),
    ("bandwidth", int, None, "rows per batch in the kernel action (default: from the memory budget)"),
    ("budget-mb", float, DEFAULT_BUDGET_BYTES / 2**20, "memory budget for one batch, MiB"),
    ("cache", bool, False, "keep the kernel matrix in memory between actions when it fits the budget"),
]

PRECOND = [
    ("precond", str, "none", "preconditioner family: " + ", ".join(FAMILIES)),
    ("b", int, 1, "Jacobi block size"),
    ("n", int, None, "inducing points / sketch size (default: ceil(sqrt N))"),
    ("eta", float, 1e-2, "nugget"),
    ("r", int, 10, "spectral rank"),
    ("precond-seed", int, None, "preconditioner seed (default: --seed)"),
    ("inner", str, None, "CG inner product: euclidean or rkhs (default: rkhs for spectral)"),
]

SOLVER = [
    ("criterion", str, "residual", "ground-truth, residual or fixed"),
    ("tau", float, 1.01, "ratio tolerance for the ground-truth criterion"),
    ("tau-res", float, 1e-8, "relative residual tolerance"),
    ("max-iters", int, None, "iteration cap (default 10 N)"),
    ("dense-limit", int, DEFAULT_DENSE_LIMIT, "largest N for dense assembly"),
    ("trace", str, None, "write the per-iteration trace CSV here"),
]

ESTIMATE = [
    ("f", str, None, "integrand: x<i>, sqnorm, const:<a> or file:<path>"),
    ("csv", str, None, "also write the CSV row to this file"),
]

SWEEP = [
    ("profile", str, "desk", "desk or paper"),
    ("d", int, None, "parameter dimension"),
    ("n-data", int, None, "observations per replicate dataset"),
    ("step", float, None, "random-walk step size"),
    ("iters", int, None, "MCMC iterations per replicate (default: grow until N distinct states)"),
    ("burn-in", int, None, "burn-in iterations"),
    ("N", int, None, "collocation nodes per replicate"),
    ("lengthscales", _floats, None, "comma-separated length scales"),
    ("families", _words, None, "comma-separated families"),
    ("etas", _floats, None, "comma-separated nuggets"),
    ("blocks", _ints, None, "comma-separated Jacobi block sizes"),
    ("ranks", _ints, None, "comma-separated spectral ranks"),
    ("n", int, None, "inducing points"),
    ("replicates", int, None, "replicate count"),
    ("tau", float, None, "ratio tolerance"),
    ("max-iters", int, None, "iteration cap (default 10 N)"),
    ("spectral-inner", str, None, "inner product for spectral PCG"),
    ("output", str, None, "cell CSV"),
    ("records", str, None, "per-replicate record CSV"),
]

LARGE_N = [
    ("profile", str, "desk", "desk or paper"),
    ("d", int, None, "parameter dimension"),
    ("n-data", int, None, "observations"),
    ("step", float, None, "random-walk step size"),
    ("iters", int, None, "MCMC iterations"),
    ("burn-in", int, None, "burn-in iterations"),
    ("l", float, None, "kernel length scale"),
    ("b", int, None, "Jacobi block size"),
    ("criterion", str, None, "residual or fixed"),
    ("tau-res", float, None, "relative residual tolerance"),
    ("max-iters", int, None, "iteration cap (default 10 N)"),
    ("output", str, None, "paired trace CSV"),
]

COMMANDS = {
    "sample": ("generate a logistic-regression test bed, run random-walk Metropolis and store distinct states", SAMPLE, False),
    "solve": ("solve K_p w = 1 by (preconditioned) CG", KERNEL + PRECOND + SOLVER, True),
    "estimate": ("estimate E_p[f] with its worst-case error", KERNEL + PRECOND + SOLVER + ESTIMATE, True),
    "sweep": ("gain sweep over length scales and preconditioner parameters", SWEEP, False),
    "large-n": ("CG vs Jacobi PCG worst-case-error traces on a long chain", LARGE_N, False),
}


def _dest(flag):
    return flag.replace("-", "_")


def _add_options(parser, options):
    for flag, typ, default, help_text in options:
        shown = "" if default is None else f" (default: {default})"
        if typ is bool:
            parser.add_argument(f"--{flag}", dest=_dest(flag), action="store_const", const=True, default=None, help=help_text + shown)
        elif flag == "output":
            parser.add_argument("-o", "--output", dest="output", type=typ, default=None, help=help_text)
        else:
            parser.add_argument(f"--{flag}", dest=_dest(flag), type=typ, default=None, help=help_text + shown)


def build_parser():
    parser = argparse.ArgumentParser(prog="steinpcg", description="Preconditioned CG for Stein equations built from MCMC output.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name, (help_text, options, takes_samples) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        if takes_samples:
            p.add_argument("samples", help="sample file (.npz or CSV with x_i/g_i columns)")
        _add_options(p, COMMON + options)
    return parser


def _read_config(path, options):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    flat = {}
    for key, value in raw.items():
        if key in CONFIG_BLOCKS and isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    types = {_dest(flag): typ for flag, typ, _, _ in options}
    out = {}
    for key, value in flat.items():
        dest = _dest(key)
        if dest not in types or dest == "config":
            raise UsageError(f"unknown config key {key!r}")
        typ = types[dest]
        try:
            if typ is bool:
                if not isinstance(value, bool):
                    raise ValueError("expected true or false")
                out[dest] = value
            elif isinstance(value, list):
                out[dest] = typ(",".join(str(v) for v in value))
            else:
                out[dest] = None if value is None else typ(value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for config key {key!r}: {exc}") from exc
    return out


def resolve(args):
    """Documented defaults, then the config file, then explicit flags."""
    options = COMMON + COMMANDS[args.command][1]
    values = {_dest(flag): default for flag, _, default, _ in options}
    if args.config:
        values.update(_read_config(args.config, options))
    for key, value in vars(args).items():
        if value is not None and key != "command":
            values[key] = value
    if values["threads"] is None:
        values["threads"] = os.cpu_count() or 1
    if values["threads"] < 1:
        raise UsageError("--threads must be positive")
    return argparse.Namespace(command=args.command, **values)


def _fmt(x):
    return "" if x is None else repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def cmd_sample(cfg):
    if not cfg.output:
        raise UsageError("an output path is required (-o/--output)")
    target = generate_logistic_data(cfg.d, cfg.n_data, cfg.seed, intercept=cfg.intercept)
    step = bench.step_for(cfg.d, cfg.step)
    # data and chain draw from separate streams of the one seed
    chain = rwmh_sample(target, step, cfg.iters, seed=np.random.SeedSequence(cfg.seed).spawn(1)[0], burn_in=cfg.burn_in)
    samples = distinct_prefix(chain, cfg.N, target)
    save_samples(samples, cfg.output)
    print(
        f"wrote {cfg.output}: N={samples.N} distinct states, d={samples.d}, "
        f"iterations={cfg.iters}, step={step!r}, acceptance rate={chain.acceptance_rate:.4f}"
    )
    return 0


def _setup_solve(cfg):
    if cfg.kernel not in ("imq",):
        raise UsageError(f"unknown kernel profile {cfg.kernel!r}")
    if cfg.precond not in FAMILIES:
        raise UsageError(f"unknown preconditioner {cfg.precond!r}; choose from {', '.join(FAMILIES)}")
    if cfg.inner not in (None, "euclidean", "rkhs"):
        raise UsageError("--inner must be euclidean or rkhs")
    samples = load_samples(cfg.samples)
    kernel = SteinKernel(cfg.l, cfg.kernel)
    reference = None
    if cfg.criterion == "ground-truth":
        if samples.N > cfg.dense_limit:
            raise UsageError(f"the ground-truth criterion needs N <= dense limit ({samples.N} > {cfg.dense_limit})")
        reference = dense_solve(samples, kernel, limit=cfg.dense_limit).sigma
    if cfg.criterion == "fixed" and cfg.max_iters is None:
        raise UsageError("the fixed criterion needs --max-iters")
    try:
        config = SolveConfig(
            criterion=cfg.criterion,
            tau=cfg.tau,
            reference_sigma=reference,
            tau_res=cfg.tau_res,
            max_iters=cfg.max_iters,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    budget = int(cfg.budget_mb * 2**20)
    action = KernelAction(samples, kernel, bandwidth=cfg.bandwidth, budget_bytes=budget, threads=cfg.threads, cache=cfg.cache)
    params = {"none": {}, "jacobi": {"b": cfg.b}, "spectral": {"n": cfg.n, "r": cfg.r}}.get(cfg.precond, {"n": cfg.n, "eta": cfg.eta})
    seed = cfg.seed if cfg.precond_seed is None else cfg.precond_seed
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        precond = build_preconditioner(cfg.precond, action, seed=seed, **params)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    inner = cfg.inner or ("rkhs" if cfg.precond == "spectral" else "euclidean")
    trace = pcg(action, precond, config=config, inner=inner)
    if cfg.trace:
        trace.to_csv(cfg.trace)
    return samples, action, precond, trace, inner


def cmd_solve(cfg):
    samples, action, precond, trace, inner = _setup_solve(cfg)
    print(
        f"N={samples.N} l={cfg.l!r} precond={precond.family} inner={inner} "
        f"m_pcg={trace.iterations} sigma={_fmt(trace.final_sigma)} reason={trace.reason}"
    )
    return 0 if trace.reason in ("converged", "fixed") else 1


ESTIMATE_COLUMNS = ["integrand", "estimate", "sigma", "iterations", "reason", "N", "l", "precond"]


def cmd_estimate(cfg):
    if not cfg.f:
        raise UsageError("an integrand is required (--f)")
    try:
        integrand = parse_integrand(cfg.f)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    samples, action, precond, trace, _ = _setup_solve(cfg)
    est = estimate_with_bound(integrand.values(samples.X), action, trace)
    row = [integrand.name, _fmt(est.value), _fmt(est.sigma), str(est.iterations), trace.reason, str(samples.N), _fmt(cfg.l), precond.family]
    print(f"E[{integrand.name}] ~= {est.value!r}  (worst-case error sigma = {est.sigma!r}, {est.iterations} iterations, {trace.reason})")
    print(",".join(ESTIMATE_COLUMNS))
    print(",".join(row))
    if cfg.csv:
        with open(cfg.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(ESTIMATE_COLUMNS) + "\n" + ",".join(row) + "\n")
    return 0


def _profile_overrides(cfg, mapping):
    return {field: getattr(cfg, dest) for dest, field in mapping.items() if getattr(cfg, dest) is not None}


def cmd_sweep(cfg):
    try:
        base = bench.sweep_profile(cfg.profile)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    mapping = {
        "d": "d", "n_data": "n_data", "step": "step", "iters": "mcmc_iters", "burn_in": "burn_in", "N": "N",
        "lengthscales": "lengthscales", "families": "families", "etas": "etas", "blocks": "blocks",
        "ranks": "ranks", "n": "n_inducing", "replicates": "replicates", "tau": "tau", "max_iters": "max_iters",
        "spectral_inner": "spectral_inner", "output": "output", "records": "records_output",
    }
    try:
        config = bench.with_overrides(base, master_seed=cfg.seed, threads=cfg.threads, **_profile_overrides(cfg, mapping))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not config.output:
        config.output = "sweep.csv"
    result = bench.run_sweep(config)
    censored = sum(c["censored"] for c in result.cells)
    print(f"wrote {config.output}: {len(result.cells)} cells x {config.replicates} replicates, {censored} censored cell-replicates")
    return 0


def cmd_large_n(cfg):
    try:
        base = bench.large_n_profile(cfg.profile)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    mapping = {
        "d": "d", "n_data": "n_data", "step": "step", "iters": "mcmc_iters", "burn_in": "burn_in",
        "l": "lengthscale", "b": "block", "criterion": "criterion", "tau_res": "tau_res",
        "max_iters": "max_iters", "output": "output",
    }
    config = bench.with_overrides(base, seed=cfg.seed, threads=cfg.threads, **_profile_overrides(cfg, mapping))
    if config.criterion not in ("residual", "fixed"):
        raise UsageError("large-n supports the residual and fixed criteria")
    if config.criterion == "fixed" and config.max_iters is None:
        raise UsageError("the fixed criterion needs --max-iters")
    if not config.output:
        config.output = "large_n.csv"
    res = bench.large_n_study(config)
    print(
        f"wrote {config.output}: N={res.N} acceptance rate={res.acceptance_rate:.4f} "
        f"cg: m={res.cg.iterations} sigma={_fmt(res.cg.final_sigma)} ({res.cg.reason}); "
        f"jacobi: m={res.pcg.iterations} sigma={_fmt(res.pcg.final_sigma)} ({res.pcg.reason})"
    )
    return 0


HANDLERS = {"sample": cmd_sample, "solve": cmd_solve, "estimate": cmd_estimate, "sweep": cmd_sweep, "large-n": cmd_large_n}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        # BLAS stays single-threaded so results do not depend on --threads
        with threadpool_limits(limits=1):
            return HANDLERS[cfg.command](cfg)
    except UsageError as exc:
        print(f"steinpcg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, OSError, np.linalg.LinAlgError, DenseSolveError, PreconditionerError, UndefinedEstimateError) as exc:
        print(f"steinpcg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
