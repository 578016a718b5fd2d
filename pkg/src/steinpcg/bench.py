"""Gain sweeps over (lengthscale, preconditioner parameter) grids and the large-N Jacobi study.

Replicate seeds come from ``numpy.random.SeedSequence(master_seed,
spawn_key=(replicate,))``, so adding replicates never changes earlier ones.
Each replicate seed is split into three streams: data generation, MCMC and
preconditioner sketches/inducing points. Floats in CSV output use Python's
shortest round-trip ``repr``.
"""

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .kernels import DenseAction, KernelAction, SteinKernel, assemble_dense
from .precond import PreconditionerError, build_preconditioner
from .samples import distinct_prefix, generate_logistic_data, rwmh_sample
from .solver import DenseSolveError, SolveConfig, cg, dense_solve, pcg

__all__ = [
    "DEFAULT_STEP",
    "GainRecord",
    "SweepConfig",
    "SweepResult",
    "LargeNConfig",
    "LargeNResult",
    "gain",
    "replicate_seeds",
    "family_grid",
    "run_cell",
    "run_replicate",
    "run_sweep",
    "summarize",
    "large_n_study",
    "sweep_profile",
    "large_n_profile",
]

# random-walk step sizes tuned to acceptance ~0.251 (d=4) and ~0.059 (d=10)
DEFAULT_STEP = {4: 0.10, 10: 0.10}

LENGTHSCALES = tuple(float(v) for v in np.logspace(-2, 0, 5))
ETAS = (1e-4, 1e-2, 1.0, 1e2, 1e4)
BLOCKS = (1, 2, 3, 4, 5)
RANKS = (10, 20, 30, 40, 50)
ALL_FAMILIES = ("none", "jacobi", "nystrom", "nystrom-diag", "fitc", "rand-nystrom", "rand-svd", "spectral")
SWEEP_COLUMNS = ["family", "l", "param_name", "param_value", "mean_gain", "stderr", "replicates", "censored"]
RECORD_COLUMNS = ["family", "l", "param_name", "param_value", "replicate", "m_cg", "m_pcg", "gain", "status"]


def gain(m_cg, m_pcg):
    """log((1 + m_cg) / (1 + m_pcg)), natural logarithm."""
    if m_cg < 0 or m_pcg < 0:
        raise ValueError("iteration counts must be nonnegative")
    return math.log((1 + m_cg) / (1 + m_pcg))


def step_for(d, step=None):
    if step is not None:
        return float(step)
    return DEFAULT_STEP.get(d, 0.10)


def replicate_seeds(master_seed, replicate):
    """(data, mcmc, preconditioner) seed sequences for one replicate."""
    root = np.random.SeedSequence(master_seed, spawn_key=(int(replicate),))
    return tuple(root.spawn(3))


@dataclass(frozen=True)
class GainRecord:
    family: str
    lengthscale: float
    param_name: str
    param_value: object
    replicate: int
    m_cg: int = None
    m_pcg: int = None
    gain: float = math.nan
    status: str = "ok"

    @property
    def censored(self):
        return self.status != "ok"


@dataclass
class SweepConfig:
    d: int = 4
    n_data: int = 1000
    step: float = None
    burn_in: int = 0
    mcmc_iters: int = None
    N: int = 300
    lengthscales: tuple = LENGTHSCALES
    families: tuple = ALL_FAMILIES
    etas: tuple = ETAS
    blocks: tuple = BLOCKS
    ranks: tuple = RANKS
    n_inducing: int = 50
    replicates: int = 10
    master_seed: int = 0
    tau: float = 1.01
    max_iters: int = None
    spectral_inner: str = "rkhs"
    threads: int = 1
    output: str = None
    records_output: str = None

    def __post_init__(self):
        unknown = set(self.families) - set(ALL_FAMILIES)
        if unknown:
            raise ValueError(f"unknown families {sorted(unknown)}")
        self.lengthscales = tuple(float(v) for v in self.lengthscales)
        self.families = tuple(self.families)
        self.etas = tuple(float(v) for v in self.etas)
        self.blocks = tuple(int(v) for v in self.blocks)
        self.ranks = tuple(int(v) for v in self.ranks)
        if self.replicates < 1 or self.N < 1:
            raise ValueError("replicates and N must be positive")


def sweep_profile(name):
    """``desk``: N=300, 10 replicates, lengthscales in [1e-2, 1].

    ``paper``: N=1000, 50 replicates, lengthscales in [1e-2, 1e2] (hours of CPU).
    """
    if name == "desk":
        return SweepConfig()
    if name == "paper":
        return SweepConfig(N=1000, replicates=50, lengthscales=tuple(float(v) for v in np.logspace(-2, 2, 5)))
    raise ValueError(f"unknown profile {name!r}")


def family_grid(config, family):
    """[(param_name, param_value)] for one family."""
    if family == "none":
        return [("none", "")]
    if family == "jacobi":
        return [("b", b) for b in config.blocks]
    if family == "spectral":
        return [("r", r) for r in config.ranks]
    return [("eta", eta) for eta in config.etas]


def _precond_params(config, family, name, value):
    if family == "none":
        return {}
    if family == "jacobi":
        return {"b": value}
    if family == "spectral":
        return {"n": config.n_inducing, "r": value}
    return {"n": config.n_inducing, "eta": value}


def _collocation_nodes(config, data_seed, mcmc_seed):
    target = generate_logistic_data(config.d, config.n_data, data_seed)
    step = step_for(config.d, config.step)
    if config.mcmc_iters is not None:
        chain = rwmh_sample(target, step, config.mcmc_iters, seed=mcmc_seed, burn_in=config.burn_in)
        return distinct_prefix(chain, config.N, target)
    # no iteration count given: double the chain until N distinct states exist
    n_iters = max(4 * config.N, 1000)
    while True:
        chain = rwmh_sample(target, step, n_iters, seed=mcmc_seed, burn_in=config.burn_in)
        try:
            return distinct_prefix(chain, config.N, target)
        except ValueError:
            if n_iters > 1000 * config.N:
                raise
            n_iters *= 2


class _System:
    """Dense ground truth and plain-CG count for one (replicate, lengthscale)."""

    def __init__(self, config, samples, lengthscale):
        self.max_iters = 10 * samples.N if config.max_iters is None else config.max_iters
        self.K = assemble_dense(samples, SteinKernel(lengthscale))
        self.action = DenseAction(self.K)
        self.error = None
        try:
            sol = dense_solve(samples, None, K=self.K)
        except DenseSolveError as exc:
            self.error = str(exc)
            return
        self.config = SolveConfig(
            criterion="ground-truth",
            tau=config.tau,
            reference_sigma=sol.sigma,
            max_iters=self.max_iters,
            record_trace=False,
            sigma_refresh=1,
        )
        self.cg = cg(self.action, config=self.config)

    def run(self, precond, inner):
        return pcg(self.action, precond, config=self.config, inner=inner)


def _cell(config, system, family, name, value, rep, ls, precond_seed):
    if system.error is not None:
        return GainRecord(family, ls, name, value, rep, status="dense-failure")
    m_cg = system.cg.iterations
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            P = build_preconditioner(family, system.action, seed=precond_seed, **_precond_params(config, family, name, value))
    except (PreconditionerError, np.linalg.LinAlgError):
        return GainRecord(family, ls, name, value, rep, m_cg=m_cg, status="precond-failure")
    inner = config.spectral_inner if family == "spectral" else "euclidean"
    tr = system.run(P, inner)
    status = "ok"
    if not system.cg.converged:
        status = "censored-cg"
    if not tr.converged:
        status = "censored" if status != "ok" else "censored-pcg"
    return GainRecord(family, ls, name, value, rep, m_cg=m_cg, m_pcg=tr.iterations, gain=gain(m_cg, tr.iterations), status=status)


def run_replicate(config, replicate):
    """All gain records of one replicate: every lengthscale, family and parameter."""
    data_seed, mcmc_seed, precond_seed = replicate_seeds(config.master_seed, replicate)
    records = []
    try:
        samples = _collocation_nodes(config, data_seed, mcmc_seed)
    except ValueError:
        for ls in config.lengthscales:
            for family in config.families:
                for name, value in family_grid(config, family):
                    records.append(GainRecord(family, ls, name, value, replicate, status="sample-failure"))
        return records
    for ls in config.lengthscales:
        system = _System(config, samples, ls)
        for family in config.families:
            for name, value in family_grid(config, family):
                records.append(_cell(config, system, family, name, value, replicate, ls, precond_seed))
    return records


def run_cell(config, replicate, lengthscale, family, param=None):
    """Gain record for a single grid cell of a single replicate.

    ``param`` is the block size, nugget or rank as appropriate for ``family``.
    """
    data_seed, mcmc_seed, precond_seed = replicate_seeds(config.master_seed, replicate)
    samples = _collocation_nodes(config, data_seed, mcmc_seed)
    system = _System(config, samples, float(lengthscale))
    name = family_grid(config, family)[0][0]
    value = "" if family == "none" else param
    return _cell(config, system, family, name, value, replicate, float(lengthscale), precond_seed)


def _replicate_worker(args):
    config, rep = args
    with threadpool_limits(limits=1):
        return run_replicate(config, rep)


@dataclass
class SweepResult:
    config: SweepConfig
    records: list
    cells: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SWEEP_COLUMNS)
            for c in self.cells:
                writer.writerow([c["family"], _fmt(c["l"]), c["param_name"], _fmt(c["param_value"]), _fmt(c["mean_gain"]), _fmt(c["stderr"]), c["replicates"], c["censored"]])

    def records_to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RECORD_COLUMNS)
            for r in self.records:
                writer.writerow([r.family, _fmt(r.lengthscale), r.param_name, _fmt(r.param_value), r.replicate, _fmt(r.m_cg), _fmt(r.m_pcg), _fmt(r.gain), r.status])

    def cell_records(self, family, lengthscale, param_value):
        return [
            r for r in self.records
            if r.family == family and r.lengthscale == lengthscale and r.param_value == param_value
        ]


def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def summarize(records, config):
    """Mean gain and standard error per cell, in grid order.

    Censored replicates (non-convergence or setup failure) are excluded from
    the mean and counted separately. ``stderr`` is NaN with fewer than two
    uncensored replicates; ``mean_gain`` is NaN with none.
    """
    by_key = {}
    for r in records:
        by_key.setdefault((r.family, r.lengthscale, r.param_value), []).append(r)
    cells = []
    for family in config.families:
        for ls in config.lengthscales:
            for name, value in family_grid(config, family):
                group = by_key.get((family, ls, value), [])
                gains = np.array([r.gain for r in group if not r.censored])
                k = gains.size
                mean = float(gains.mean()) if k else math.nan
                stderr = float(gains.std(ddof=1) / math.sqrt(k)) if k >= 2 else math.nan
                median = float(np.median(gains)) if k else math.nan
                cells.append(
                    {
                        "family": family,
                        "l": ls,
                        "param_name": name,
                        "param_value": value,
                        "mean_gain": mean,
                        "stderr": stderr,
                        "median_gain": median,
                        "replicates": len(group),
                        "censored": len(group) - k,
                    }
                )
    return cells


def run_sweep(config, progress=None):
    """Run every (replicate, lengthscale, family, parameter) cell and aggregate.

    Replicates are independent work units; with ``config.threads > 1`` they
    run in a process pool and are merged in replicate order, so the output is
    the same for any thread count.
    """
    jobs = [(config, rep) for rep in range(config.replicates)]
    if config.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            chunks = list(pool.map(_replicate_worker, jobs))
    else:
        chunks = []
        for job in jobs:
            chunks.append(_replicate_worker(job))
            if progress is not None:
                progress(job[1])
    records = [r for chunk in chunks for r in chunk]
    result = SweepResult(config=config, records=records, cells=summarize(records, config))
    if config.output:
        result.to_csv(config.output)
    if config.records_output:
        result.records_to_csv(config.records_output)
    return result


@dataclass
class LargeNConfig:
    d: int = 4
    n_data: int = 1000
    step: float = None
    burn_in: int = 0
    mcmc_iters: int = 10_000
    lengthscale: float = 1.0
    block: int = 1
    criterion: str = "residual"
    tau_res: float = 1e-8
    max_iters: int = None
    seed: int = 0
    threads: int = 1
    output: str = None


def large_n_profile(name):
    """``desk``: 10^4 MCMC iterations. ``paper``: 5 x 10^4."""
    if name == "desk":
        return LargeNConfig()
    if name == "paper":
        return LargeNConfig(mcmc_iters=50_000)
    raise ValueError(f"unknown profile {name!r}")


@dataclass
class LargeNResult:
    config: LargeNConfig
    N: int
    acceptance_rate: float
    cg: object
    pcg: object

    def to_csv(self, path):
        """Paired traces: iter,sigma_cg,sigma_pcg,res_cg,res_pcg (blank past a trace's end)."""
        rows = max(self.cg.iterations, self.pcg.iterations) + 1

        def col(arr, m):
            return repr(float(arr[m])) if m < arr.size else ""

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iter", "sigma_cg", "sigma_pcg", "res_cg", "res_pcg"])
            for m in range(rows):
                writer.writerow([m, col(self.cg.sigma, m), col(self.pcg.sigma, m), col(self.cg.res_norm, m), col(self.pcg.res_norm, m)])


def large_n_study(config):
    """CG and block-Jacobi PCG on every distinct state of one long chain.

    No dense ground truth is formed; both solvers stop on the residual (or
    fixed-iteration) criterion and record sigma(w_m) at every iteration.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    target = generate_logistic_data(config.d, config.n_data, seeds[0])
    chain = rwmh_sample(target, step_for(config.d, config.step), config.mcmc_iters, seed=seeds[1], burn_in=config.burn_in)
    samples = distinct_prefix(chain, "all", target)
    kernel = SteinKernel(config.lengthscale)
    N = samples.N
    cache = 8 * N * N <= 2**30
    action = KernelAction(samples, kernel, threads=config.threads, cache=cache, budget_bytes=2**30 if cache else 256 * 2**20)
    solve_cfg = SolveConfig(
        criterion=config.criterion,
        tau_res=config.tau_res,
        max_iters=config.max_iters if config.max_iters is not None else 10 * N,
        sigma_refresh=50,
    )
    from .precond import BlockJacobi

    with threadpool_limits(limits=1):
        trace_cg = cg(action, config=solve_cfg)
        trace_pcg = pcg(action, BlockJacobi(action, config.block), config=solve_cfg)
    result = LargeNResult(config=config, N=N, acceptance_rate=chain.acceptance_rate, cg=trace_cg, pcg=trace_pcg)
    if config.output:
        result.to_csv(config.output)
    return result


def config_dict(config):
    return asdict(config)


def with_overrides(config, **overrides):
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
