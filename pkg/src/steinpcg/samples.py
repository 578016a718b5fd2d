"""MCMC collocation nodes: targets, random-walk Metropolis, deduplication and I/O."""

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

__all__ = [
    "TargetDensity",
    "LogisticRegressionTarget",
    "GaussianTarget",
    "Chain",
    "SampleSet",
    "DuplicateNodesWarning",
    "SampleFileError",
    "make_rng",
    "generate_logistic_data",
    "rwmh_sample",
    "distinct_prefix",
    "save_samples",
    "load_samples",
]


class DuplicateNodesWarning(UserWarning):
    """A sample set contains repeated states, so the Stein kernel matrix is singular."""


class SampleFileError(ValueError):
    pass


def make_rng(seed):
    """Counter-based generator (Philox) from an integer seed or a SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


class TargetDensity:
    """Unnormalised log-density with its gradient (the score).

    Subclasses implement ``log_density`` and ``score`` for a single point and may
    override ``score_batch`` with a vectorised version.
    """

    dim: int

    def log_density(self, x):
        raise NotImplementedError

    def score(self, x):
        raise NotImplementedError

    def score_batch(self, X):
        X = np.atleast_2d(X)
        return np.stack([self.score(x) for x in X])


class GaussianTarget(TargetDensity):
    """N(mean, cov) target; handy for sanity checks with known expectations."""

    def __init__(self, mean, cov=None):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.dim = self.mean.size
        cov = np.eye(self.dim) if cov is None else np.asarray(cov, dtype=float)
        self.precision = np.linalg.inv(cov)

    def log_density(self, x):
        r = np.asarray(x, dtype=float) - self.mean
        return -0.5 * float(r @ self.precision @ r)

    def score(self, x):
        return -self.precision @ (np.asarray(x, dtype=float) - self.mean)

    def score_batch(self, X):
        return -(np.atleast_2d(X) - self.mean) @ self.precision


class LogisticRegressionTarget(TargetDensity):
    """Posterior of Bayesian logistic regression with a standard Gaussian prior.

    log p(x) = -|x|^2/2 + sum_i [y_i <z_i, x> - log(1 + exp(<z_i, x>))] + const
    """

    def __init__(self, Z, y, true_param=None):
        self.Z = np.asarray(Z, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.Z.ndim != 2 or self.y.shape != (self.Z.shape[0],):
            raise ValueError("Z must be (n_data, d) and y must have length n_data")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("responses must be 0 or 1")
        self.dim = self.Z.shape[1]
        self.true_param = None if true_param is None else np.asarray(true_param, dtype=float)

    @property
    def n_data(self):
        return self.Z.shape[0]

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        eta = self.Z @ x
        return float(-0.5 * (x @ x) + self.y @ eta - np.logaddexp(0.0, eta).sum())

    def score(self, x):
        x = np.asarray(x, dtype=float)
        return -x + self.Z.T @ (self.y - expit(self.Z @ x))

    def score_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return -X + (self.y[None, :] - expit(X @ self.Z.T)) @ self.Z


def generate_logistic_data(d, n_data, seed, intercept=False):
    """Synthetic logistic-regression test bed.

    Covariates are iid N(0, I), the data-generating parameter is
    [1, 1/2, ..., 1/d] and responses are drawn from the logistic model. With
    ``intercept=True`` the first covariate column is fixed to one.
    """
    if d < 1 or n_data < 1:
        raise ValueError("d and n_data must be positive")
    rng = make_rng(seed)
    x_true = 1.0 / np.arange(1, d + 1)
    Z = rng.standard_normal((n_data, d))
    if intercept:
        Z[:, 0] = 1.0
    if n_data >= d and np.linalg.matrix_rank(Z) < d:
        raise ValueError("generated covariate matrix is rank deficient")
    y = (rng.random(n_data) < expit(Z @ x_true)).astype(float)
    return LogisticRegressionTarget(Z, y, true_param=x_true)


@dataclass(frozen=True)
class Chain:
    """Raw Metropolis-Hastings output. ``states[0]`` is the initial point."""

    states: np.ndarray
    accepted: np.ndarray
    step: float
    seed: object = None

    @property
    def acceptance_rate(self):
        return float(self.accepted.mean()) if self.accepted.size else float("nan")

    @property
    def n_iters(self):
        return self.accepted.size


def rwmh_sample(target, step, n_iters, init=None, seed=0, burn_in=0):
    """Gaussian random-walk Metropolis-Hastings with proposal covariance step^2 I.

    The log-density of the current state is cached, so each iteration costs
    exactly one fresh target evaluation. The chain starts at ``init``
    (default: the origin) and the first ``burn_in`` states are dropped from the
    returned chain; the acceptance rate counts all iterations.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if n_iters < 0:
        raise ValueError("n_iters must be nonnegative")
    rng = make_rng(seed)
    x = np.zeros(target.dim) if init is None else np.array(init, dtype=float)
    logp = target.log_density(x)
    if not np.isfinite(logp):
        raise ValueError("log-density is not finite at the initial state")

    states = np.empty((n_iters + 1, target.dim))
    accepted = np.zeros(n_iters, dtype=bool)
    states[0] = x
    noise = rng.standard_normal((n_iters, target.dim)) * step
    log_u = np.log(rng.random(n_iters))
    for i in range(n_iters):
        prop = x + noise[i]
        logp_prop = target.log_density(prop)
        # symmetric proposal: log acceptance = min(0, log p(prop) - log p(x))
        if log_u[i] < min(0.0, logp_prop - logp):
            x, logp = prop, logp_prop
            accepted[i] = True
        states[i + 1] = x
    return Chain(states=states[burn_in:], accepted=accepted, step=float(step), seed=seed)


def _row_keys(X):
    # +0.0 maps -0.0 onto 0.0 so the byte key agrees with float equality
    X = np.ascontiguousarray(X, dtype=float) + 0.0
    return [row.tobytes() for row in X]


def _first_occurrences(X, limit=None):
    seen = set()
    keep = []
    for i, key in enumerate(_row_keys(X)):
        if key not in seen:
            seen.add(key)
            keep.append(i)
            if limit is not None and len(keep) == limit:
                break
    return np.asarray(keep, dtype=int)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Collocation nodes ``X`` (N x d) with cached scores ``G`` (N x d).

    The arrays are made read-only. Repeated rows trigger a
    :class:`DuplicateNodesWarning` and ``is_distinct`` is False.
    """

    X: np.ndarray
    G: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        G = np.array(self.G, dtype=float, ndmin=2)
        if X.shape != G.shape:
            raise ValueError(f"states {X.shape} and gradients {G.shape} differ in shape")
        X.flags.writeable = False
        G.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "G", G)
        distinct = len(_first_occurrences(X)) == X.shape[0]
        object.__setattr__(self, "is_distinct", distinct)
        if not distinct:
            warnings.warn("sample set contains duplicate states", DuplicateNodesWarning, stacklevel=3)

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def __len__(self):
        return self.N

    def subset(self, idx):
        return SampleSet(self.X[idx], self.G[idx], dict(self.meta))

    def check_scores(self, target, rtol=1e-12):
        """Return True when the cached gradients agree with ``target.score``."""
        G = target.score_batch(self.X)
        scale = np.maximum(np.abs(G), 1.0)
        return bool(np.all(np.abs(G - self.G) <= rtol * scale))


def distinct_prefix(chain, N, target):
    """The first ``N`` pairwise-distinct states of ``chain``, with scores.

    Duplicates are detected by exact floating-point equality, which is how a
    rejected Metropolis proposal repeats a state. ``N="all"`` keeps every
    distinct state.
    """
    states = chain.states if isinstance(chain, Chain) else np.asarray(chain, dtype=float)
    if states.shape[0] == 0:
        raise ValueError("empty chain")
    limit = None if N == "all" else int(N)
    if limit is not None and limit < 1:
        raise ValueError("N must be positive")
    keep = _first_occurrences(states, limit)
    if limit is not None and keep.size < limit:
        raise ValueError(f"chain has only {keep.size} distinct states, {limit} requested")
    X = states[keep]
    meta = {"chain_index": keep.tolist()} if keep.size <= 100 else {}
    if isinstance(chain, Chain):
        meta.update(
            step=chain.step,
            mcmc_iters=chain.n_iters,
            acceptance_rate=chain.acceptance_rate,
            seed=chain.seed if isinstance(chain.seed, (int, type(None))) else str(chain.seed),
        )
    return SampleSet(X, target.score_batch(X), meta)


def save_samples(samples, path):
    """Write ``samples`` to an uncompressed ``.npz`` container.

    Keys: ``shape`` (N, d), ``X``, ``G`` and ``meta`` (JSON text). The file is
    written to ``path`` verbatim; no extension is appended.
    """
    with open(path, "wb") as fh:
        np.savez(
            fh,
            shape=np.array(samples.X.shape, dtype=np.int64),
            X=np.ascontiguousarray(samples.X),
            G=np.ascontiguousarray(samples.G),
            meta=np.array(json.dumps(samples.meta, sort_keys=True)),
        )


def load_samples(path, target=None, validate=False):
    """Read a sample file written by :func:`save_samples` or a CSV.

    CSV files need a header with columns ``x_1..x_d, g_1..g_d``. Gradients are
    trusted as given unless ``validate`` is set, in which case ``target`` is
    used to recompute and compare them.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        X, G = _load_csv(path)
        meta = {"source": path.name}
    else:
        try:
            with np.load(path, allow_pickle=False) as data:
                shape = tuple(int(s) for s in data["shape"])
                X, G = data["X"], data["G"]
                meta = json.loads(str(data["meta"]))
        except (OSError, KeyError, ValueError) as exc:
            raise SampleFileError(f"cannot read sample file {path}: {exc}") from exc
        if X.shape != shape or G.shape != shape:
            raise SampleFileError(f"shape header {shape} does not match X {X.shape} / G {G.shape}")
    samples = SampleSet(X, G, meta)
    if validate:
        if target is None:
            raise ValueError("validation requires a target")
        if not samples.check_scores(target, rtol=1e-8):
            raise SampleFileError("stored gradients do not match the target score")
    return samples


def _load_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SampleFileError("empty CSV file")
    header = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    gcols = [i for i, h in enumerate(header) if h.startswith("g_")]
    if not xcols or len(xcols) != len(gcols):
        raise SampleFileError("CSV needs matching x_1..x_d and g_1..g_d columns")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise SampleFileError(f"malformed CSV value: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise SampleFileError("ragged CSV rows")
    expected = [str(j) for j in range(1, len(xcols) + 1)]
    if sorted(header[i][2:] for i in xcols) != sorted(expected) or sorted(header[i][2:] for i in gcols) != sorted(expected):
        raise SampleFileError("CSV columns must be x_1..x_d and g_1..g_d")
    xorder = sorted(xcols, key=lambda i: int(header[i][2:]))
    gorder = sorted(gcols, key=lambda i: int(header[i][2:]))
    return data[:, xorder], data[:, gorder]

