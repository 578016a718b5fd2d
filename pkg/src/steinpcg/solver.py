"""Conjugate gradient and preconditioned CG for K_p w = 1 with worst-case-error tracking."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .kernels import DEFAULT_DENSE_LIMIT, assemble_dense

__all__ = [
    "SolveConfig",
    "SolveTrace",
    "DenseSolution",
    "cg",
    "pcg",
    "worst_case_error",
    "dense_solve",
    "DenseSolveError",
]

CRITERIA = ("ground-truth", "residual", "fixed")


class DenseSolveError(linalg.LinAlgError):
    pass


@dataclass
class SolveConfig:
    """Termination rule for (P)CG.

    ``criterion``:
      * ``"ground-truth"``: stop at the first m with sigma(w_m) < tau * reference_sigma;
      * ``"residual"``: stop once |r_m| / |r_0| <= tau_res;
      * ``"fixed"``: run exactly ``max_iters`` iterations.

    ``max_iters=None`` means 10 N. sigma(w_m) is tracked with the O(N) identity
    w^T K w = w^T (1 - r) and recomputed exactly every ``sigma_refresh``
    iterations; a ground-truth stop is always confirmed with an exact value.
    """

    criterion: str = "residual"
    tau: float = 1.01
    reference_sigma: float = None
    tau_res: float = 1e-8
    max_iters: int = None
    record_trace: bool = True
    sigma_refresh: int = 50

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if self.criterion == "ground-truth":
            if not self.tau > 1:
                raise ValueError("tau must exceed 1")
            if self.reference_sigma is None or not self.reference_sigma > 0:
                raise ValueError("the ground-truth criterion needs a positive reference_sigma")
        if self.criterion == "residual" and not 0 < self.tau_res < 1:
            raise ValueError("tau_res must lie in (0, 1)")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.criterion == "fixed" and self.max_iters is None:
            raise ValueError("the fixed criterion needs max_iters")
        if self.sigma_refresh < 1:
            raise ValueError("sigma_refresh must be positive")


@dataclass
class SolveTrace:
    """Outcome of a (P)CG run.

    Per-iteration arrays are indexed by m = 0..iterations (``alpha`` and
    ``beta`` by the step that leaves iterate m, so they are one shorter).
    ``sigma`` holds NaN where 1^T w_m <= 0 and sigma is undefined.
    """

    w: np.ndarray
    iterations: int
    reason: str
    res_norm: np.ndarray = field(default=None, repr=False)
    sigma: np.ndarray = field(default=None, repr=False)
    alpha: np.ndarray = field(default=None, repr=False)
    beta: np.ndarray = field(default=None, repr=False)

    @property
    def converged(self):
        return self.reason == "converged"

    @property
    def final_sigma(self):
        if self.sigma is None or self.sigma.size == 0:
            return math.nan
        return float(self.sigma[-1])

    def to_csv(self, path):
        """Write columns iter,res_norm,sigma,alpha,beta (blank alpha/beta on the last row)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "res_norm", "sigma", "alpha", "beta"])
            for m in range(self.iterations + 1):
                step = m < self.iterations
                writer.writerow(
                    [
                        m,
                        repr(float(self.res_norm[m])),
                        repr(float(self.sigma[m])),
                        repr(float(self.alpha[m])) if step else "",
                        repr(float(self.beta[m])) if step else "",
                    ]
                )


def _sigma(wKw, sum_w):
    if not sum_w > 0 or not wKw >= 0:
        return math.nan
    return math.sqrt(wKw) / sum_w


def worst_case_error(w, action):
    """sigma(w) = sqrt(w^T K_p w) / (1^T w); None when 1^T w <= 0."""
    w = np.asarray(w, dtype=float)
    s = _sigma(float(w @ action(w)), float(w.sum()))
    return None if math.isnan(s) else s


def pcg(action, inverse_action, rhs=None, config=None, w0=None, inner="euclidean"):
    """Preconditioned conjugate gradient.

    Uses exactly one call to ``action`` and one to ``inverse_action`` per
    iteration (plus one each for the initial residual), apart from the
    periodic exact sigma refresh. ``rhs`` defaults to the all-ones vector.

    ``inner="rkhs"`` runs the same recursion in the inner product
    <a, b> = a^T K b, i.e. CG in the RKHS spanned by the kernel sections. This
    is the setting for preconditioners that are self-adjoint with respect to K
    but not symmetric (the spectral family). K s is carried by the recurrence
    K s_{m+1} = K z_{m+1} + beta K s_m, so the cost stays one action per
    iteration plus one at start-up.
    """
    config = SolveConfig() if config is None else config
    if inner not in ("euclidean", "rkhs"):
        raise ValueError("inner must be 'euclidean' or 'rkhs'")
    rkhs = inner == "rkhs"
    N = action.N
    b = np.ones(N) if rhs is None else np.asarray(rhs, dtype=float)
    if b.shape != (N,):
        raise ValueError(f"rhs must have length {N}")
    max_iters = 10 * N if config.max_iters is None else config.max_iters
    ones_rhs = rhs is None or np.all(b == 1.0)

    w = np.zeros(N) if w0 is None else np.array(w0, dtype=float)
    Kw = action(w) if w0 is not None else np.zeros(N)
    r = b - Kw
    z = inverse_action(r)
    s = z.copy()
    if rkhs:
        Kz = action(z)
        Ks = Kz.copy()
        rz = float(r @ Kz)
    else:
        rz = float(r @ z)
    r0 = float(np.linalg.norm(r))

    res_hist = [r0]
    sig_hist = []
    alphas, betas = [], []

    def sigma_of(m, exact=False):
        # w^T K w = w^T (1 - r) when K w = 1 - r; exact recomputation curbs drift
        if not ones_rhs:
            return math.nan
        if exact or m % config.sigma_refresh == 0:
            return _sigma(float(w @ action(w)), float(w.sum())) if m > 0 else _sigma(float(w @ Kw), float(w.sum()))
        return _sigma(float(w @ (1.0 - r)), float(w.sum()))

    def done(m):
        if config.criterion == "fixed":
            return m >= max_iters
        if config.criterion == "residual":
            return r0 == 0 or res_hist[-1] / r0 <= config.tau_res
        return sig_hist[-1] < config.tau * config.reference_sigma

    def confirm(m):
        # replace a recurrence-based sigma by an exact value before stopping on it
        if config.criterion == "ground-truth" and m % config.sigma_refresh != 0:
            sig_hist[-1] = sigma_of(m, exact=True)
            return sig_hist[-1] < config.tau * config.reference_sigma
        return True

    sig_hist.append(sigma_of(0, exact=True) if ones_rhs else math.nan)
    m = 0
    reason = "max_iters"
    while True:
        if done(m) and confirm(m):
            reason = "converged" if config.criterion != "fixed" else "fixed"
            break
        if m >= max_iters:
            break
        if not np.all(np.isfinite(z)):
            reason = "preconditioner failure"
            break
        if not rkhs:
            Ks = action(s)
        sKs = float(Ks @ Ks) if rkhs else float(s @ Ks)
        if not sKs > 0 or not math.isfinite(sKs):
            reason = "breakdown"
            break
        alpha = rz / sKs
        w += alpha * s
        r -= alpha * Ks
        z = inverse_action(r)
        if not np.all(np.isfinite(z)):
            m += 1
            res_hist.append(float(np.linalg.norm(r)))
            sig_hist.append(sigma_of(m))
            alphas.append(alpha)
            betas.append(math.nan)
            reason = "preconditioner failure"
            break
        if rkhs:
            Kz = action(z)
            rz_new = float(r @ Kz)
        else:
            rz_new = float(r @ z)
        beta = rz_new / rz if rz != 0 else 0.0
        s = z + beta * s
        if rkhs:
            Ks = Kz + beta * Ks
        rz = rz_new
        m += 1
        alphas.append(alpha)
        betas.append(beta)
        res_hist.append(float(np.linalg.norm(r)))
        sig_hist.append(sigma_of(m))
        if rz == 0 and res_hist[-1] == 0:
            reason = "converged"
            break

    trace = SolveTrace(w=w, iterations=m, reason=reason)
    if config.record_trace:
        trace.res_norm = np.asarray(res_hist)
        trace.sigma = np.asarray(sig_hist)
        trace.alpha = np.asarray(alphas)
        trace.beta = np.asarray(betas)
    else:
        trace.sigma = np.asarray(sig_hist[-1:])
        trace.res_norm = np.asarray(res_hist[-1:])
    return trace


def _identity(v):
    return np.array(v, dtype=float)


def cg(action, rhs=None, config=None, w0=None):
    """Plain CG; identical to :func:`pcg` with the identity preconditioner."""
    return pcg(action, _identity, rhs, config, w0)


@dataclass
class DenseSolution:
    """Direct solution of K_p w = 1.

    ``sigma`` is sqrt(w^T K w) / (1^T w) evaluated on the computed ``w``; in
    exact arithmetic it equals ``sigma_identity`` = (1^T w)^{-1/2}, and the
    two agree to rounding unless K_p is close to singular.
    """

    w: np.ndarray
    sigma: float
    sigma_identity: float
    K: np.ndarray = field(repr=False)


def dense_solve(samples, kernel, limit=DEFAULT_DENSE_LIMIT, K=None):
    """Exact w = K_p^{-1} 1 by Cholesky of the assembled matrix (or of ``K`` if given)."""
    if K is None:
        K = assemble_dense(samples, kernel, limit=limit)
    try:
        w = linalg.cho_solve(linalg.cho_factor(K), np.ones(K.shape[0]))
    except linalg.LinAlgError as exc:
        raise DenseSolveError(f"K_p is not numerically positive definite: {exc}") from exc
    total = float(w.sum())
    if not total > 0:
        raise DenseSolveError("1^T K_p^{-1} 1 is not positive; K_p is numerically indefinite")
    wKw = float(w @ K @ w)
    return DenseSolution(w=w, sigma=math.sqrt(max(wKw, 0.0)) / total, sigma_identity=total**-0.5, K=K)
