"""Point estimates of posterior expectations from Stein-equation weights."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .solver import worst_case_error

__all__ = [
    "Integrand",
    "UndefinedEstimateError",
    "Estimate",
    "point_estimate",
    "estimate_with_bound",
    "parse_integrand",
]


class UndefinedEstimateError(ArithmeticError):
    """The weights sum to zero (or less), so the normalised estimate is undefined."""


@dataclass(frozen=True)
class Integrand:
    """A named integrand f: R^d -> R evaluated row-wise on an (N, d) array."""

    name: str
    fn: object

    def values(self, X):
        f = np.asarray(self.fn(np.atleast_2d(X)), dtype=float)
        if not np.all(np.isfinite(f)):
            raise ValueError(f"integrand {self.name!r} is not finite at every node")
        return f


def coordinate(i):
    """f(x) = x_i with a 1-based index, matching the ``x1``, ``x2`` CLI names."""
    return Integrand(f"x{i}", lambda X: X[:, i - 1])


def squared_norm():
    return Integrand("sqnorm", lambda X: np.einsum("ij,ij->i", X, X))


def constant(a):
    return Integrand(f"const:{a!r}", lambda X: np.full(X.shape[0], float(a)))


def from_file(path):
    """f-values supplied externally, one per line (or a single CSV column)."""
    vals = np.loadtxt(Path(path), delimiter=",", ndmin=1, dtype=float)

    def fn(X):
        if vals.shape[0] != X.shape[0]:
            raise ValueError(f"{path} has {vals.shape[0]} values for {X.shape[0]} nodes")
        return vals

    return Integrand(f"file:{path}", fn)


def parse_integrand(text):
    """``x<i>``, ``sqnorm``, ``const:<a>`` or ``file:<path>``."""
    if text == "sqnorm":
        return squared_norm()
    if text.startswith("const:"):
        return constant(float(text[6:]))
    if text.startswith("file:"):
        return from_file(text[5:])
    if text.startswith("x") and text[1:].isdigit() and int(text[1:]) >= 1:
        return coordinate(int(text[1:]))
    raise ValueError(f"unrecognised integrand {text!r}; use x<i>, sqnorm, const:<a> or file:<path>")


def point_estimate(f_values, w):
    """(f^T w) / (1^T w)."""
    f = np.asarray(f_values, dtype=float)
    w = np.asarray(w, dtype=float)
    if f.shape != w.shape:
        raise ValueError("f_values and w must have the same length")
    total = float(w.sum())
    if total == 0.0 or not np.isfinite(total):
        raise UndefinedEstimateError("1^T w is zero; the estimate is undefined")
    return float(f @ w) / total


@dataclass(frozen=True)
class Estimate:
    """``value`` with the worst-case error ``sigma``.

    For f = c + v with v in H(k_p), |value - E_p f| <= |v|_{H(k_p)} * sigma,
    where the norm factor is generally unknown.
    """

    value: float
    sigma: float
    iterations: int = None


def estimate_with_bound(f_values, action, solution):
    """Estimate and worst-case error for a solve result (a ``SolveTrace`` or weights)."""
    w = getattr(solution, "w", solution)
    value = point_estimate(f_values, w)
    sigma = worst_case_error(w, action)
    if sigma is None:
        raise UndefinedEstimateError("1^T w <= 0; the worst-case error is undefined")
    return Estimate(value=value, sigma=sigma, iterations=getattr(solution, "iterations", None))
