"""Preconditioners for K_p w = 1, each exposing only the inverse action v -> M^{-1} v.

Every constructor takes an *action* object (``KernelAction`` or ``DenseAction``)
and touches K_p only through ``diag()``, ``rows()``, ``entries()`` and
``matmat()``; none of them forms an N x N matrix.
"""

import math
import warnings

import numpy as np
from scipy import linalg

from .samples import make_rng

__all__ = [
    "Preconditioner",
    "IdentityPreconditioner",
    "BlockJacobi",
    "Nystrom",
    "FITC",
    "RandomizedNystrom",
    "RandomizedSVD",
    "Spectral",
    "PreconditionerError",
    "PreconditionerWarning",
    "FAMILIES",
    "build_preconditioner",
    "default_inducing",
]

PINV_RTOL = 1e-12


class PreconditionerError(ValueError):
    pass


class PreconditionerWarning(RuntimeWarning):
    pass


def default_inducing(N):
    return math.ceil(math.sqrt(N))


def _psd_pinv_sqrt(C, rtol=PINV_RTOL):
    """Return F with F F^T = pinv(C) for symmetric PSD ``C``.

    Eigenvalues below ``rtol * lambda_max`` are discarded.
    """
    C = 0.5 * (C + C.T)
    lam, Q = linalg.eigh(C)
    top = lam[-1] if lam.size else 0.0
    keep = lam > rtol * top if top > 0 else np.zeros(lam.shape, dtype=bool)
    return Q[:, keep] / np.sqrt(lam[keep])


def _check_size(n, N):
    if not 1 <= n <= N:
        raise PreconditionerError(f"need 1 <= n <= N, got n={n}, N={N}")


def _check_nugget(eta):
    if not eta > 0:
        raise PreconditionerError("the nugget eta must be positive")


class Preconditioner:
    """Linear map v -> M^{-1} v with a descriptor of how it was built."""

    family = "none"

    def __init__(self, N, **params):
        self.N = N
        self.params = params

    def __call__(self, v):
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"

    def describe(self):
        return {"family": self.family, **self.params}


class IdentityPreconditioner(Preconditioner):
    family = "none"

    def __call__(self, v):
        return np.array(v, dtype=float)


class BlockJacobi(Preconditioner):
    """Block-diagonal part of K_p with b x b blocks; the last block holds the remainder.

    Each block is inverted once at setup (Cholesky, with an LU fallback for
    blocks that lose definiteness to rounding). ``b = 1`` is plain diagonal
    scaling.
    """

    family = "jacobi"

    def __init__(self, action, b=1):
        N = action.N
        if not 1 <= b <= N:
            raise PreconditionerError(f"block size must lie in [1, N], got {b}")
        super().__init__(N, b=int(b))
        self.b = int(b)
        if self.b == 1:
            diag = action.diag()
            if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
                raise PreconditionerError("nonpositive diagonal entry in K_p")
            self._inv_diag = 1.0 / diag
            return
        n_full = N // self.b
        self._n_full = n_full
        self._full = np.empty((n_full, self.b, self.b))
        for j in range(n_full):
            idx = np.arange(j * self.b, (j + 1) * self.b)
            self._full[j] = _block_inverse(action.entries(idx, idx))
        rest = np.arange(n_full * self.b, N)
        self._rest = _block_inverse(action.entries(rest, rest)) if rest.size else None

    @property
    def block_sizes(self):
        if self.b == 1:
            return [1] * self.N
        return [self.b] * self._n_full + ([self.N - self._n_full * self.b] if self._rest is not None else [])

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.b == 1:
            return self._inv_diag * v
        m = self._n_full * self.b
        out = np.empty_like(v)
        out[:m] = np.einsum("kij,kj->ki", self._full, v[:m].reshape(self._n_full, self.b)).ravel()
        if self._rest is not None:
            out[m:] = self._rest @ v[m:]
        return out


def _block_inverse(B):
    B = 0.5 * (B + B.T)
    eye = np.eye(B.shape[0])
    try:
        return linalg.cho_solve(linalg.cho_factor(B), eye)
    except linalg.LinAlgError:
        pass
    lu, piv = linalg.lu_factor(B, check_finite=True)
    if np.any(np.diag(lu) == 0):
        raise PreconditionerError("singular Jacobi block; are there duplicate nodes?")
    return linalg.lu_solve((lu, piv), eye)


def _select_inducing(action, n, sampling, rng):
    N = action.N
    if sampling == "uniform":
        idx = rng.choice(N, size=n, replace=False)
    elif sampling == "diagonal":
        # probabilities proportional to [K_p]_ii (not squared)
        diag = action.diag()
        idx = rng.choice(N, size=n, replace=False, p=diag / diag.sum())
    else:
        raise PreconditionerError(f"unknown sampling scheme {sampling!r}")
    return np.sort(idx)


class Nystrom(Preconditioner):
    """Woodbury inverse of K_{N,n} K_{n,n}^{-1} K_{n,N} + eta I.

    M^{-1} = eta^{-1} [I - K_{N,n} (eta K_{n,n} + K_{n,N} K_{N,n})^+ K_{n,N}]

    Inducing indices are drawn without replacement, uniformly or with
    probability proportional to the diagonal of K_p (``sampling="diagonal"``).
    """

    family = "nystrom"

    def __init__(self, action, n=None, eta=1e-2, sampling="uniform", seed=0):
        N = action.N
        n = default_inducing(N) if n is None else int(n)
        _check_size(n, N)
        _check_nugget(eta)
        if sampling == "diagonal":
            self.family = "nystrom-diag"
        super().__init__(N, n=n, eta=float(eta), seed=seed)
        self.eta = float(eta)
        self.indices = _select_inducing(action, n, sampling, make_rng(seed))
        K_nN = action.rows(self.indices)
        K_nn = K_nN[:, self.indices]
        F = _psd_pinv_sqrt(self.eta * K_nn + K_nN @ K_nN.T)
        if F.shape[1] == 0:
            warnings.warn("degenerate Nystrom inner matrix; using the identity", PreconditionerWarning, stacklevel=2)
            self._W = None
        else:
            self._W = K_nN.T @ F

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self._W is None:
            return v.copy()
        return (v - self._W @ (self._W.T @ v)) / self.eta


class FITC(Preconditioner):
    """Nystrom approximation plus the diagonal of its residual, inverted by Woodbury.

    D = diag(K - K_{N,n} K_{n,n}^{-1} K_{n,N}) + eta I
    M^{-1} = D^{-1} - D^{-1} K_{N,n} (K_{n,n} + K_{n,N} D^{-1} K_{N,n})^{-1} K_{n,N} D^{-1}

    The residual diagonal is computed row by row in O(n^2 N). Entries of D that
    rounding pushes below eta are clamped to eta.
    """

    family = "fitc"

    def __init__(self, action, n=None, eta=1e-2, seed=0):
        N = action.N
        n = default_inducing(N) if n is None else int(n)
        if not 0 <= n <= N:
            raise PreconditionerError(f"need 0 <= n <= N, got n={n}")
        _check_nugget(eta)
        super().__init__(N, n=n, eta=float(eta), seed=seed)
        self.eta = float(eta)
        diag = action.diag()
        if n == 0:
            self.indices = np.zeros(0, dtype=int)
            self.D = diag + self.eta
            self._W = None
            return
        self.indices = _select_inducing(action, n, "uniform", make_rng(seed))
        K_nN = action.rows(self.indices)
        K_nn = K_nN[:, self.indices]
        L = K_nN.T @ _psd_pinv_sqrt(K_nn)
        resid = diag - np.einsum("ij,ij->i", L, L)
        # the residual vanishes on the inducing set; keep rounding from clamping there
        resid[self.indices] = 0.0
        D = resid + self.eta
        low = D < self.eta
        if np.any(low):
            warnings.warn(
                f"clamped {int(low.sum())} FITC diagonal entries at eta", PreconditionerWarning, stacklevel=2
            )
            D[low] = self.eta
        self.D = D
        U = K_nN.T / D[:, None]
        F = _psd_pinv_sqrt(K_nn + K_nN @ U)
        self._W = U @ F

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        out = v / self.D
        if self._W is not None:
            out -= self._W @ (self._W.T @ v)
        return out


class RandomizedNystrom(Preconditioner):
    """Gaussian sketch Y = K_p Omega, then

    M^{-1} = eta^{-1} [I - Y (eta Omega^T Y + Y^T Y)^+ Y^T],

    the Woodbury inverse of Y (Omega^T Y)^{-1} Y^T + eta I.
    """

    family = "rand-nystrom"

    def __init__(self, action, n=None, eta=1e-2, seed=0):
        N = action.N
        n = default_inducing(N) if n is None else int(n)
        _check_size(n, N)
        _check_nugget(eta)
        super().__init__(N, n=n, eta=float(eta), seed=seed)
        self.eta = float(eta)
        self.omega = make_rng(seed).standard_normal((N, n))
        self.Y = action.matmat(self.omega)
        F = _psd_pinv_sqrt(self.eta * (self.omega.T @ self.Y) + self.Y.T @ self.Y)
        self._W = self.Y @ F

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        return (v - self._W @ (self._W.T @ v)) / self.eta


class RandomizedSVD(Preconditioner):
    """Randomised truncated SVD K_p ~ U Sigma V^T with one power step.

    Y = K K^T K Omega, Q = qr(Y), B = Q^T K = U~ Sigma V^T, U = Q U~, and
    M^{-1} = eta^{-1} [I - U (eta Sigma^{-1} + V^T U)^+ V^T].
    Singular values below 1e-12 sigma_max are truncated.
    """

    family = "rand-svd"

    def __init__(self, action, n=None, eta=1e-2, seed=0):
        N = action.N
        n = default_inducing(N) if n is None else int(n)
        _check_size(n, N)
        _check_nugget(eta)
        super().__init__(N, n=n, eta=float(eta), seed=seed)
        self.eta = float(eta)
        omega = make_rng(seed).standard_normal((N, n))
        # K is symmetric, so K K^T K Omega is three applications of K
        Y = action.matmat(action.matmat(action.matmat(omega)))
        self.Q, _ = linalg.qr(Y, mode="economic")
        B = action.matmat(self.Q).T
        Ut, s, Vt = linalg.svd(B, full_matrices=False)
        keep = s > PINV_RTOL * s[0] if s.size and s[0] > 0 else np.zeros(s.shape, dtype=bool)
        if not np.all(keep):
            warnings.warn(f"truncated rank-SVD to numerical rank {int(keep.sum())}", PreconditionerWarning, stacklevel=2)
        self.U = self.Q @ Ut[:, keep]
        self.sigma = s[keep]
        self.V = Vt[keep].T
        inner = np.diag(self.eta / self.sigma) + self.V.T @ self.U
        self._P = np.linalg.pinv(inner, rcond=PINV_RTOL) @ self.V.T

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        return (v - self.U @ (self._P @ v)) / self.eta


class Spectral(Preconditioner):
    """Subsampled spectral preconditioner that flattens the top r-1 eigenvalues.

    With lambda_1 >= ... >= lambda_r the leading eigenpairs of K_{n,n},

    M^{-1} = I - E_n V_r (I - lambda_r Lambda_r^{-1}) Lambda_r^{-1} V_r^T K_{n,N},

    where E_n scatters onto the inducing indices. M is not symmetric. ``r = 1``
    gives the identity; r is lowered while lambda_r <= 0.
    """

    family = "spectral"

    def __init__(self, action, n=None, r=10, seed=0):
        N = action.N
        n = default_inducing(N) if n is None else int(n)
        _check_size(n, N)
        if not 1 <= r <= n:
            raise PreconditionerError(f"need 1 <= r <= n, got r={r}, n={n}")
        super().__init__(N, n=n, r=int(r), seed=seed)
        self.indices = _select_inducing(action, n, "uniform", make_rng(seed))
        K_nN = action.rows(self.indices)
        K_nn = K_nN[:, self.indices]
        lam, V = linalg.eigh(0.5 * (K_nn + K_nn.T))
        lam, V = lam[::-1], V[:, ::-1]
        r = int(r)
        while r > 1 and lam[r - 1] <= 0:
            r -= 1
        if r != self.params["r"]:
            warnings.warn(f"spectral preconditioner reduced r to {r}", PreconditionerWarning, stacklevel=2)
        self.r = r
        self.eigenvalues = lam
        if r == 1:
            self._A = None
            return
        lead, Vr = lam[: r - 1], V[:, : r - 1]
        scale = (1.0 - lam[r - 1] / lead) / lead
        self._A = (Vr * scale) @ (Vr.T @ K_nN)

    def __call__(self, v):
        out = np.array(v, dtype=float)
        if self._A is not None:
            out[self.indices] -= self._A @ np.asarray(v, dtype=float)
        return out


FAMILIES = ("none", "jacobi", "nystrom", "nystrom-diag", "fitc", "rand-nystrom", "rand-svd", "spectral")


def build_preconditioner(family, action, seed=0, **params):
    """Construct a preconditioner by family name.

    Recognised keys: ``b`` (jacobi), ``n`` and ``eta`` (Nystrom-type families),
    ``n`` and ``r`` (spectral). Unused keys raise ``TypeError``.
    """
    if family in (None, "none", "identity"):
        if params:
            raise TypeError(f"identity preconditioner takes no parameters, got {sorted(params)}")
        return IdentityPreconditioner(action.N)
    if family == "jacobi":
        return BlockJacobi(action, **params)
    if family == "nystrom":
        return Nystrom(action, sampling="uniform", seed=seed, **params)
    if family == "nystrom-diag":
        return Nystrom(action, sampling="diagonal", seed=seed, **params)
    if family == "fitc":
        return FITC(action, seed=seed, **params)
    if family == "rand-nystrom":
        return RandomizedNystrom(action, seed=seed, **params)
    if family == "rand-svd":
        return RandomizedSVD(action, seed=seed, **params)
    if family == "spectral":
        return Spectral(action, seed=seed, **params)
    raise PreconditionerError(f"unknown preconditioner family {family!r}; choose from {FAMILIES}")
