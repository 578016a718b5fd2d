"""Base kernels, the Stein reproducing kernel and its matrix-free action."""

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

__all__ = [
    "RadialProfile",
    "IMQProfile",
    "SteinKernel",
    "KernelAction",
    "DenseAction",
    "DenseLimitError",
    "assemble_dense",
    "PROFILES",
]

DEFAULT_BUDGET_BYTES = 256 * 2**20
DEFAULT_DENSE_LIMIT = 5000


class DenseLimitError(ValueError):
    """Raised when an N x N matrix is requested for N above the configured limit."""


class RadialProfile:
    """phi(r) = psi(|r|^2), described through psi and its first two derivatives.

    Working with t = |r|^2 keeps every derivative of the translation-invariant
    kernel k(x, x') = psi(|x - x'|^2 / l^2) in closed form.
    """

    name = "radial"

    def psi(self, t):
        raise NotImplementedError

    def dpsi(self, t):
        raise NotImplementedError

    def d2psi(self, t):
        raise NotImplementedError

    def value_at_zero(self):
        return float(self.psi(0.0))

    def laplacian_at_zero(self, d):
        # Laplacian of psi(|r|^2) at r = 0 is 2 d psi'(0)
        return 2.0 * d * float(self.dpsi(0.0))


class IMQProfile(RadialProfile):
    """Inverse multiquadric phi(r) = (1 + |r|^2)^(-1/2)."""

    name = "imq"

    def psi(self, t):
        return 1.0 / np.sqrt(1.0 + t)

    def dpsi(self, t):
        return -0.5 * (1.0 + t) ** -1.5

    def d2psi(self, t):
        return 0.75 * (1.0 + t) ** -2.5

    def laplacian_at_zero(self, d):
        return -float(d)


PROFILES = {"imq": IMQProfile}


class SteinKernel:
    """Langevin Stein kernel built on k(x, x') = phi((x - x') / l).

    k_p(x, x') = div_1 div_2 k + grad_1 k . g' + g . grad_2 k + k g . g'

    where g, g' are the scores at x, x'. Scores are passed in by the caller, so
    the kernel never touches the target density.
    """

    def __init__(self, lengthscale=1.0, profile="imq"):
        if not lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        self.lengthscale = float(lengthscale)
        self.profile = PROFILES[profile]() if isinstance(profile, str) else profile

    def __repr__(self):
        return f"SteinKernel(lengthscale={self.lengthscale!r}, profile={self.profile.name!r})"

    def base_eval(self, x, y):
        """Return (k, grad_1 k, grad_2 k, div_1 div_2 k) at a single pair."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        l2 = self.lengthscale**2
        diff = x - y
        t = float(diff @ diff) / l2
        p = self.profile
        k = float(p.psi(t))
        grad1 = 2.0 * float(p.dpsi(t)) * diff / l2
        div12 = -(4.0 * float(p.d2psi(t)) * t + 2.0 * x.size * float(p.dpsi(t))) / l2
        return k, grad1, -grad1, div12

    def __call__(self, x, gx, y, gy):
        k, grad1, grad2, div12 = self.base_eval(x, y)
        gx = np.asarray(gx, dtype=float)
        gy = np.asarray(gy, dtype=float)
        return float(div12 + grad1 @ gy + gx @ grad2 + k * (gx @ gy))

    def matrix(self, X, GX, Y, GY):
        """Block [k_p(X[i], Y[j])] of shape (len(X), len(Y))."""
        X = np.atleast_2d(X)
        Y = np.atleast_2d(Y)
        d = X.shape[1]
        l2 = self.lengthscale**2
        diff = X[:, None, :] - Y[None, :, :]
        t = np.einsum("ijk,ijk->ij", diff, diff) / l2
        p = self.profile
        k = p.psi(t)
        dk = p.dpsi(t)
        c = 2.0 * dk / l2
        # grad_1 k . g' + g . grad_2 k = c * (diff . g' - g . diff)
        cross = np.einsum("ijk,jk->ij", diff, GY) - np.einsum("ik,ijk->ij", GX, diff)
        div12 = -(4.0 * p.d2psi(t) * t + 2.0 * d * dk) / l2
        return div12 + c * cross + k * (GX @ GY.T)

    def diag(self, G):
        """Closed-form diagonal: -Laplacian(phi)(0) / l^2 + phi(0) |g|^2."""
        G = np.atleast_2d(G)
        d = G.shape[1]
        p = self.profile
        return -p.laplacian_at_zero(d) / self.lengthscale**2 + p.value_at_zero() * np.einsum("ij,ij->i", G, G)


class _ActionBase:
    """Shared interface: K @ v, K @ V, selected rows/entries and the diagonal."""

    n_calls = 0

    @property
    def shape(self):
        return (self.N, self.N)

    def matmat(self, V):
        V = np.asarray(V, dtype=float)
        return np.column_stack([self(V[:, j]) for j in range(V.shape[1])]) if V.shape[1] else np.zeros((self.N, 0))


class KernelAction(_ActionBase):
    """Memory-bounded product v -> K_p v over a sample set.

    Rows are processed in batches of ``bandwidth`` rows; at most one
    ``bandwidth x N`` block of K_p exists at a time per worker. When
    ``bandwidth`` is None it is chosen so the block (plus the N x d
    difference tensor used to build it) fits in ``budget_bytes``.

    Batch boundaries depend only on ``bandwidth``, so with ``threads > 1`` the
    result is bit-identical to the sequential one. ``cache=True`` keeps the
    assembled blocks between calls, which is only allowed when the whole
    matrix fits inside the byte budget.
    """

    def __init__(self, samples, kernel, bandwidth=None, budget_bytes=DEFAULT_BUDGET_BYTES, threads=1, cache=False):
        self.X = samples.X
        self.G = samples.G
        self.kernel = kernel
        self.N, self.d = self.X.shape
        if bandwidth is None:
            bandwidth = bandwidth_for_budget(self.N, self.d, budget_bytes)
        if bandwidth < 1:
            raise ValueError("bandwidth must be positive")
        self.bandwidth = int(bandwidth)
        self.threads = max(1, int(threads))
        if cache and 8 * self.N**2 > budget_bytes:
            raise ValueError("cache=True requires the full matrix to fit in budget_bytes")
        self._cache = {} if cache else None
        self.n_calls = 0
        starts = range(0, self.N, self.bandwidth)
        self.batches = [(s, min(s + self.bandwidth, self.N)) for s in starts]

    def _block(self, lo, hi):
        if self._cache is not None and lo in self._cache:
            return self._cache[lo]
        blk = self.kernel.matrix(self.X[lo:hi], self.G[lo:hi], self.X, self.G)
        if self._cache is not None:
            self._cache[lo] = blk
        return blk

    def _apply(self, V):
        out = np.empty((self.N,) + V.shape[1:])

        def work(batch):
            lo, hi = batch
            out[lo:hi] = self._block(lo, hi) @ V

        if self.threads > 1 and len(self.batches) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                list(pool.map(work, self.batches))
        else:
            for batch in self.batches:
                work(batch)
        return out

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.N,):
            raise ValueError(f"expected a vector of length {self.N}, got shape {v.shape}")
        self.n_calls += 1
        return self._apply(v)

    def matmat(self, V):
        V = np.asarray(V, dtype=float)
        if V.ndim != 2 or V.shape[0] != self.N:
            raise ValueError(f"expected an ({self.N}, k) matrix, got shape {V.shape}")
        self.n_calls += V.shape[1]
        return self._apply(V)

    def rows(self, idx):
        idx = np.asarray(idx, dtype=int)
        return self.kernel.matrix(self.X[idx], self.G[idx], self.X, self.G)

    def entries(self, rows, cols):
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        return self.kernel.matrix(self.X[rows], self.G[rows], self.X[cols], self.G[cols])

    def diag(self):
        return self.kernel.diag(self.G)


class DenseAction(_ActionBase):
    """The same interface as :class:`KernelAction` for an explicit matrix."""

    def __init__(self, K):
        K = np.asarray(K, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError("K must be square")
        self.K = K
        self.N = K.shape[0]
        self.n_calls = 0

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.N,):
            raise ValueError(f"expected a vector of length {self.N}, got shape {v.shape}")
        self.n_calls += 1
        return self.K @ v

    def matmat(self, V):
        V = np.asarray(V, dtype=float)
        self.n_calls += V.shape[1]
        return self.K @ V

    def rows(self, idx):
        return self.K[np.asarray(idx, dtype=int)]

    def entries(self, rows, cols):
        return self.K[np.ix_(np.asarray(rows, dtype=int), np.asarray(cols, dtype=int))]

    def diag(self):
        return np.diag(self.K).copy()


def assemble_dense(samples, kernel, limit=DEFAULT_DENSE_LIMIT):
    """Dense N x N Stein kernel matrix, exactly symmetric.

    The upper triangle is mirrored onto the lower one. Refuses when N exceeds
    ``limit``; the dense matrix is meant as ground truth for small problems.
    """
    N = samples.N
    if N > limit:
        raise DenseLimitError(f"N={N} exceeds the dense assembly limit {limit}")
    K = np.empty((N, N))
    step = bandwidth_for_budget(N, samples.d)
    for lo in range(0, N, step):
        hi = min(lo + step, N)
        K[lo:hi] = kernel.matrix(samples.X[lo:hi], samples.G[lo:hi], samples.X, samples.G)
    iu = np.triu_indices(N, 1)
    K[(iu[1], iu[0])] = K[iu]
    return K


def bandwidth_for_budget(N, d, budget_bytes=DEFAULT_BUDGET_BYTES):
    """Rows per batch so a batch block and its difference tensor fit the budget."""
    return max(1, min(N, math.floor(budget_bytes / (8 * N * (d + 6)))))
