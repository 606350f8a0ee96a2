"""Dense vector arithmetic, seeded randomness and finite-difference utilities.

Parameter vectors are plain 1-D float64 numpy arrays. All public operations
validate dimensions and reject non-finite results so downstream modules can
assume clean inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "NonFiniteError",
    "SeededRng",
    "as_params",
    "dot",
    "norm2",
    "axpy",
    "default_fd_step",
    "finite_diff_gradient",
    "finite_diff_hvp",
    "mean_fixed_order",
]


class DimensionMismatchError(ValueError):
    """Two vectors of different dimension were combined."""


class NonFiniteError(FloatingPointError):
    """A value that must be finite turned out NaN/Inf."""


def as_params(values, name="theta") -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size < 1:
        raise ValueError(f"{name} must have dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}"
        )


def dot(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_dim(a, b)
    return float(np.dot(a, b))


def norm2(a) -> float:
    """Euclidean norm."""
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64)))


def axpy(alpha: float, x, y) -> np.ndarray:
    """Return alpha*x + y without modifying the inputs."""
    if not np.isfinite(alpha):
        raise NonFiniteError("alpha must be finite")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same_dim(x, y)
    return alpha * x + y


def mean_fixed_order(items):
    """Arithmetic mean with left-to-right accumulation (bit-reproducible)."""
    items = list(items)
    if not items:
        raise ValueError("mean of empty sequence")
    acc = items[0]
    for it in items[1:]:
        acc = acc + it
    return acc / len(items)


def default_fd_step(theta: np.ndarray) -> float:
    """Step balancing truncation and round-off at the loss scales used here."""
    return 1e-5 * (1.0 + float(np.max(np.abs(theta))))


def finite_diff_gradient(f, theta, h: float | None = None) -> np.ndarray:
    """Central-difference gradient estimate, component i:
    (f(theta + h e_i) - f(theta - h e_i)) / (2 h).
    """
    theta = as_params(theta)
    if h is None:
        h = default_fd_step(theta)
    if h <= 0:
        raise ValueError("h must be positive")
    grad = np.empty_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        fp = float(f(tp))
        fm = float(f(tm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(
                f"non-finite function value while differencing component {i}"
            )
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def finite_diff_hvp(gradient_fn, theta, v, h: float | None = None) -> np.ndarray:
    """Hessian-vector product via central differences of a gradient function."""
    theta = as_params(theta)
    v = as_params(v, "v")
    _check_same_dim(theta, v)
    if h is None:
        h = default_fd_step(theta)
    gp = np.asarray(gradient_fn(theta + h * v), dtype=np.float64)
    gm = np.asarray(gradient_fn(theta - h * v), dtype=np.float64)
    out = (gp - gm) / (2.0 * h)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite gradient while differencing HVP")
    return out


class SeededRng:
    """Deterministic random source: same seed + same call sequence gives the
    same stream. Backed by PCG64; the contract is determinism per seed, not a
    particular bit stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform permutation of 0..n-1."""
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        if k > n:
            raise ValueError(f"cannot draw {k} items from {n} without replacement")
        return self._gen.choice(n, size=k, replace=False)

    def spawn(self) -> "SeededRng":
        """Child stream, deterministic given the parent's state."""
        return SeededRng(int(self._gen.integers(0, 2**63)))

    def __repr__(self):
        return f"SeededRng(seed={self.seed})"
