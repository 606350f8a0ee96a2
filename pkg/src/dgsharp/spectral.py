"""Hessian spectrum tools: power iteration for the dominant eigenvalue,
Hutchinson trace probes, and stochastic Lanczos quadrature densities.

Everything works matrix-free through Hessian-vector products.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .core import SeededRng, as_params, norm2

__all__ = [
    "hvp_operator",
    "top_eigenvalue",
    "hutchinson_trace",
    "SpectrumConfig",
    "SpectrumEstimate",
    "lanczos_spectrum",
]


def hvp_operator(objective, theta):
    """Bind an objective's Hessian-vector product at a point."""
    theta = as_params(theta).copy()

    def op(v):
        return np.asarray(objective.hessian_vector_product(theta, v),
                          dtype=np.float64)

    return op


def top_eigenvalue(objective, theta, iters=500, tol=1e-8, seed=0):
    """Dominant-by-magnitude eigenvalue and eigenvector of the Hessian.

    Power iteration runs on H^2 so a negative dominant eigenvalue cannot
    stall it; the sign comes from the Rayleigh quotient. Raises on
    non-convergence with the last residual.
    """
    theta = as_params(theta)
    op = hvp_operator(objective, theta)
    rng = SeededRng(seed)
    v = rng.normal(theta.size)
    v /= norm2(v)
    residual = np.inf
    for _ in range(iters):
        hv = op(v)
        lam = float(v @ hv)
        residual = norm2(hv - lam * v)
        if residual <= tol:
            return lam, v
        hhv = op(hv)
        n = norm2(hhv)
        if n == 0.0:
            # zero Hessian (or v in its null space): lam = 0 is exact
            return 0.0, v
        v = hhv / n
    raise RuntimeError(
        f"power iteration did not reach tol {tol:g} in {iters} iterations "
        f"(last residual {residual:.3e})"
    )


def _probe(rng: SeededRng, dim: int, kind: str) -> np.ndarray:
    if kind == "rademacher":
        return rng.integers(0, 2, size=dim).astype(np.float64) * 2.0 - 1.0
    if kind == "gaussian":
        return rng.normal(dim)
    raise ValueError(f"unknown probe kind {kind!r}")


def hutchinson_trace(objective, theta, n_probes=64, seed=0, kind="rademacher",
                     power=1):
    """Randomized trace of H^power: samples v.(H^power v) with isotropic
    probes. Returns (estimate, standard_error, samples)."""
    theta = as_params(theta)
    op = hvp_operator(objective, theta)
    rng = SeededRng(seed)
    samples = np.empty(n_probes)
    for i in range(n_probes):
        v = _probe(rng, theta.size, kind)
        hv = v
        for _ in range(power):
            hv = op(hv)
        samples[i] = float(v @ hv)
    est = float(samples.mean())
    se = float(samples.std(ddof=1) / np.sqrt(n_probes)) if n_probes > 1 else np.inf
    return est, se, samples


@dataclass
class SpectrumConfig:
    n_probes: int = 16
    lanczos_steps: int = 64
    probe_kind: str = "rademacher"
    smoothing_width: float | None = None  # default 0.01 * spectral range
    grid_points: int = 512
    seed: int = 0


@dataclass
class SpectrumEstimate:
    nodes: np.ndarray            # all Ritz nodes, concatenated over probes
    weights: np.ndarray          # matching quadrature weights, sum to 1
    grid: np.ndarray
    density: np.ndarray
    smoothing_width: float
    breakdown_probes: list = field(default_factory=list)
    config: SpectrumConfig = None

    def moment(self, k: int) -> float:
        """k-th spectral moment estimate, tr(H^k)/d up to probe noise."""
        return float(np.sum(self.weights * self.nodes**k))

    def density_integral(self) -> float:
        trapz = getattr(np, "trapezoid", None) or np.trapz
        return float(trapz(self.density, self.grid))

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["eigenvalue", "density"])
            for x, y in zip(self.grid, self.density):
                w.writerow([repr(float(x)), repr(float(y))])


def _lanczos_tridiagonal(op, v0, k, breakdown_tol=1e-12):
    """k-step Lanczos with full reorthogonalization. Returns (alphas, betas)
    and whether an early breakdown happened."""
    dim = v0.size
    k = min(k, dim)
    Q = np.zeros((dim, k))
    alphas, betas = [], []
    q = v0 / norm2(v0)
    scale = None
    for j in range(k):
        Q[:, j] = q
        w = op(q)
        if scale is None:
            scale = max(1.0, norm2(w))
        alpha = float(q @ w)
        alphas.append(alpha)
        w = w - alpha * q
        if j > 0:
            w = w - betas[-1] * Q[:, j - 1]
        # full reorthogonalization, twice for numerical safety
        w = w - Q[:, :j + 1] @ (Q[:, :j + 1].T @ w)
        w = w - Q[:, :j + 1] @ (Q[:, :j + 1].T @ w)
        beta = norm2(w)
        if j == k - 1:
            break
        if beta <= breakdown_tol * scale:
            return np.array(alphas), np.array(betas), True
        betas.append(beta)
        q = w / beta
    return np.array(alphas), np.array(betas), False


def lanczos_spectrum(objective, theta, config: SpectrumConfig = None) -> SpectrumEstimate:
    """Stochastic Lanczos quadrature estimate of the Hessian eigenvalue
    density, smoothed with a Gaussian kernel."""
    config = config or SpectrumConfig()
    theta = as_params(theta)
    op = hvp_operator(objective, theta)
    rng = SeededRng(config.seed)
    k = min(config.lanczos_steps, theta.size)

    all_nodes, all_weights, breakdowns = [], [], []
    for pi in range(config.n_probes):
        v = _probe(rng, theta.size, config.probe_kind)
        alphas, betas, broke = _lanczos_tridiagonal(op, v, k)
        if broke:
            breakdowns.append(pi)
        if len(alphas) == 1:
            nodes, first_row_sq = alphas, np.array([1.0])
        else:
            nodes, vecs = eigh_tridiagonal(alphas, betas[:len(alphas) - 1])
            first_row_sq = vecs[0, :] ** 2
        all_nodes.append(nodes)
        all_weights.append(first_row_sq / config.n_probes)

    nodes = np.concatenate(all_nodes)
    weights = np.concatenate(all_weights)

    lo, hi = float(nodes.min()), float(nodes.max())
    spread = max(hi - lo, 1e-12)
    sigma = config.smoothing_width if config.smoothing_width is not None \
        else 0.01 * spread
    sigma = max(sigma, 1e-12)
    grid = np.linspace(lo - 6 * sigma, hi + 6 * sigma, config.grid_points)
    density = np.zeros_like(grid)
    norm_const = 1.0 / (np.sqrt(2 * np.pi) * sigma)
    for x, w in zip(nodes, weights):
        density += w * norm_const * np.exp(-0.5 * ((grid - x) / sigma) ** 2)

    return SpectrumEstimate(
        nodes=nodes, weights=weights, grid=grid, density=density,
        smoothing_width=sigma, breakdown_probes=breakdowns, config=config,
    )
