"""Zeroth-order sharpness estimators, landscape grids and the
curvature-term decomposition of the gradual perturbation.

Sharpness at radius rho is the largest loss increase over the closed ball
of that radius. The estimators are searches (lower bounds); on quadratic
objectives a trust-region solve gives the exact value.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import SeededRng, as_params, norm2
from .objectives.base import DomainObjective, MultiDomainProblem, TotalObjective

__all__ = [
    "SharpnessEstimatorConfig",
    "SharpnessReport",
    "max_quadratic_over_ball",
    "zeroth_order_sharpness",
    "sharpness_report",
    "disk_grid_sharpness",
    "LandscapeGrid",
    "landscape_grid",
    "curvature_term_decomposition",
]

METHODS = ("grad_ascent", "random_search", "exact_quadratic")


@dataclass
class SharpnessEstimatorConfig:
    radius: float = 0.05
    method: str = "grad_ascent"
    ascent_steps: int = 20
    ascent_step_size: float | None = None  # default radius / ascent_steps
    restarts: int = 8
    samples: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")


def max_quadratic_over_ball(g, H, rho):
    """Exact maximizer of g.eps + 0.5 eps^T H eps over |eps| <= rho.

    Trust-region style solve on the eigenbasis: the boundary maximizer obeys
    (mu I - H) eps = g with mu >= max(lam_max, 0); the multiplier is found
    from |eps(mu)| = rho. Handles the degenerate case where g has no
    component on the leading eigenspace. Returns (value, eps).
    """
    g = as_params(g, "g")
    H = np.asarray(H, dtype=np.float64)
    if rho == 0.0:
        return 0.0, np.zeros_like(g)
    lam, V = np.linalg.eigh(H)
    beta = V.T @ g
    scale = max(1.0, float(np.max(np.abs(lam))), norm2(g))
    lam_max = lam[-1]
    mu_floor = max(lam_max, 0.0)
    top = lam >= lam_max - 1e-12 * scale

    def q_of(eps):
        return float(g @ eps + 0.5 * eps @ (H @ eps))

    candidates = [(0.0, np.zeros_like(g))]

    # interior stationary point (valid maximizer only when H is NSD)
    if lam_max <= 1e-14 * scale:
        u = np.zeros_like(beta)
        consistent = True
        for i, (li, bi) in enumerate(zip(lam, beta)):
            if li < -1e-14 * scale:
                u[i] = -bi / li
            elif abs(bi) > 1e-13 * scale:
                consistent = False
                break
        if consistent and norm2(u) <= rho:
            eps = V @ u
            candidates.append((q_of(eps), eps))

    def phi(mu, exclude_top=False):
        denom = mu - lam
        keep = ~top if exclude_top else np.abs(denom) > 1e-300
        if not np.any(keep):
            return 0.0
        return float(np.sum((beta[keep] / denom[keep]) ** 2))

    def boundary_candidate(mu, fill_top=0.0):
        denom = mu - lam
        u = np.zeros_like(beta)
        nz = np.abs(denom) > 1e-14 * scale
        u[nz] = beta[nz] / denom[nz]
        eps = V @ u + fill_top * V[:, -1]
        n = norm2(eps)
        if n > 0:
            eps = eps * (rho / n)
        return (q_of(eps), eps)

    beta_top = float(np.sqrt(np.sum(beta[top] ** 2)))
    if beta_top > 1e-13 * scale:
        # phi blows up at mu_floor+ and decays to 0: bracket the root
        lo = mu_floor + 1e-14 * scale
        hi = mu_floor + norm2(g) / rho + 1e-14 * scale
        for _ in range(300):
            if phi(lo) > rho**2:
                break
            lo = mu_floor + (lo - mu_floor) * 0.25
        for _ in range(300):
            if phi(hi) < rho**2:
                break
            hi = mu_floor + (hi - mu_floor) * 4.0
        if phi(lo) >= rho**2 >= phi(hi):
            mu = brentq(lambda m: phi(m) - rho**2, lo, hi, xtol=1e-15, rtol=1e-15)
            candidates.append(boundary_candidate(mu))
    else:
        # hard case: check whether the non-top components already fill the ball
        u_norm_sq = phi(mu_floor, exclude_top=True)
        if u_norm_sq <= rho**2:
            fill = np.sqrt(max(rho**2 - u_norm_sq, 0.0))
            candidates.append(boundary_candidate(mu_floor, fill_top=fill))
        else:
            hi = mu_floor + norm2(g) / rho + 1e-14 * scale
            for _ in range(300):
                if phi(hi, exclude_top=True) < rho**2:
                    break
                hi = mu_floor + (hi - mu_floor) * 4.0
            mu = brentq(
                lambda m: phi(m, exclude_top=True) - rho**2,
                mu_floor + 1e-15 * scale, hi, xtol=1e-15, rtol=1e-15,
            )
            candidates.append(boundary_candidate(mu))

    return max(candidates, key=lambda t: t[0])


def _quadratic_data(objective, theta):
    if hasattr(objective, "quadratic_data"):
        return objective.quadratic_data(theta)
    raise TypeError(
        "exact_quadratic method needs an objective with exact (gradient, hessian)"
    )


def _project_to_ball(eps, rho):
    n = norm2(eps)
    if n > rho:
        return eps * (rho / n)
    return eps


def zeroth_order_sharpness(objective: DomainObjective, theta,
                           config: SharpnessEstimatorConfig) -> float:
    """max over |eps| <= rho of loss(theta+eps) - loss(theta), by search
    (grad_ascent / random_search give lower bounds) or exactly on quadratics."""
    theta = as_params(theta)
    rho = config.radius
    if rho == 0.0:
        return 0.0
    if config.method == "exact_quadratic":
        g, H = _quadratic_data(objective, theta)
        value, _ = max_quadratic_over_ball(g, H, rho)
        return max(0.0, value)

    base = float(objective.loss(theta))
    if not np.isfinite(base):
        raise FloatingPointError("non-finite loss at the center point")
    rng = SeededRng(config.seed)
    best = base
    best_eps = np.zeros_like(theta)

    def consider(eps):
        nonlocal best, best_eps
        val = float(objective.loss(theta + eps))
        if not np.isfinite(val):
            raise FloatingPointError("non-finite loss inside the sharpness ball")
        if val > best:
            best = val
            best_eps = eps
        return val

    if config.method == "random_search":
        d = theta.size
        n_sphere = config.samples // 2
        for i in range(config.samples):
            u = rng.normal(d)
            nu = norm2(u)
            if nu == 0:
                continue
            u /= nu
            r = rho if i < n_sphere else rho * rng.uniform() ** (1.0 / d)
            consider(r * u)
        return best - base

    # grad_ascent: one start along the gradient, the rest random on the sphere
    eta = config.ascent_step_size or rho / max(1, config.ascent_steps)
    starts = []
    g0 = np.asarray(objective.gradient(theta), dtype=np.float64)
    gn = norm2(g0)
    if gn > 0:
        starts.append(rho * g0 / gn)
    while len(starts) < config.restarts:
        u = rng.normal(theta.size)
        nu = norm2(u)
        if nu == 0:
            continue
        starts.append(rho * u / nu)
    for eps in starts:
        eps = _project_to_ball(eps, rho)
        consider(eps)
        for _ in range(config.ascent_steps):
            g = np.asarray(objective.gradient(theta + eps), dtype=np.float64)
            ng = norm2(g)
            if ng == 0:
                break
            eps = _project_to_ball(eps + eta * g / ng, rho)
            consider(eps)
    # polish the incumbent with shrinking steps; on the boundary move along
    # the tangential gradient so the angle converges even when the radial
    # component dominates (keeps coarse grid scans from beating the result)
    for shrink in (1.0, 0.3, 0.1, 0.03, 0.01, 0.003):
        eps = best_eps
        for _ in range(20):
            g = np.asarray(objective.gradient(theta + eps), dtype=np.float64)
            ne = norm2(eps)
            if ne >= 0.999 * rho:
                radial = eps / ne
                tang = g - (g @ radial) * radial
                nt = norm2(tang)
                direction = tang / nt if nt > 1e-300 else None
            else:
                ng = norm2(g)
                direction = g / ng if ng > 0 else None
            if direction is None:
                break
            eps = _project_to_ball(eps + shrink * eta * direction, rho)
            if norm2(eps) > 0:
                eps = eps * (rho / norm2(eps)) if ne >= 0.999 * rho else eps
            consider(eps)
    return best - base


def disk_grid_sharpness(objective: DomainObjective, theta, rho,
                        n_radii=50, n_angles=200) -> float:
    """Brute-force 2-D oracle: max loss increase over ~n_radii*n_angles
    points of the closed disk. Independent of the search estimators."""
    theta = as_params(theta)
    if theta.size != 2:
        raise ValueError("disk grid oracle is 2-D only")
    base = float(objective.loss(theta))
    radii = rho * np.arange(1, n_radii + 1) / n_radii
    angles = 2 * np.pi * np.arange(n_angles) / n_angles
    rr, aa = np.meshgrid(radii, angles, indexing="ij")
    pts = theta + np.stack([rr * np.cos(aa), rr * np.sin(aa)], axis=-1).reshape(-1, 2)
    if hasattr(objective, "loss_batch"):
        vals = np.asarray(objective.loss_batch(pts))
    else:
        vals = np.array([objective.loss(p) for p in pts])
    return max(0.0, float(np.max(vals)) - base)


@dataclass
class SharpnessReport:
    per_domain: list
    global_sharpness: float
    mean: float
    std: float
    unseen: float | None
    config: SharpnessEstimatorConfig

    def to_json_dict(self):
        d = {
            "per_domain": [float(v) for v in self.per_domain],
            "mean": float(self.mean),
            "std": float(self.std),
            "total": float(self.global_sharpness),
            "estimator": {
                "radius": self.config.radius,
                "method": self.config.method,
                "ascent_steps": self.config.ascent_steps,
                "restarts": self.config.restarts,
                "samples": self.config.samples,
                "seed": self.config.seed,
            },
        }
        if self.unseen is not None:
            d["unseen"] = float(self.unseen)
        return d


def sharpness_report(problem: MultiDomainProblem, theta,
                     config: SharpnessEstimatorConfig) -> SharpnessReport:
    """Per-domain sharpness, their mean (std, population convention), the
    total-loss sharpness, and the held-out domain's value when present."""
    per = [zeroth_order_sharpness(d, theta, config) for d in problem.domains]
    total = zeroth_order_sharpness(problem.total_objective(), theta, config)
    unseen = None
    if problem.unseen is not None:
        unseen = zeroth_order_sharpness(problem.unseen, theta, config)
    arr = np.asarray(per)
    return SharpnessReport(
        per_domain=per,
        global_sharpness=total,
        mean=float(arr.mean()),
        std=float(arr.std()),
        unseen=unseen,
        config=config,
    )


@dataclass
class LandscapeGrid:
    us: np.ndarray
    vs: np.ndarray
    total: np.ndarray
    per_domain: np.ndarray  # (S, res, res)
    flagged: np.ndarray     # bool, res x res
    dir1: np.ndarray
    dir2: np.ndarray
    center: np.ndarray

    def to_csv(self, path):
        s = self.per_domain.shape[0]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["u", "v", "loss_total"]
                       + [f"loss_domain_{i + 1}" for i in range(s)])
            for iu, u in enumerate(self.us):
                for iv, v in enumerate(self.vs):
                    row = [repr(float(u)), repr(float(v)),
                           repr(float(self.total[iu, iv]))]
                    row += [repr(float(self.per_domain[i, iu, iv]))
                            for i in range(s)]
                    w.writerow(row)


def landscape_grid(problem: MultiDomainProblem, center, dir1=None, dir2=None,
                   half_width=1.0, resolution=41, seed=0) -> LandscapeGrid:
    """Evaluate per-domain and total losses on a plane grid spanned by two
    orthonormal directions (random from the seed when not given)."""
    center = as_params(center)
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    rng = SeededRng(seed)
    d1 = rng.normal(center.size) if dir1 is None else as_params(dir1, "dir1")
    d2 = rng.normal(center.size) if dir2 is None else as_params(dir2, "dir2")
    d1 = d1 / norm2(d1)
    d2 = d2 - (d1 @ d2) * d1
    n2 = norm2(d2)
    if n2 < 1e-12:
        raise ValueError("directions are parallel")
    d2 = d2 / n2

    coords = np.linspace(-half_width, half_width, resolution)
    s = problem.n_domains
    per = np.empty((s, resolution, resolution))
    flagged = np.zeros((resolution, resolution), dtype=bool)
    for iu, u in enumerate(coords):
        for iv, v in enumerate(coords):
            point = center + u * d1 + v * d2
            for i, dom in enumerate(problem.domains):
                try:
                    val = float(dom.loss(point))
                except FloatingPointError:
                    val = np.nan
                per[i, iu, iv] = val
                if not np.isfinite(val):
                    flagged[iu, iv] = True
    total = per.mean(axis=0)
    return LandscapeGrid(coords, coords, total, per, flagged, d1, d2, center)


@dataclass
class DecompositionStep:
    step: int
    domain: int
    first_norm: float
    second_norm: float
    actual_norm: float
    residual_norm: float
    residual_over_second: float
    residual_over_actual: float


def curvature_term_decomposition(problem: MultiDomainProblem, theta, rho,
                                 seed=0, batch_size=None) -> list[DecompositionStep]:
    """Replay one gradual (domain-wise) ascent phase and split each step's
    gradient into the unperturbed gradient plus the Hessian response to the
    accumulated perturbation; the leftover is the higher-order residual.

    Step j uses first = grad_j(theta), second = rho * H_j(theta) @ sum of the
    previous normalized gradients, and reports norms of both, of the actual
    gradient, and of actual - first - second.
    """
    theta = as_params(theta)
    rng = SeededRng(seed)
    batches = problem.sample_minibatches(rng, batch_size)
    order = rng.permutation(problem.n_domains)
    theta_tilde = theta.copy()
    accum = np.zeros_like(theta)
    steps = []
    for j, dom_idx in enumerate(order, start=1):
        batch = batches[dom_idx]
        first = np.asarray(batch.gradient(theta), dtype=np.float64)
        if j == 1:
            second = np.zeros_like(first)
        else:
            second = rho * np.asarray(
                batch.hessian_vector_product(theta, accum), dtype=np.float64
            )
        actual = np.asarray(batch.gradient(theta_tilde), dtype=np.float64)
        resid = actual - first - second
        sn = norm2(second)
        an = norm2(actual)
        steps.append(DecompositionStep(
            step=j,
            domain=int(dom_idx),
            first_norm=norm2(first),
            second_norm=sn,
            actual_norm=an,
            residual_norm=norm2(resid),
            residual_over_second=norm2(resid) / sn if sn > 0 else np.nan,
            residual_over_actual=norm2(resid) / an if an > 0 else np.nan,
        ))
        gn = norm2(actual)
        if rho > 0 and gn > 1e-12:
            theta_tilde = theta_tilde + (rho / gn) * actual
            accum = accum + actual / gn
    return steps
