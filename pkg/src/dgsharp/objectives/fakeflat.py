"""Two-domain 2-D landscape whose sharp per-domain valleys cancel in the sum.

The shared well potential is
    V(theta) = -A1 exp(-|theta-c1|^2 / (2 s1^2)) - A2 exp(-|theta-c2|^2 / (2 s2^2))
and the antisymmetric slope term is
    w(theta) = (theta_x - c2_x) exp(-|theta-c2|^2 / (2 sw^2)).
The two domains are L_1 = V - k w and L_2 = V + k w, so L_1 + L_2 = 2 V
identically: the total loss is flat wherever V is, while each domain keeps a
slope of magnitude ~k near c2. The well at c1 is the genuinely flat region
(R1); the well at c2 only looks flat in the total (R2).
"""

from __future__ import annotations

import numpy as np

from ..core import as_params, norm2
from .base import DomainObjective, MultiDomainProblem

__all__ = ["FakeFlatDomain", "FakeFlatLandscape", "build_fake_flat"]


class _Params:
    def __init__(self, A1, A2, sigma1, sigma2, sigma_w, k, c1, c2):
        for name, val in [("A1", A1), ("A2", A2), ("sigma1", sigma1),
                          ("sigma2", sigma2), ("sigma_w", sigma_w), ("k", k)]:
            if val <= 0:
                raise ValueError(f"{name} must be > 0")
        self.A1, self.A2 = float(A1), float(A2)
        self.sigma1, self.sigma2 = float(sigma1), float(sigma2)
        self.sigma_w, self.k = float(sigma_w), float(k)
        self.c1 = as_params(c1, "c1")
        self.c2 = as_params(c2, "c2")
        if self.c1.size != 2 or self.c2.size != 2:
            raise ValueError("centers must be 2-vectors")
        if np.array_equal(self.c1, self.c2):
            raise ValueError("c1 and c2 must differ")

    def as_dict(self):
        return {
            "A1": self.A1, "A2": self.A2, "sigma1": self.sigma1,
            "sigma2": self.sigma2, "sigma_w": self.sigma_w, "k": self.k,
            "c1": self.c1.tolist(), "c2": self.c2.tolist(),
        }


def _well_value(theta, c, A, sigma):
    u = theta - c
    return -A * np.exp(-(u @ u) / (2.0 * sigma**2))

def _well_grad(theta, c, A, sigma):
    u = theta - c
    e = np.exp(-(u @ u) / (2.0 * sigma**2))
    return (A / sigma**2) * e * u

def _well_hvp(theta, c, A, sigma, v):
    u = theta - c
    s2 = sigma**2
    e = np.exp(-(u @ u) / (2.0 * s2))
    return (A / s2) * e * (v - (u @ v) / s2 * u)


def _w_value(theta, c2, sw):
    u = theta - c2
    return u[0] * np.exp(-(u @ u) / (2.0 * sw**2))

def _w_grad(theta, c2, sw):
    u = theta - c2
    e = np.exp(-(u @ u) / (2.0 * sw**2))
    g = -(u[0] / sw**2) * e * u
    g[0] += e
    return g

def _w_hvp(theta, c2, sw, v):
    u = theta - c2
    s2 = sw**2
    e = np.exp(-(u @ u) / (2.0 * s2))
    uv = u @ v
    out = (-(v[0] / s2)) * u - (u[0] / s2) * v + (u[0] * uv / s2**2) * u
    out[0] += -uv / s2
    return e * out


class FakeFlatDomain(DomainObjective):
    """One of the two domains: V + sign * k * w."""

    dim = 2
    has_analytic_hvp = True

    def __init__(self, params: _Params, sign: int):
        assert sign in (-1, 1)
        self.p = params
        self.sign = sign

    def loss(self, theta):
        theta = as_params(theta)
        p = self.p
        return float(
            _well_value(theta, p.c1, p.A1, p.sigma1)
            + _well_value(theta, p.c2, p.A2, p.sigma2)
            + self.sign * p.k * _w_value(theta, p.c2, p.sigma_w)
        )

    def loss_batch(self, thetas):
        """Vectorized loss over an (n, 2) array of points."""
        thetas = np.asarray(thetas, dtype=np.float64)
        p = self.p
        u1 = thetas - p.c1
        u2 = thetas - p.c2
        r1 = np.einsum("ij,ij->i", u1, u1)
        r2 = np.einsum("ij,ij->i", u2, u2)
        v = -p.A1 * np.exp(-r1 / (2 * p.sigma1**2)) - p.A2 * np.exp(
            -r2 / (2 * p.sigma2**2)
        )
        w = u2[:, 0] * np.exp(-r2 / (2 * p.sigma_w**2))
        return v + self.sign * p.k * w

    def gradient(self, theta):
        theta = as_params(theta)
        p = self.p
        return (
            _well_grad(theta, p.c1, p.A1, p.sigma1)
            + _well_grad(theta, p.c2, p.A2, p.sigma2)
            + self.sign * p.k * _w_grad(theta, p.c2, p.sigma_w)
        )

    def hessian_vector_product(self, theta, v):
        theta = as_params(theta)
        v = as_params(v, "v")
        p = self.p
        return (
            _well_hvp(theta, p.c1, p.A1, p.sigma1, v)
            + _well_hvp(theta, p.c2, p.A2, p.sigma2, v)
            + self.sign * p.k * _w_hvp(theta, p.c2, p.sigma_w, v)
        )


class FakeFlatLandscape(MultiDomainProblem):
    """S=2 problem with refined critical points r1 (flat) and r2 (fake flat)."""

    def __init__(self, params: _Params, r1, r2):
        self.params = params
        self.r1 = as_params(r1, "r1")
        self.r2 = as_params(r2, "r2")
        super().__init__([FakeFlatDomain(params, -1), FakeFlatDomain(params, +1)])

    def shared_potential(self, theta):
        """V(theta); equals the total loss at every point."""
        theta = as_params(theta)
        p = self.params
        return float(
            _well_value(theta, p.c1, p.A1, p.sigma1)
            + _well_value(theta, p.c2, p.A2, p.sigma2)
        )

    def slope_term(self, theta):
        """w(theta)."""
        theta = as_params(theta)
        return float(_w_value(theta, self.params.c2, self.params.sigma_w))

    def potential_gradient(self, theta):
        theta = as_params(theta)
        p = self.params
        return _well_grad(theta, p.c1, p.A1, p.sigma1) + _well_grad(
            theta, p.c2, p.A2, p.sigma2
        )


def _refine_to_critical_point(start, grad_fn, hvp_fn, tol, max_iter):
    """Newton with gradient-descent fallback; returns a point with
    |grad| <= tol or raises."""
    theta = as_params(start).copy()
    for _ in range(max_iter):
        g = grad_fn(theta)
        gn = norm2(g)
        if gn <= tol:
            return theta
        H = np.column_stack(
            [hvp_fn(theta, np.eye(theta.size)[j]) for j in range(theta.size)]
        )
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = None
        if step is not None and norm2(grad_fn(theta - step)) < gn:
            theta = theta - step
            continue
        # damped descent fallback
        lr = 0.1
        while lr > 1e-12 and norm2(grad_fn(theta - lr * g)) >= gn:
            lr *= 0.5
        if lr <= 1e-12:
            break
        theta = theta - lr * g
    g = grad_fn(theta)
    if norm2(g) <= tol:
        return theta
    raise RuntimeError(
        f"critical-point refinement stalled at |grad| = {norm2(g):.3e} (tol {tol:g})"
    )


def build_fake_flat(A1=1.0, A2=1.0, sigma1=0.8, sigma2=0.8, sigma_w=0.4, k=5.0,
                    c1=(-2.0, 0.0), c2=(2.0, 0.0),
                    refine_tol=1e-8, refine_budget=500) -> FakeFlatLandscape:
    """Construct the landscape and refine both wells of V to critical points."""
    params = _Params(A1, A2, sigma1, sigma2, sigma_w, k, c1, c2)

    def vgrad(theta):
        return _well_grad(theta, params.c1, params.A1, params.sigma1) + _well_grad(
            theta, params.c2, params.A2, params.sigma2
        )

    def vhvp(theta, v):
        return _well_hvp(theta, params.c1, params.A1, params.sigma1, v) + _well_hvp(
            theta, params.c2, params.A2, params.sigma2, v
        )

    r1 = _refine_to_critical_point(params.c1, vgrad, vhvp, refine_tol, refine_budget)
    r2 = _refine_to_critical_point(params.c2, vgrad, vhvp, refine_tol, refine_budget)
    return FakeFlatLandscape(params, r1, r2)
