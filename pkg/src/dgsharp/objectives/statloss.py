"""Finite-support statistical losses with certified bound constants.

A domain is a distribution p over m support points plus a pointwise loss
from a small registry (linear, squared, logistic). The declared constants
    M   >= both sup |loss| and the spread max-min of pointwise losses,
    G   >= Lipschitz constant of the pointwise loss in theta,
    L_x >= Lipschitz constant across support points (per unit ground metric),
are certified over a declared parameter box, which is what the worst-case
risk machinery needs. For linear losses the constants are exact; for the
curved families they are sound upper bounds from interval arithmetic.
"""

from __future__ import annotations

import numpy as np

from ..core import as_params
from .base import DomainObjective

__all__ = ["FiniteSupportStatLoss", "POINTWISE_FAMILIES"]

POINTWISE_FAMILIES = ("linear", "squared", "logistic")


def _linear_range_over_box(x, lo, hi):
    """Exact [min, max] of theta . x over the box [lo, hi]."""
    lo_term = np.where(x >= 0, lo * x, hi * x)
    hi_term = np.where(x >= 0, hi * x, lo * x)
    return float(np.sum(lo_term)), float(np.sum(hi_term))


def _sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


class FiniteSupportStatLoss(DomainObjective):
    """L(theta) = sum_j p_j * pointwise(theta, x_j)."""

    has_analytic_hvp = True

    def __init__(self, support, probs, family="linear", targets=None,
                 box_halfwidth=1.0, constants=None):
        X = np.asarray(support, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        self.support = X
        self.m, self.dim = X.shape
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (self.m,):
            raise ValueError("probs must match the number of support points")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        self.probs = p
        if family not in POINTWISE_FAMILIES:
            raise ValueError(f"unknown family {family!r}")
        self.family = family
        if family in ("squared", "logistic"):
            if targets is None:
                raise ValueError(f"{family} family needs per-point targets")
            t = np.asarray(targets, dtype=np.float64)
            if t.shape != (self.m,):
                raise ValueError("targets must match the number of support points")
            if family == "logistic" and not np.all(np.isin(t, (-1.0, 1.0))):
                raise ValueError("logistic targets must be in {-1, +1}")
            self.targets = t
        else:
            self.targets = None
        self.box_lo = -abs(float(box_halfwidth)) * np.ones(self.dim)
        self.box_hi = abs(float(box_halfwidth)) * np.ones(self.dim)
        if constants is None:
            constants = self.compute_constants()
        self.M = float(constants["M"])
        self.G = float(constants["G"])
        self.L_x = float(constants["L_x"])

    # pointwise values and derivatives --------------------------------------

    def pointwise_values(self, theta) -> np.ndarray:
        """Per-atom loss values at theta, shape (m,)."""
        theta = as_params(theta)
        v = self.support @ theta
        if self.family == "linear":
            return v
        if self.family == "squared":
            return (v - self.targets) ** 2
        return _softplus(-self.targets * v)

    def _pointwise_grad_scale(self, theta):
        """d loss / d (theta.x) per atom; gradient_j = scale_j * x_j."""
        v = self.support @ theta
        if self.family == "linear":
            return np.ones(self.m)
        if self.family == "squared":
            return 2.0 * (v - self.targets)
        return -self.targets * _sigmoid(-self.targets * v)

    def _pointwise_curv_scale(self, theta):
        """d^2 loss / d (theta.x)^2 per atom; hessian_j = scale_j * x_j x_j^T."""
        if self.family == "linear":
            return np.zeros(self.m)
        if self.family == "squared":
            return 2.0 * np.ones(self.m)
        v = self.support @ theta
        s = _sigmoid(-self.targets * v)
        return s * (1.0 - s)

    # objective contract -----------------------------------------------------

    def loss(self, theta):
        return float(self.probs @ self.pointwise_values(theta))

    def gradient(self, theta):
        theta = as_params(theta)
        scale = self._pointwise_grad_scale(theta)
        return (self.probs * scale) @ self.support

    def hessian_vector_product(self, theta, v):
        theta = as_params(theta)
        v = as_params(v, "v")
        curv = self._pointwise_curv_scale(theta)
        xv = self.support @ v
        return (self.probs * curv * xv) @ self.support

    def quadratic_data(self, theta):
        """Exact (gradient, Hessian); only the linear family is globally
        quadratic, the others would need a local expansion."""
        if self.family != "linear":
            raise TypeError(f"{self.family} family is not quadratic")
        theta = as_params(theta)
        return self.gradient(theta), np.zeros((self.dim, self.dim))

    def reweighted(self, new_probs) -> "FiniteSupportStatLoss":
        """Same loss family and support under a different distribution."""
        return FiniteSupportStatLoss(
            self.support, new_probs, family=self.family, targets=self.targets,
            box_halfwidth=self.box_hi[0],
            constants={"M": self.M, "G": self.G, "L_x": self.L_x},
        )

    def ground_metric(self) -> np.ndarray:
        """Euclidean distances between support points."""
        diff = self.support[:, None, :] - self.support[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    # certified constants ----------------------------------------------------

    def _atom_value_ranges(self):
        """Sound per-atom [min, max] of the pointwise loss over the box."""
        ranges = np.empty((self.m, 2))
        for j in range(self.m):
            vmin, vmax = _linear_range_over_box(self.support[j], self.box_lo, self.box_hi)
            if self.family == "linear":
                ranges[j] = (vmin, vmax)
            elif self.family == "squared":
                rmin, rmax = vmin - self.targets[j], vmax - self.targets[j]
                hi = max(rmin**2, rmax**2)
                lo = 0.0 if rmin <= 0.0 <= rmax else min(rmin**2, rmax**2)
                ranges[j] = (lo, hi)
            else:
                mmin = min(self.targets[j] * vmin, self.targets[j] * vmax)
                mmax = max(self.targets[j] * vmin, self.targets[j] * vmax)
                ranges[j] = (float(_softplus(-mmax)), float(_softplus(-mmin)))
        return ranges

    def compute_constants(self) -> dict:
        ranges = self._atom_value_ranges()
        sup_abs = float(np.max(np.abs(ranges)))
        xnorms = np.linalg.norm(self.support, axis=1)

        if self.family == "linear":
            # exact pairwise spread: max over box of theta.(x_j - x_k)
            width = 0.0
            lx = 0.0
            for j in range(self.m):
                for k in range(j + 1, self.m):
                    d_x = self.support[j] - self.support[k]
                    lo, hi = _linear_range_over_box(d_x, self.box_lo, self.box_hi)
                    spread = max(abs(lo), abs(hi))
                    width = max(width, spread)
                    dist = float(np.linalg.norm(d_x))
                    if dist > 0:
                        lx = max(lx, spread / dist)
            G = float(np.max(xnorms)) if self.m else 0.0
        else:
            # interval bound on the pairwise spread
            width = 0.0
            lx = 0.0
            for j in range(self.m):
                for k in range(j + 1, self.m):
                    spread = max(ranges[j, 1] - ranges[k, 0],
                                 ranges[k, 1] - ranges[j, 0])
                    width = max(width, spread)
                    dist = float(np.linalg.norm(self.support[j] - self.support[k]))
                    if dist > 0:
                        lx = max(lx, spread / dist)
            if self.family == "squared":
                G = 0.0
                for j in range(self.m):
                    vmin, vmax = _linear_range_over_box(
                        self.support[j], self.box_lo, self.box_hi
                    )
                    rmax = max(abs(vmin - self.targets[j]), abs(vmax - self.targets[j]))
                    G = max(G, 2.0 * rmax * xnorms[j])
            else:
                G = float(np.max(xnorms)) if self.m else 0.0  # |sigmoid| < 1

        return {"M": max(sup_abs, width), "G": G, "L_x": lx}
