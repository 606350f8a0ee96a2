"""Quadratic and linear analytic domains, and small ensembles of them.

A quadratic domain is L(theta) = c + b.(theta - anchor)
+ 0.5 (theta - anchor)^T H (theta - anchor) with symmetric H, so gradients,
HVPs and eigenvalues are exact. Used as theory instances and test fixtures.
"""

from __future__ import annotations

import numpy as np

from ..core import as_params
from .base import DomainObjective, MultiDomainProblem

__all__ = ["QuadraticObjective", "LinearObjective", "QuadraticDomainEnsemble"]


class QuadraticObjective(DomainObjective):
    has_analytic_hvp = True
    is_quadratic = True

    def __init__(self, hessian, grad_at_anchor=None, anchor=None, offset=0.0):
        H = np.asarray(hessian, dtype=np.float64)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("hessian must be square")
        if not np.allclose(H, H.T, atol=1e-12):
            raise ValueError("hessian must be symmetric")
        self.H = 0.5 * (H + H.T)
        self.dim = H.shape[0]
        self.b = (
            np.zeros(self.dim)
            if grad_at_anchor is None
            else as_params(grad_at_anchor, "grad_at_anchor")
        )
        self.anchor = (
            np.zeros(self.dim) if anchor is None else as_params(anchor, "anchor")
        )
        self.offset = float(offset)

    def loss(self, theta):
        u = as_params(theta) - self.anchor
        return self.offset + float(self.b @ u) + 0.5 * float(u @ (self.H @ u))

    def gradient(self, theta):
        u = as_params(theta) - self.anchor
        return self.b + self.H @ u

    def hessian_vector_product(self, theta, v):
        return self.H @ np.asarray(v, dtype=np.float64)

    def quadratic_data(self, theta):
        """Exact (gradient, Hessian) at theta."""
        return self.gradient(theta), self.H


class LinearObjective(QuadraticObjective):
    """L(theta) = c^T theta (zero Hessian)."""

    def __init__(self, c):
        c = as_params(c, "c")
        super().__init__(np.zeros((c.size, c.size)), grad_at_anchor=c)


class QuadraticDomainEnsemble(MultiDomainProblem):
    """S quadratic domains sharing one anchor.

    With force_zero_total_gradient the per-domain gradients at the anchor
    must cancel exactly, making the anchor a critical point of the total loss.
    """

    def __init__(self, hessians, grads_at_anchor, anchor=None, offsets=None,
                 force_zero_total_gradient=False):
        hessians = [np.asarray(H, dtype=np.float64) for H in hessians]
        grads = [as_params(b, "grad_at_anchor") for b in grads_at_anchor]
        if len(hessians) != len(grads):
            raise ValueError("need one gradient per hessian")
        if offsets is None:
            offsets = [0.0] * len(hessians)
        if force_zero_total_gradient:
            total = np.sum(grads, axis=0)
            if float(np.linalg.norm(total)) > 1e-12:
                raise ValueError(
                    f"anchor gradients do not cancel: |sum| = {np.linalg.norm(total):g}"
                )
        self.force_zero_total_gradient = bool(force_zero_total_gradient)
        domains = [
            QuadraticObjective(H, b, anchor=anchor, offset=c)
            for H, b, c in zip(hessians, grads, offsets)
        ]
        super().__init__(domains)
        self.anchor = domains[0].anchor

    def total_hessian(self) -> np.ndarray:
        return np.mean([d.H for d in self.domains], axis=0)

    def total_hessian_eigenvalues(self) -> np.ndarray:
        """Dense eigenvalue oracle, exact for the small dimensions used here."""
        return np.linalg.eigvalsh(self.total_hessian())
