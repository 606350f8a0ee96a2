"""Multi-domain differentiable-objective contract.

A DomainObjective is one source domain's loss surface; a MultiDomainProblem
is an ordered collection of S of them sharing a parameter space, with the
total loss defined as their arithmetic mean.
"""

from __future__ import annotations

import numpy as np

from ..core import (
    NonFiniteError,
    SeededRng,
    as_params,
    finite_diff_hvp,
    mean_fixed_order,
)

__all__ = [
    "DomainObjective",
    "MultiDomainProblem",
    "TotalObjective",
    "total_loss",
    "total_gradient",
    "sample_domain_minibatch",
]


class DomainObjective:
    """Base contract: loss(theta), gradient(theta), optional HVP and
    minibatch sampling.

    `deterministic` is True for analytic objectives that have no data to
    subsample; their sample_minibatch returns the objective itself.
    """

    dim: int
    deterministic: bool = True
    has_analytic_hvp: bool = False

    def loss(self, theta: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian_vector_product(self, theta: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Fallback: finite differences of the analytic gradient."""
        return finite_diff_hvp(self.gradient, theta, v)

    def sample_minibatch(self, rng: SeededRng, batch_size: int) -> "DomainObjective":
        """Analytic objectives ignore batch_size and return themselves."""
        return self


class TotalObjective(DomainObjective):
    """The averaged total loss of a problem, viewed as a single objective."""

    def __init__(self, problem: "MultiDomainProblem"):
        self.problem = problem
        self.dim = problem.dim
        self.has_analytic_hvp = all(d.has_analytic_hvp for d in problem.domains)

    def loss(self, theta):
        return self.problem.total_loss(theta)

    def gradient(self, theta):
        return self.problem.total_gradient(theta)

    def hessian_vector_product(self, theta, v):
        return mean_fixed_order(
            [d.hessian_vector_product(theta, v) for d in self.problem.domains]
        )

    def quadratic_data(self, theta):
        """Exact (gradient, Hessian) when every domain can provide them."""
        pairs = [d.quadratic_data(theta) for d in self.problem.domains]
        g = mean_fixed_order([p[0] for p in pairs])
        H = mean_fixed_order([p[1] for p in pairs])
        return g, H


class MultiDomainProblem:
    """Ordered list of S >= 1 domains over one parameter space.

    An optional `unseen` domain is excluded from the list used for training
    and evaluated only in reports.
    """

    def __init__(self, domains, unseen: DomainObjective | None = None):
        domains = list(domains)
        if not domains:
            raise ValueError("need at least one domain")
        dims = {d.dim for d in domains}
        if len(dims) != 1:
            raise ValueError(f"domains disagree on dimension: {sorted(dims)}")
        self.domains = domains
        self.dim = domains[0].dim
        self.unseen = unseen
        if unseen is not None and unseen.dim != self.dim:
            raise ValueError("unseen domain dimension mismatch")

    @property
    def n_domains(self) -> int:
        return len(self.domains)

    def domain_losses(self, theta) -> list[float]:
        theta = as_params(theta)
        out = []
        for i, d in enumerate(self.domains):
            val = float(d.loss(theta))
            if not np.isfinite(val):
                raise NonFiniteError(f"non-finite loss in domain {i}")
            out.append(val)
        return out

    def domain_gradients(self, theta) -> list[np.ndarray]:
        theta = as_params(theta)
        out = []
        for i, d in enumerate(self.domains):
            g = np.asarray(d.gradient(theta), dtype=np.float64)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient in domain {i}")
            out.append(g)
        return out

    def total_loss(self, theta) -> float:
        return mean_fixed_order(self.domain_losses(theta))

    def total_gradient(self, theta) -> np.ndarray:
        return mean_fixed_order(self.domain_gradients(theta))

    def total_objective(self) -> TotalObjective:
        return TotalObjective(self)

    def sample_minibatches(self, rng: SeededRng, batch_size) -> list[DomainObjective]:
        """One minibatch per domain, equal batch size across domains."""
        return [sample_domain_minibatch(d, rng, batch_size) for d in self.domains]


def total_loss(problem: MultiDomainProblem, theta) -> float:
    return problem.total_loss(theta)


def total_gradient(problem: MultiDomainProblem, theta) -> np.ndarray:
    return problem.total_gradient(theta)


def sample_domain_minibatch(objective: DomainObjective, rng: SeededRng, batch_size):
    """Uniform without-replacement subset for dataset-backed objectives;
    analytic objectives come back unchanged (full batch)."""
    if batch_size is None:
        return objective
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return objective.sample_minibatch(rng, int(batch_size))
