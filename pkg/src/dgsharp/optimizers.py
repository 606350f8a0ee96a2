"""ERM, SAM and DGSAM steps over a MultiDomainProblem.

Gradient-evaluation accounting is exact: per iteration ERM spends S
evaluations, SAM 2S (ascent and descent gradient per domain) and DGSAM S+1
(one gradient per domain along the gradual perturbation path plus one
re-evaluation of the first domain at the final perturbed point, all reused
in the descent update).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import NonFiniteError, SeededRng, as_params, mean_fixed_order, norm2
from .objectives.base import MultiDomainProblem

__all__ = [
    "OptimizerConfig",
    "OptimizerState",
    "RunRecord",
    "DivergenceError",
    "erm_step",
    "sam_step",
    "dgsam_step",
    "make_state",
    "run",
    "GRAD_EVALS_PER_STEP",
]

KINDS = ("erm", "sam", "dgsam")

GRAD_EVALS_PER_STEP = {
    "erm": lambda s: s,
    "sam": lambda s: 2 * s,
    "dgsam": lambda s: s + 1,
}


@dataclass
class OptimizerConfig:
    kind: str = "erm"
    learning_rate: float = 0.1
    perturbation_radius: float = 0.0
    batch_size: int | None = None
    max_iterations: int = 100
    seed: int = 0
    zero_gradient_tolerance: float = 1e-12
    record_every: int = 1  # 0 disables trajectory recording
    record_timing: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.perturbation_radius < 0:
            raise ValueError("perturbation_radius must be >= 0")


@dataclass
class OptimizerState:
    theta: np.ndarray
    iteration: int = 0
    rng: SeededRng = None
    grad_evals: int = 0


class DivergenceError(RuntimeError):
    """Loss went non-finite; carries the last finite state."""

    def __init__(self, message, state: OptimizerState):
        super().__init__(message)
        self.state = state


def make_state(theta0, config: OptimizerConfig) -> OptimizerState:
    return OptimizerState(theta=as_params(theta0).copy(), rng=SeededRng(config.seed))


def _domain_grad(batch, theta, index):
    g = np.asarray(batch.gradient(theta), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"non-finite gradient in domain {index}")
    return g


def erm_step(problem: MultiDomainProblem, state: OptimizerState,
             config: OptimizerConfig) -> OptimizerState:
    batches = problem.sample_minibatches(state.rng, config.batch_size)
    grads = [_domain_grad(b, state.theta, i) for i, b in enumerate(batches)]
    state.grad_evals += len(batches)
    state.theta = state.theta - config.learning_rate * mean_fixed_order(grads)
    state.iteration += 1
    return state


def sam_step(problem: MultiDomainProblem, state: OptimizerState,
             config: OptimizerConfig) -> OptimizerState:
    batches = problem.sample_minibatches(state.rng, config.batch_size)
    ascent = [_domain_grad(b, state.theta, i) for i, b in enumerate(batches)]
    state.grad_evals += len(batches)
    g = mean_fixed_order(ascent)
    gn = norm2(g)
    if config.perturbation_radius == 0.0 or gn <= config.zero_gradient_tolerance:
        perturbed = state.theta
    else:
        perturbed = state.theta + (config.perturbation_radius / gn) * g
    descent = [_domain_grad(b, perturbed, i) for i, b in enumerate(batches)]
    state.grad_evals += len(batches)
    state.theta = state.theta - config.learning_rate * mean_fixed_order(descent)
    state.iteration += 1
    return state


def dgsam_step(problem: MultiDomainProblem, state: OptimizerState,
               config: OptimizerConfig) -> OptimizerState:
    s = problem.n_domains
    batches = problem.sample_minibatches(state.rng, config.batch_size)
    order = state.rng.permutation(s)
    theta_tilde = state.theta
    grads = []
    for j in range(s):
        g = _domain_grad(batches[order[j]], theta_tilde, int(order[j]))
        grads.append(g)
        gn = norm2(g)
        if config.perturbation_radius > 0.0 and gn > config.zero_gradient_tolerance:
            theta_tilde = theta_tilde + (config.perturbation_radius / gn) * g
    # corrective re-evaluation of the first-perturbed domain, same minibatch
    grads.append(_domain_grad(batches[order[0]], theta_tilde, int(order[0])))
    state.grad_evals += s + 1
    total = grads[0].copy()
    for g in grads[1:]:
        total += g
    state.theta = state.theta - config.learning_rate * (s / (s + 1.0)) * total
    state.iteration += 1
    return state


_STEPS = {"erm": erm_step, "sam": sam_step, "dgsam": dgsam_step}


@dataclass
class RunRecord:
    config: OptimizerConfig
    final_theta: np.ndarray = None
    iterations: int = 0
    grad_evals: int = 0
    history: list = field(default_factory=list)  # dict rows per recorded iter
    thetas: list = field(default_factory=list)

    def history_columns(self, n_domains):
        cols = ["iter", "loss_total"]
        cols += [f"loss_domain_{i + 1}" for i in range(n_domains)]
        cols += ["grad_norm", "grad_evals", "wall_ms"]
        return cols


def run(problem: MultiDomainProblem, config: OptimizerConfig, theta0,
        grad_norm_tol: float | None = None) -> RunRecord:
    """Iterate the configured step until max_iterations or the full-batch
    total-gradient norm drops below grad_norm_tol.

    Monitoring losses/gradients for the trajectory is bookkeeping and does
    not touch the grad_evals cost counter.
    """
    step = _STEPS[config.kind]
    state = make_state(theta0, config)
    record = RunRecord(config=config)
    stride = config.record_every

    def monitor():
        losses = problem.domain_losses(state.theta)
        total = mean_fixed_order(losses)
        gnorm = norm2(problem.total_gradient(state.theta))
        return losses, total, gnorm

    last_finite = state.theta.copy()
    for t in range(config.max_iterations):
        t0 = time.perf_counter() if config.record_timing else 0.0
        try:
            step(problem, state, config)
            if not np.all(np.isfinite(state.theta)):
                raise NonFiniteError("non-finite iterate")
            wall_ms = (time.perf_counter() - t0) * 1e3 \
                if config.record_timing else 0.0
            recording = stride > 0 and (state.iteration % stride == 0
                                        or state.iteration == config.max_iterations)
            gnorm = None
            if recording or grad_norm_tol is not None:
                losses, total, gnorm = monitor()
                if recording:
                    row = {"iter": state.iteration, "loss_total": total,
                           "grad_norm": gnorm, "grad_evals": state.grad_evals,
                           "wall_ms": wall_ms}
                    for i, li in enumerate(losses):
                        row[f"loss_domain_{i + 1}"] = li
                    record.history.append(row)
                    record.thetas.append(state.theta.copy())
        except NonFiniteError as exc:
            raise DivergenceError(
                f"diverged at iteration {t}: {exc}",
                OptimizerState(last_finite, t, state.rng, state.grad_evals),
            ) from exc
        last_finite = state.theta.copy()
        if grad_norm_tol is not None and gnorm is not None and gnorm <= grad_norm_tol:
            break
    record.final_theta = state.theta.copy()
    record.iterations = state.iteration
    record.grad_evals = state.grad_evals
    return record
