"""Experiment configuration: JSON with strict key checking (typos are hard
errors), plus builders that turn the problem/optimizer sections into live
objects."""

from __future__ import annotations

import json

import numpy as np

from ..core import SeededRng
from ..objectives import (
    FiniteSupportStatLoss,
    MultiDomainProblem,
    QuadraticDomainEnsemble,
    build_fake_flat,
    init_mlp_params,
    make_shifted_blob_dataset,
    mlp_problem_from_dataset,
)
from ..optimizers import OptimizerConfig
from ..sharpness import SharpnessEstimatorConfig
from ..spectral import SpectrumConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


def _check_keys(section: dict, allowed, context: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {context}")


_TOP_KEYS = {
    "problem", "optimizers", "seeds", "theta0", "output_dir", "record_every",
    "record_timing", "sharpness", "spectrum", "landscape", "perturb_trace",
    "cost", "verify",
}

_PROBLEM_KEYS = {"family", "params"}
_FAKE_FLAT_KEYS = {"A1", "A2", "sigma1", "sigma2", "sigma_w", "k", "c1", "c2"}
_MLP_KEYS = {"n_domains", "n_per_domain", "separation", "noise",
             "rotation_degrees", "shift_scale", "data_seed", "layer_sizes",
             "holdout_last"}
_QUAD_KEYS = {"diagonals", "grads_at_anchor", "anchor"}
_FINITE_KEYS = {"domains", "box_halfwidth"}
_FINITE_DOMAIN_KEYS = {"support", "probs", "family", "targets", "constants"}
_OPT_KEYS = {"kind", "learning_rate", "perturbation_radius", "batch_size",
             "max_iterations"}
_THETA0_KEYS = {"kind", "low", "high", "values", "scale", "point"}
_SHARP_KEYS = {"radius", "method", "ascent_steps", "ascent_step_size",
               "restarts", "samples"}
_SPECTRUM_KEYS = {"n_probes", "lanczos_steps", "probe_kind", "smoothing_width",
                  "grid_points"}
_LANDSCAPE_KEYS = {"half_width", "resolution", "center", "dir1", "dir2"}
_TRACE_KEYS = {"radius", "start", "sweeps"}
_COST_KEYS = {"warmup", "timed", "kinds", "batch_size"}
_VERIFY_KEYS = {"bound_instances", "max_domains", "max_support", "divergences",
                "reversal_rho_ladder", "violation_thetas", "stationarity_epsilons",
                "stationarity_cap"}


class ExperimentConfig:
    def __init__(self, raw: dict, path: str | None = None):
        if not isinstance(raw, dict):
            raise ConfigError("top level must be an object")
        _check_keys(raw, _TOP_KEYS, "top level")
        self.raw = raw
        self.path = path
        self.problem_section = raw.get("problem", {"family": "fake_flat", "params": {}})
        _check_keys(self.problem_section, _PROBLEM_KEYS, "problem")
        self.family = self.problem_section.get("family", "fake_flat")
        params = self.problem_section.get("params", {})
        if self.family == "fake_flat":
            _check_keys(params, _FAKE_FLAT_KEYS, "problem.params")
        elif self.family == "mlp_blobs":
            _check_keys(params, _MLP_KEYS, "problem.params")
        elif self.family == "quadratic_ensemble":
            _check_keys(params, _QUAD_KEYS, "problem.params")
        elif self.family == "finite_support":
            _check_keys(params, _FINITE_KEYS, "problem.params")
            for i, dom in enumerate(params.get("domains", [])):
                _check_keys(dom, _FINITE_DOMAIN_KEYS, f"problem.params.domains[{i}]")
        else:
            raise ConfigError(f"unknown problem family {self.family!r}")
        self.problem_params = params

        self.optimizer_specs = raw.get("optimizers", [])
        for i, spec in enumerate(self.optimizer_specs):
            _check_keys(spec, _OPT_KEYS, f"optimizers[{i}]")
        self.seeds = [int(s) for s in raw.get("seeds", [0])]
        self.theta0_spec = raw.get("theta0", {"kind": "zeros"})
        _check_keys(self.theta0_spec, _THETA0_KEYS, "theta0")
        self.output_dir = raw.get("output_dir", "out")
        self.record_every = int(raw.get("record_every", 1))
        self.record_timing = bool(raw.get("record_timing", False))
        for name, keys in (("sharpness", _SHARP_KEYS), ("spectrum", _SPECTRUM_KEYS),
                           ("landscape", _LANDSCAPE_KEYS),
                           ("perturb_trace", _TRACE_KEYS), ("cost", _COST_KEYS),
                           ("verify", _VERIFY_KEYS)):
            if name in raw:
                _check_keys(raw[name], keys, name)

    # builders ---------------------------------------------------------------

    def build_problem(self) -> MultiDomainProblem:
        p = self.problem_params
        if self.family == "fake_flat":
            return build_fake_flat(**p)
        if self.family == "mlp_blobs":
            layer_sizes = tuple(p.get("layer_sizes", (2, 16, 16, 2)))
            holdout = bool(p.get("holdout_last", False))
            ds_kw = {k: v for k, v in p.items()
                     if k not in ("layer_sizes", "holdout_last", "data_seed")}
            ds = make_shifted_blob_dataset(seed=p.get("data_seed", 0), **ds_kw)
            return mlp_problem_from_dataset(ds, layer_sizes=layer_sizes,
                                            holdout_last=holdout)
        if self.family == "quadratic_ensemble":
            diags = [np.asarray(d, dtype=float) for d in p["diagonals"]]
            hessians = [np.diag(d) for d in diags]
            grads = p.get("grads_at_anchor")
            if grads is None:
                grads = [np.zeros(len(diags[0])) for _ in diags]
            return QuadraticDomainEnsemble(hessians, grads,
                                           anchor=p.get("anchor"))
        if self.family == "finite_support":
            doms = []
            for spec in p["domains"]:
                doms.append(FiniteSupportStatLoss(
                    np.asarray(spec["support"], dtype=float),
                    np.asarray(spec["probs"], dtype=float),
                    family=spec.get("family", "linear"),
                    targets=spec.get("targets"),
                    box_halfwidth=p.get("box_halfwidth", 1.0),
                    constants=spec.get("constants"),
                ))
            return MultiDomainProblem(doms)
        raise ConfigError(f"unknown problem family {self.family!r}")

    def resolve_point(self, spec, problem) -> np.ndarray:
        """A named or explicit parameter point ('r1'/'r2' for the fake-flat
        wells, else a vector)."""
        if isinstance(spec, str):
            if spec in ("r1", "r2") and hasattr(problem, spec):
                return np.asarray(getattr(problem, spec), dtype=float)
            raise ConfigError(f"unknown named point {spec!r} for this problem")
        return np.asarray(spec, dtype=float)

    def initial_point(self, problem, rng: SeededRng) -> np.ndarray:
        spec = self.theta0_spec
        kind = spec.get("kind", "zeros")
        if kind == "zeros":
            return np.zeros(problem.dim)
        if kind == "explicit":
            theta = np.asarray(spec["values"], dtype=float)
            if theta.size != problem.dim:
                raise ConfigError("theta0.values has the wrong dimension")
            return theta
        if kind == "uniform_box":
            lo = float(spec.get("low", -1.0))
            hi = float(spec.get("high", 1.0))
            return lo + (hi - lo) * rng.uniform(problem.dim)
        if kind == "mlp_init":
            layer_sizes = tuple(self.problem_params.get("layer_sizes",
                                                        (2, 16, 16, 2)))
            return init_mlp_params(rng, layer_sizes,
                                   scale=float(spec.get("scale", 1.0)))
        if kind == "named":
            return self.resolve_point(spec["point"], problem)
        raise ConfigError(f"unknown theta0 kind {kind!r}")

    def optimizer_configs(self, seed: int) -> list[OptimizerConfig]:
        out = []
        for spec in self.optimizer_specs:
            out.append(OptimizerConfig(
                kind=spec.get("kind", "erm"),
                learning_rate=float(spec.get("learning_rate", 0.1)),
                perturbation_radius=float(spec.get("perturbation_radius", 0.0)),
                batch_size=spec.get("batch_size"),
                max_iterations=int(spec.get("max_iterations", 100)),
                seed=seed,
                record_every=self.record_every,
                record_timing=self.record_timing,
            ))
        return out

    def sharpness_config(self, seed=0) -> SharpnessEstimatorConfig:
        s = dict(self.raw.get("sharpness", {}))
        return SharpnessEstimatorConfig(
            radius=float(s.get("radius", 0.05)),
            method=s.get("method", "grad_ascent"),
            ascent_steps=int(s.get("ascent_steps", 20)),
            ascent_step_size=s.get("ascent_step_size"),
            restarts=int(s.get("restarts", 8)),
            samples=int(s.get("samples", 4096)),
            seed=seed,
        )

    def spectrum_config(self, seed=0) -> SpectrumConfig:
        s = dict(self.raw.get("spectrum", {}))
        return SpectrumConfig(
            n_probes=int(s.get("n_probes", 16)),
            lanczos_steps=int(s.get("lanczos_steps", 64)),
            probe_kind=s.get("probe_kind", "rademacher"),
            smoothing_width=s.get("smoothing_width"),
            grid_points=int(s.get("grid_points", 512)),
            seed=seed,
        )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return ExperimentConfig(raw, path=path)
