"""Implementations behind the CLI subcommands. Each returns a process exit
code: 0 success, 2 user/config error, 3 numerical failure."""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..core import SeededRng, norm2
from ..optimizers import (
    GRAD_EVALS_PER_STEP,
    DivergenceError,
    OptimizerConfig,
    _STEPS,
    make_state,
    run,
)
from ..robustrisk import (
    ConvergenceBudget,
    build_sharpness_reversal_pair,
    check_individual_sharpness_bound,
    convergence_constants,
    empirical_stationarity_test,
    er_constants_zero_anchor,
    global_violation_report,
    random_bound_instance,
)
from ..sharpness import landscape_grid, sharpness_report
from ..spectral import lanczos_spectrum
from .config import ConfigError, ExperimentConfig
from .manifest import RunManifest

__all__ = [
    "cmd_run", "cmd_perturb_trace", "cmd_sharpness_table", "cmd_cost",
    "cmd_landscape", "cmd_spectrum", "cmd_verify_theory",
]

ZERO_GRAD_TOL = 1e-12


def _write_csv(manifest: RunManifest, name: str, header, rows):
    full = manifest.path(name)
    with open(full, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating))
                        else x for x in row])
    manifest.register(name)
    return full


def _history_rows(record, n_domains):
    cols = record.history_columns(n_domains)
    for row in record.history:
        yield [row[c] if c in ("iter", "grad_evals") else float(row[c])
               for c in cols]


def cmd_run(config: ExperimentConfig, out_dir: str, threads: int = 1) -> int:
    problem = config.build_problem()
    manifest = RunManifest("run", config.raw, out_dir)
    if not config.optimizer_specs:
        raise ConfigError("run needs at least one optimizer spec")

    tasks = []
    for spec_idx in range(len(config.optimizer_specs)):
        for seed in config.seeds:
            tasks.append((spec_idx, seed))

    def execute(task):
        spec_idx, seed = task
        root = SeededRng(seed)
        theta0 = config.initial_point(problem, root)
        opt_seed = int(root.integers(0, 2**63))
        cfg = config.optimizer_configs(opt_seed)[spec_idx]
        return run(problem, cfg, theta0)

    results = {}
    diverged = None
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {t: pool.submit(execute, t) for t in tasks}
        for t, fut in futures.items():
            try:
                results[t] = fut.result()
            except DivergenceError as exc:
                diverged = (t, exc)
    else:
        for t in tasks:
            try:
                results[t] = execute(t)
            except DivergenceError as exc:
                diverged = (t, exc)
                break

    total_evals = 0
    for (spec_idx, seed) in tasks:
        if (spec_idx, seed) not in results:
            continue
        record = results[(spec_idx, seed)]
        kind = record.config.kind
        stem = f"run_{kind}_{spec_idx}_seed{seed}"
        _write_csv(manifest, stem + ".csv",
                   record.history_columns(problem.n_domains),
                   _history_rows(record, problem.n_domains))
        manifest.write_json(stem + ".json", {
            "kind": kind,
            "seed": seed,
            "iterations": record.iterations,
            "grad_evals": record.grad_evals,
            "final_theta": [float(x) for x in record.final_theta],
            "final_loss_total": float(problem.total_loss(record.final_theta)),
        })
        total_evals += record.grad_evals
    manifest.extra["grad_evals_total"] = total_evals
    manifest.extra["n_runs"] = len(results)
    manifest.finalize()
    if diverged is not None:
        (spec_idx, seed), exc = diverged
        print(f"run diverged (optimizer {spec_idx}, seed {seed}): {exc}")
        return 3
    return 0


def _trace_rows(problem, theta0, perturbations, losses_fn):
    rows = [[0] + losses_fn(theta0)]
    theta = theta0.copy()
    for i, eps in enumerate(perturbations, start=1):
        theta = theta + eps
        rows.append([i] + losses_fn(theta))
    return rows, theta


def cmd_perturb_trace(config: ExperimentConfig, out_dir: str, seed=None) -> int:
    problem = config.build_problem()
    section = dict(config.raw.get("perturb_trace", {}))
    rho = float(section.get("radius", 0.05))
    sweeps = int(section.get("sweeps", 1))
    start_spec = section.get("start", "r2" if hasattr(problem, "r2") else None)
    if start_spec is None:
        raise ConfigError("perturb_trace.start is required for this problem")
    theta0 = config.resolve_point(start_spec, problem)
    seed = config.seeds[0] if seed is None else seed
    rng = SeededRng(seed)
    s = problem.n_domains
    manifest = RunManifest("perturb-trace", config.raw, out_dir)

    def losses(theta):
        return [float(d.loss(theta)) for d in problem.domains]

    header = ["step"] + [f"loss_domain_{i + 1}" for i in range(s)]

    # strategy (a): every perturbation follows the total-loss gradient
    theta = theta0.copy()
    rows_total = [[0] + losses(theta)]
    for i in range(sweeps * s):
        g = problem.total_gradient(theta)
        gn = norm2(g)
        eps = (rho / gn) * g if gn > ZERO_GRAD_TOL else np.zeros_like(g)
        theta = theta + eps
        rows_total.append([i + 1] + losses(theta))
    _write_csv(manifest, "trace_total.csv", header, rows_total)

    # strategy (b): sequential domain-wise perturbations in seeded order
    theta = theta0.copy()
    rows_seq = [[0] + losses(theta)]
    orders = []
    step_idx = 1
    for _ in range(sweeps):
        order = rng.permutation(s)
        orders.append([int(x) for x in order])
        for j in order:
            g = problem.domains[int(j)].gradient(theta)
            gn = norm2(g)
            eps = (rho / gn) * g if gn > ZERO_GRAD_TOL else np.zeros_like(g)
            theta = theta + eps
            rows_seq.append([step_idx] + losses(theta))
            step_idx += 1
    _write_csv(manifest, "trace_sequential.csv", header, rows_seq)

    manifest.write_json("trace_protocol.json", {
        "radius": rho,
        "sweeps": sweeps,
        "start": [float(x) for x in theta0],
        "sequential_orders": orders,
        "seed": seed,
    })
    manifest.finalize()
    return 0


def cmd_sharpness_table(config: ExperimentConfig, out_dir: str,
                        checkpoint: str | None = None,
                        point=None, seed=None) -> int:
    problem = config.build_problem()
    if checkpoint is not None:
        if not os.path.exists(checkpoint):
            raise ConfigError(f"checkpoint not found: {checkpoint}")
        with open(checkpoint) as f:
            theta = np.asarray(json.load(f)["final_theta"], dtype=float)
    elif point is not None:
        theta = config.resolve_point(point, problem)
    else:
        raise ConfigError("sharpness-table needs --checkpoint or --point")
    seed = config.seeds[0] if seed is None else seed
    rep = sharpness_report(problem, theta, config.sharpness_config(seed=seed))
    manifest = RunManifest("sharpness-table", config.raw, out_dir)
    manifest.write_json("sharpness_table.json", rep.to_json_dict())
    header = [f"domain_{i + 1}" for i in range(problem.n_domains)]
    row = [float(v) for v in rep.per_domain]
    header += ["mean", "std", "total"]
    row += [rep.mean, rep.std, rep.global_sharpness]
    if rep.unseen is not None:
        header.append("unseen")
        row.append(rep.unseen)
    _write_csv(manifest, "sharpness_table.csv", header, [row])
    manifest.finalize()
    return 0


def cmd_cost(config: ExperimentConfig, out_dir: str, seed=None) -> int:
    problem = config.build_problem()
    section = dict(config.raw.get("cost", {}))
    warmup = int(section.get("warmup", 20))
    timed = int(section.get("timed", 200))
    kinds = section.get("kinds", ["erm", "sam", "dgsam"])
    batch_size = section.get("batch_size")
    seed = config.seeds[0] if seed is None else seed
    s = problem.n_domains
    manifest = RunManifest("cost", config.raw, out_dir)

    report = {"n_domains": s, "kinds": {}}
    ok = True
    for kind in kinds:
        cfg = OptimizerConfig(kind=kind, learning_rate=1e-3,
                              perturbation_radius=0.05 if kind != "erm" else 0.0,
                              batch_size=batch_size, max_iterations=1,
                              seed=seed, record_every=0)
        root = SeededRng(seed)
        theta0 = config.initial_point(problem, root)
        state = make_state(theta0, cfg)
        step = _STEPS[kind]
        for _ in range(warmup):
            step(problem, state, cfg)
        evals_before = state.grad_evals
        samples = []
        for _ in range(timed):
            t0 = time.perf_counter()
            step(problem, state, cfg)
            samples.append((time.perf_counter() - t0) * 1e3)
        per_step, rem = divmod(state.grad_evals - evals_before, timed)
        expected = GRAD_EVALS_PER_STEP[kind](s)
        exact = rem == 0 and per_step == expected
        ok = ok and exact
        q1, med, q3 = np.percentile(samples, [25, 50, 75])
        report["kinds"][kind] = {
            "grad_evals_per_iter": per_step if rem == 0 else None,
            "expected_grad_evals_per_iter": expected,
            "exact": bool(exact),
            "wall_ms_median": float(med),
            "wall_ms_iqr": [float(q1), float(q3)],
        }
    report["expected_ratio"] = {k: GRAD_EVALS_PER_STEP[k](s) for k in kinds}
    report["all_exact"] = bool(ok)
    manifest.write_json("cost_report.json", report)
    manifest.finalize()
    return 0 if ok else 3


def cmd_landscape(config: ExperimentConfig, out_dir: str, seed=None) -> int:
    problem = config.build_problem()
    section = dict(config.raw.get("landscape", {}))
    seed = config.seeds[0] if seed is None else seed
    center_spec = section.get("center", "r2" if hasattr(problem, "r2") else None)
    if center_spec is None:
        raise ConfigError("landscape.center is required for this problem")
    center = config.resolve_point(center_spec, problem)
    grid = landscape_grid(
        problem, center,
        dir1=section.get("dir1"), dir2=section.get("dir2"),
        half_width=float(section.get("half_width", 1.0)),
        resolution=int(section.get("resolution", 41)),
        seed=seed,
    )
    manifest = RunManifest("landscape", config.raw, out_dir)
    grid.to_csv(manifest.path("landscape.csv"))
    manifest.register("landscape.csv")
    manifest.write_json("landscape_meta.json", {
        "center": [float(x) for x in grid.center],
        "dir1": [float(x) for x in grid.dir1],
        "dir2": [float(x) for x in grid.dir2],
        "flagged_cells": int(grid.flagged.sum()),
    })
    manifest.finalize()
    return 0


def cmd_spectrum(config: ExperimentConfig, out_dir: str, seed=None,
                 point=None) -> int:
    problem = config.build_problem()
    seed = config.seeds[0] if seed is None else seed
    if point is None:
        point = "r2" if hasattr(problem, "r2") else np.zeros(problem.dim)
    theta = config.resolve_point(point, problem) if isinstance(point, str) \
        else np.asarray(point, dtype=float)
    est = lanczos_spectrum(problem.total_objective(), theta,
                           config.spectrum_config(seed=seed))
    manifest = RunManifest("spectrum", config.raw, out_dir)
    est.to_csv(manifest.path("spectrum.csv"))
    manifest.register("spectrum.csv")
    manifest.write_json("spectrum_meta.json", {
        "first_moment": est.moment(1),
        "second_moment": est.moment(2),
        "density_integral": est.density_integral(),
        "smoothing_width": est.smoothing_width,
        "breakdown_probes": est.breakdown_probes,
    })
    manifest.finalize()
    return 0


def cmd_verify_theory(config: ExperimentConfig, out_dir: str, seed=None) -> int:
    section = dict(config.raw.get("verify", {}))
    n_instances = int(section.get("bound_instances", 200))
    max_domains = int(section.get("max_domains", 4))
    max_support = int(section.get("max_support", 5))
    divergences = section.get("divergences", ["kl", "tv", "w1"])
    rho_ladder = section.get("reversal_rho_ladder", [0.001, 0.005, 0.01, 0.05])
    violation_thetas = section.get("violation_thetas", [0.1, 0.5, 1.0])
    eps_list = section.get("stationarity_epsilons", [0.1, 0.01])
    cap = int(section.get("stationarity_cap", 100_000))
    seed = (config.seeds[0] if config.seeds else 0) if seed is None else seed

    manifest = RunManifest("verify-theory", config.raw, out_dir)
    report = {"checks": {}}
    all_ok = True

    # 1. individual-sharpness bound on random finite-support instances
    rng = SeededRng(seed + 1)
    fails = []
    for i in range(n_instances):
        kind = divergences[i % len(divergences)]
        problem, theta, delta = random_bound_instance(rng, kind,
                                                      max_domains=max_domains,
                                                      max_support=max_support,
                                                      index=i)
        rep = check_individual_sharpness_bound(problem, theta, kind, delta)
        if not rep.passed:
            fails.append({"instance": i, "divergence": kind,
                          "lhs": rep.lhs, "rhs": rep.rhs})
    bound_ok = not fails
    report["checks"]["worst_case_bound"] = {
        "instances": n_instances, "failures": fails, "passed": bound_ok,
    }
    all_ok = all_ok and bound_ok

    # 2. global-sharpness violation margins are exactly theta
    margins = []
    viol_ok = True
    for th in violation_thetas:
        out = global_violation_report(float(th))
        exact = abs(out["margin"] - th) <= 1e-9
        viol_ok = viol_ok and exact
        margins.append(out)
    report["checks"]["global_violation"] = {"reports": margins, "passed": viol_ok}
    all_ok = all_ok and viol_ok

    # 3. sharpness-ordering witness across the radius ladder
    rev_ok = True
    rev = []
    for rho in rho_ladder:
        try:
            w = build_sharpness_reversal_pair(float(rho))
            rev.append(w.to_json_dict())
        except RuntimeError as exc:
            rev_ok = False
            rev.append({"rho": rho, "error": str(exc)})
    report["checks"]["sharpness_reversal"] = {"ladder": rev, "passed": rev_ok}
    all_ok = all_ok and rev_ok

    # 4. convergence constants + empirical stationarity on a convex ensemble
    worked = convergence_constants(ConvergenceBudget(
        smoothness=1.0, m1=1.0, m2=1.0, m3=1.0, initial_gap=1.0,
        n_domains=2, epsilon=0.5))
    worked_ok = worked["T_min"] == 4608.0
    from ..objectives import QuadraticDomainEnsemble

    diags = [np.array([1.0, 0.6, 0.3]), np.array([0.8, 1.0, 0.45]),
             np.array([0.9, 0.8, 0.6])]
    ens = QuadraticDomainEnsemble([np.diag(d) for d in diags],
                                  [np.zeros(3)] * 3)
    consts = er_constants_zero_anchor(ens)
    theta0 = np.array([1.2, -0.8, 0.9])
    gap = ens.total_loss(theta0)
    stat = []
    stat_ok = True
    for eps in eps_list:
        budget = ConvergenceBudget(smoothness=consts["smoothness"], m1=0.0,
                                   m2=consts["m2"], m3=0.0, initial_gap=gap,
                                   n_domains=ens.n_domains, epsilon=float(eps))
        rep = empirical_stationarity_test(ens, budget, theta0, seed=seed, cap=cap)
        stat.append(rep.to_json_dict())
        stat_ok = stat_ok and rep.status == "PASS"
    report["checks"]["convergence"] = {
        "worked_example_T_min": worked["T_min"],
        "worked_example_passed": worked_ok,
        "stationarity": stat,
        "stationarity_passed": stat_ok,
    }
    all_ok = all_ok and worked_ok and stat_ok

    report["all_passed"] = bool(all_ok)
    manifest.write_json("verify_theory.json", report)
    manifest.finalize()
    return 0 if all_ok else 3
