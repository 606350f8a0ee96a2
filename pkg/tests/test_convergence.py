import numpy as np
import pytest

from dgsharp.core import SeededRng, norm2
from dgsharp.objectives import QuadraticDomainEnsemble, build_fake_flat
from dgsharp.robustrisk import (
    ConvergenceBudget,
    convergence_constants,
    empirical_stationarity_test,
    er_constants_smoothness_route,
    er_constants_zero_anchor,
    estimate_smoothness,
)


def budget(**kw):
    base = dict(smoothness=1.0, m1=1.0, m2=1.0, m3=1.0, initial_gap=1.0,
                n_domains=2, epsilon=0.5)
    base.update(kw)
    return ConvergenceBudget(**base)


def test_worked_example_t_min_4608():
    # independent arithmetic: (12*1/(0.25*2)) * max(1, 24*2/0.25, 4, 24)
    # = 24 * 192 = 4608
    out = convergence_constants(budget())
    assert out["T_min"] == 4608.0
    assert out["gamma_bar"] == pytest.approx(1.0 / 192.0, rel=1e-14)


def test_branch_collapse_exact_gradients():
    out = convergence_constants(budget(m1=0.0, m2=0.0, m3=0.0))
    assert out["gamma_bar"] == 1.0
    eps = 0.5
    assert out["T_min"] == pytest.approx(12.0 * 1.0 / (eps**2 * 2))
    expected_rho = 0.5 * min(1.0, eps**2 / 12.0, eps / (2.0 * np.sqrt(6.0)))
    assert out["rho_bar"] == pytest.approx(expected_rho, rel=1e-14)


def test_rho_bar_scales_inverse_in_domains():
    outs = [convergence_constants(budget(n_domains=s))["rho_bar"]
            for s in (1, 2, 4)]
    assert outs[0] / outs[1] == pytest.approx(2.0, rel=1e-12)
    assert outs[1] / outs[2] == pytest.approx(2.0, rel=1e-12)


def test_t_min_monotone_in_epsilon():
    ts = [convergence_constants(budget(epsilon=e))["T_min"]
          for e in (0.1, 0.2, 0.5, 1.0)]
    assert all(a >= b for a, b in zip(ts, ts[1:]))


def test_gamma_rho_monotone_in_smoothness_and_domains():
    for key, vals in (("smoothness", (0.5, 1.0, 4.0)), ("n_domains", (1, 2, 4))):
        gs = [convergence_constants(budget(**{key: v}))["gamma_bar"] for v in vals]
        rs = [convergence_constants(budget(**{key: v}))["rho_bar"] for v in vals]
        assert all(a >= b for a, b in zip(gs, gs[1:]))
        assert all(a >= b for a, b in zip(rs, rs[1:]))


def test_fixed_point_consistency():
    out = convergence_constants(budget(m3=50.0))
    gamma = out["gamma_bar"]
    eps, s, m4 = 0.5, 2, 1.0
    assert out["T_min"] * (1 + 1e-9) >= 12.0 * m4 / (eps**2 * s * gamma)


def zero_anchor_ensemble():
    h = [np.diag([1.0, 0.6, 0.3]), np.diag([0.8, 1.0, 0.45]),
         np.diag([0.9, 0.8, 0.6])]
    return QuadraticDomainEnsemble(h, [np.zeros(3)] * 3)


def test_er_closed_form_zero_anchor():
    ens = zero_anchor_ensemble()
    consts = er_constants_zero_anchor(ens)
    assert consts["m1"] == 0.0 and consts["m3"] == 0.0
    assert consts["smoothness"] == 1.0
    # verify the M2 bound empirically: E|g|^2 <= M2 |grad L_s|^2
    rng = SeededRng(0)
    for _ in range(200):
        theta = rng.normal(3) * 3.0
        e_g2 = np.mean([norm2(d.gradient(theta)) ** 2 for d in ens.domains])
        total = norm2(ens.total_gradient(theta)) ** 2
        assert e_g2 <= consts["m2"] * total * (1 + 1e-10)
    # and that it is tight somewhere within a factor of ~1
    thetas = [rng.normal(3) for _ in range(500)]
    ratios = [np.mean([norm2(d.gradient(t)) ** 2 for t in [t] for d in ens.domains])
              / max(norm2(ens.total_gradient(t)) ** 2, 1e-300) for t in thetas]
    assert max(ratios) >= 0.5 * consts["m2"]


def test_stationarity_quadratic_ensemble_passes():
    ens = zero_anchor_ensemble()
    consts = er_constants_zero_anchor(ens)
    theta0 = np.array([1.2, -0.8, 0.9])
    gap = ens.total_loss(theta0) - 0.0
    for eps in (0.1, 0.01):
        b = ConvergenceBudget(smoothness=consts["smoothness"], m1=0.0, m2=consts["m2"],
                              m3=0.0, initial_gap=gap, n_domains=3, epsilon=eps)
        rep = empirical_stationarity_test(ens, b, theta0, cap=100_000)
        assert rep.status == "PASS"
        assert rep.min_grad_norm <= eps


def test_stationarity_trivial_pass_at_start():
    ens = zero_anchor_ensemble()
    theta0 = np.array([1e-6, 0.0, 0.0])
    b = ConvergenceBudget(smoothness=1.0, m1=0.0, m2=1.2, m3=0.0,
                          initial_gap=1e-12, n_domains=3, epsilon=0.5)
    rep = empirical_stationarity_test(ens, b, theta0, cap=10)
    assert rep.status == "PASS" and rep.argmin_iteration == 0


def test_stationarity_inconclusive_when_capped():
    ens = zero_anchor_ensemble()
    theta0 = np.array([2.0, 2.0, -2.0])
    b = ConvergenceBudget(smoothness=1.0, m1=5.0, m2=1.2, m3=0.0,
                          initial_gap=5.0, n_domains=3, epsilon=1e-4)
    rep = empirical_stationarity_test(ens, b, theta0, cap=5)
    assert rep.status in ("INCONCLUSIVE", "PASS")
    if rep.status == "INCONCLUSIVE":
        assert rep.T_run < rep.T_min and rep.min_grad_norm > 1e-4


def test_stationarity_fake_flat_reaches_critical_point():
    prob = build_fake_flat()
    theta0 = prob.r2 + np.array([0.6, 0.4])
    smooth = estimate_smoothness(prob, theta0, n_points=6, seed=1)
    er = er_constants_smoothness_route(prob, prob.r1, smooth)
    gap = prob.total_loss(theta0) - prob.total_loss(prob.r1)
    b = ConvergenceBudget(smoothness=smooth, m1=er["m1"], m2=er["m2"], m3=er["m3"],
                          initial_gap=gap, n_domains=2, epsilon=1e-3)
    rep = empirical_stationarity_test(prob, b, theta0, cap=60_000)
    assert rep.status == "PASS"
