import numpy as np
import pytest

from dgsharp.core import NonFiniteError, SeededRng, finite_diff_gradient, finite_diff_hvp
from dgsharp.objectives import (
    FiniteSupportStatLoss,
    LinearObjective,
    MlpObjective,
    MultiDomainProblem,
    QuadraticDomainEnsemble,
    QuadraticObjective,
    build_fake_flat,
    init_mlp_params,
    make_shifted_blob_dataset,
    mlp_problem_from_dataset,
)
from dgsharp.objectives.base import sample_domain_minibatch


def quadratic_pair():
    h = np.eye(2)
    return MultiDomainProblem([QuadraticObjective(h), QuadraticObjective(h)])


def test_total_loss_mean_of_equal_quadratics():
    prob = quadratic_pair()
    assert prob.total_loss(np.array([1.0, 0.0])) == 0.5


def test_total_loss_arithmetic_mean():
    class Const:
        dim = 2
        has_analytic_hvp = False

        def __init__(self, v):
            self.v = v

        def loss(self, theta):
            return self.v

        def gradient(self, theta):
            return np.zeros(2)

    prob = MultiDomainProblem([Const(1.0), Const(2.0), Const(3.0)])
    assert prob.total_loss(np.zeros(2)) == 2.0


def test_total_loss_flags_offending_domain():
    class Bad:
        dim = 1

        def loss(self, theta):
            return np.inf

        def gradient(self, theta):
            return np.zeros(1)

    prob = MultiDomainProblem([LinearObjective([1.0]), Bad()])
    with pytest.raises(NonFiniteError, match="domain 1"):
        prob.total_loss(np.array([0.0]))


def test_total_gradient_two_quadratics():
    prob = quadratic_pair()
    assert np.allclose(prob.total_gradient(np.array([1.0, 0.0])), [1.0, 0.0])


def test_mean_decomposition_fixed_order():
    rng = SeededRng(0)
    h = [np.diag(rng.uniform(3) + 0.5) for _ in range(3)]
    b = [rng.normal(3) for _ in range(3)]
    prob = MultiDomainProblem([QuadraticObjective(hi, bi) for hi, bi in zip(h, b)])
    for _ in range(100):
        theta = rng.normal(3)
        losses = [d.loss(theta) for d in prob.domains]
        acc = losses[0]
        for li in losses[1:]:
            acc += li
        assert prob.total_loss(theta) == acc / 3.0


# fake-flat landscape -------------------------------------------------------


@pytest.fixture(scope="module")
def fakeflat():
    return build_fake_flat()


def test_fake_flat_total_equals_potential_on_grid(fakeflat):
    xs = np.linspace(-4, 4, 101)
    worst = 0.0
    for x in xs:
        for y in xs[::10]:
            theta = np.array([x, y])
            l1 = fakeflat.domains[0].loss(theta)
            l2 = fakeflat.domains[1].loss(theta)
            worst = max(worst, abs(l1 + l2 - 2.0 * fakeflat.shared_potential(theta)))
    assert worst <= 1e-12


def test_fake_flat_full_grid_antisymmetry(fakeflat):
    xs = np.linspace(-4, 4, 101)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    l1 = fakeflat.domains[0].loss_batch(pts)
    l2 = fakeflat.domains[1].loss_batch(pts)
    v = 0.5 * (l1 + l2)
    direct = np.array([fakeflat.shared_potential(p) for p in pts[::997]])
    assert np.max(np.abs(v[::997] - direct)) <= 1e-12
    assert np.max(np.abs(l1 + l2 - 2.0 * v)) <= 1e-12


def test_fake_flat_refined_points(fakeflat):
    from dgsharp.core import norm2

    for r in (fakeflat.r1, fakeflat.r2):
        assert norm2(fakeflat.potential_gradient(r)) <= 1e-8
    # total gradient vanishes at r2 while per-domain gradients stay ~k
    assert norm2(fakeflat.total_gradient(fakeflat.r2)) <= 1e-6
    k = fakeflat.params.k
    for d in fakeflat.domains:
        assert norm2(d.gradient(fakeflat.r2)) >= k / 2.0


def test_fake_flat_unit_slope_at_c2(fakeflat):
    from dgsharp.core import norm2

    g = fakeflat.domains[0].gradient(fakeflat.params.c2)
    assert abs(norm2(g) - fakeflat.params.k) < 1e-3


def test_fake_flat_rejects_bad_params():
    with pytest.raises(ValueError):
        build_fake_flat(A1=-1.0)
    with pytest.raises(ValueError):
        build_fake_flat(c1=(1.0, 0.0), c2=(1.0, 0.0))


# quadratic ensembles --------------------------------------------------------


def test_ensemble_forced_cancellation():
    b = np.array([0.3, -0.2])
    ens = QuadraticDomainEnsemble([np.eye(2), np.eye(2)], [b, -b],
                                  force_zero_total_gradient=True)
    assert np.allclose(ens.total_gradient(ens.anchor), 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        QuadraticDomainEnsemble([np.eye(2)], [b], force_zero_total_gradient=True)


def test_ensemble_eigen_oracle():
    ens = QuadraticDomainEnsemble([np.diag([1.0, 3.0]), np.diag([3.0, 1.0])],
                                  [np.zeros(2), np.zeros(2)])
    assert np.allclose(ens.total_hessian_eigenvalues(), [2.0, 2.0])


# finite-support losses ------------------------------------------------------


def test_statloss_probabilities_validated():
    x = np.array([[1.0], [-1.0]])
    with pytest.raises(ValueError):
        FiniteSupportStatLoss(x, np.array([0.6, 0.6]))
    with pytest.raises(ValueError):
        FiniteSupportStatLoss(x, np.array([1.2, -0.2]))


def test_statloss_linear_matches_mean():
    dom = FiniteSupportStatLoss(np.array([[1.0, 0.0], [0.0, 2.0]]),
                                np.array([0.25, 0.75]), family="linear")
    theta = np.array([2.0, 1.0])
    assert np.isclose(dom.loss(theta), 0.25 * 2.0 + 0.75 * 2.0)


def test_statloss_constants_hold_by_sampling():
    rng = SeededRng(3)
    for family in ("linear", "squared", "logistic"):
        x = rng.normal((4, 2))
        p = np.full(4, 0.25)
        targets = None
        if family == "squared":
            targets = rng.normal(4)
        elif family == "logistic":
            targets = np.where(rng.uniform(4) < 0.5, -1.0, 1.0)
        dom = FiniteSupportStatLoss(x, p, family=family, targets=targets)
        for _ in range(200):
            theta = rng.uniform(2) * 2.0 - 1.0  # inside the default box
            vals = dom.pointwise_values(theta)
            assert np.max(np.abs(vals)) <= dom.M + 1e-12
            assert vals.max() - vals.min() <= dom.M + 1e-12
            g = dom.gradient(theta)
            # mean-loss gradient norm is bounded by the pointwise constant
            assert np.linalg.norm(g) <= dom.G + 1e-12
        # pairwise Lipschitz-in-x at sampled thetas
        metric = dom.ground_metric()
        for _ in range(50):
            theta = rng.uniform(2) * 2.0 - 1.0
            vals = dom.pointwise_values(theta)
            for j in range(4):
                for kk in range(j + 1, 4):
                    if metric[j, kk] > 0:
                        assert abs(vals[j] - vals[kk]) <= dom.L_x * metric[j, kk] + 1e-12


# gradient / hvp integrity ----------------------------------------------------


def registered_objectives():
    rng = SeededRng(11)
    ff = build_fake_flat()
    items = [(d, 2, 1.5) for d in ff.domains]
    items.append((QuadraticObjective(np.array([[2.0, 0.3], [0.3, 1.0]]),
                                     np.array([0.1, -0.4])), 2, 2.0))
    items.append((LinearObjective(np.array([0.5, -1.0, 2.0])), 3, 2.0))
    x = rng.normal((5, 3))
    items.append((FiniteSupportStatLoss(x, np.full(5, 0.2), family="linear"), 3, 1.0))
    items.append((FiniteSupportStatLoss(x, np.full(5, 0.2), family="squared",
                                        targets=rng.normal(5)), 3, 1.0))
    items.append((FiniteSupportStatLoss(x, np.full(5, 0.2), family="logistic",
                                        targets=np.where(rng.uniform(5) < 0.5, -1.0, 1.0)),
                  3, 1.0))
    ds = make_shifted_blob_dataset(n_domains=2, n_per_domain=40, seed=5)
    prob = mlp_problem_from_dataset(ds, layer_sizes=(2, 5, 4, 2))
    for d in prob.domains:
        items.append((d, d.dim, 0.8))
    return items


@pytest.mark.parametrize("idx", range(len(registered_objectives())))
def test_gradient_matches_finite_difference(idx):
    obj, dim, scale = registered_objectives()[idx]
    rng = SeededRng(100 + idx)
    for _ in range(20):
        theta = scale * rng.normal(dim)
        g = obj.gradient(theta)
        fd = finite_diff_gradient(obj.loss, theta)
        denom = max(1.0, np.linalg.norm(fd))
        assert np.linalg.norm(g - fd) / denom < 1e-5


@pytest.mark.parametrize("idx", range(len(registered_objectives())))
def test_hvp_matches_finite_difference(idx):
    obj, dim, scale = registered_objectives()[idx]
    if not obj.has_analytic_hvp:
        pytest.skip("no analytic hvp")
    rng = SeededRng(200 + idx)
    for _ in range(20):
        theta = scale * rng.normal(dim)
        v = rng.normal(dim)
        hv = obj.hessian_vector_product(theta, v)
        fd = finite_diff_hvp(obj.gradient, theta, v)
        denom = max(1.0, np.linalg.norm(fd))
        assert np.linalg.norm(hv - fd) / denom < 1e-4


# minibatch sampling -----------------------------------------------------------


def test_minibatch_analytic_returns_self():
    dom = QuadraticObjective(np.eye(2))
    out = sample_domain_minibatch(dom, SeededRng(0), 12)
    assert out is dom and out.deterministic


def test_minibatch_deterministic_indices():
    ds = make_shifted_blob_dataset(n_domains=1, n_per_domain=100, seed=1)
    dom = MlpObjective(*ds.domains[0])
    a = dom.sample_minibatch(SeededRng(42), 16).indices
    b = dom.sample_minibatch(SeededRng(42), 16).indices
    assert np.array_equal(a, b)
    assert not dom.sample_minibatch(SeededRng(43), 16).deterministic


def test_minibatch_size_validated():
    ds = make_shifted_blob_dataset(n_domains=1, n_per_domain=10, seed=1)
    dom = MlpObjective(*ds.domains[0])
    with pytest.raises(ValueError):
        dom.sample_minibatch(SeededRng(0), 11)


def test_minibatch_gradient_unbiased():
    # empirical mean of minibatch gradients matches the full gradient within
    # a component-wise CLT band at 99% confidence
    ds = make_shifted_blob_dataset(n_domains=1, n_per_domain=100, seed=2)
    dom = MlpObjective(*ds.domains[0], layer_sizes=(2, 4, 2))
    rng = SeededRng(9)
    theta = init_mlp_params(rng, (2, 4, 2))
    full = dom.gradient(theta)
    n_draws = 10_000
    acc = np.zeros_like(full)
    acc_sq = np.zeros_like(full)
    for _ in range(n_draws):
        g = dom.sample_minibatch(rng, 16).gradient(theta)
        acc += g
        acc_sq += g * g
    mean = acc / n_draws
    var = acc_sq / n_draws - mean**2
    se = np.sqrt(np.maximum(var, 1e-30) / n_draws)
    # 2.576 sigma ~ 99%; allow a small absolute floor for zero-variance coords
    assert np.all(np.abs(mean - full) <= 2.576 * se + 1e-12)


# mlp specifics ----------------------------------------------------------------


def test_mlp_softmax_normalized():
    ds = make_shifted_blob_dataset(n_domains=1, n_per_domain=30, seed=4)
    dom = MlpObjective(*ds.domains[0])
    theta = init_mlp_params(SeededRng(0), dom.layer_sizes)
    p = dom.predict_proba(theta)
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-12


def test_mlp_loss_finite_for_wild_weights():
    ds = make_shifted_blob_dataset(n_domains=1, n_per_domain=30, seed=4)
    dom = MlpObjective(*ds.domains[0])
    theta = 50.0 * SeededRng(1).normal(dom.dim)
    assert np.isfinite(dom.loss(theta))


def test_dataset_csv_roundtrip_columns(tmp_path):
    ds = make_shifted_blob_dataset(n_domains=2, n_per_domain=10, seed=3)
    path = tmp_path / "data.csv"
    ds.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "domain,x1,x2,label"
    assert len(lines) == 1 + 20
