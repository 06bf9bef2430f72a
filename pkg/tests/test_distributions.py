import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from kergodic import liegroups as lg
from kergodic.distributions import (
    COV_FLOOR,
    GaussianMixture,
    LieGaussianComponent,
    LieGaussianMixture,
    gmm_box_mass,
    gmm_grad,
    gmm_pdf,
    gmm_sample,
    gmm_sq_integral,
    karcher_mean,
    lie_gaussian_grad,
    lie_gaussian_pdf,
    lie_gmm_fit_em,
    lie_gmm_grad,
    lie_gmm_pdf,
    lie_gmm_sample,
    random_benchmark_gmm,
)
from kergodic.errors import DimMismatch

from conftest import central_diff, random_se3, rel_err, trivialized_diff


def _random_gmm(rng, n, k=3):
    covs = []
    for _ in range(k):
        A = rng.normal(size=(n, n))
        covs.append(0.05 * (A @ A.T) / n + 0.01 * np.eye(n))
    return GaussianMixture(rng.dirichlet(np.ones(k)), rng.uniform(size=(k, n)), np.array(covs))


def test_pdf_standard_normal_peak():
    p = GaussianMixture([1.0], [[0.0]], [[[1.0]]])
    np.testing.assert_allclose(gmm_pdf(p, [0.0]), 1 / np.sqrt(2 * np.pi), rtol=1e-15)


def test_pdf_two_component_at_first_mean():
    p = GaussianMixture([0.5, 0.5], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    peak = 1 / np.sqrt(2 * np.pi)
    expected = 0.5 * peak + 0.5 * peak * np.exp(-0.5)
    np.testing.assert_allclose(gmm_pdf(p, [0.0]), expected, rtol=1e-15)


def test_pdf_matches_scipy(rng):
    p = _random_gmm(rng, 3)
    x = rng.uniform(size=(50, 3))
    ref = sum(w * multivariate_normal(m, c).pdf(x) for w, m, c in zip(p.weights, p.means, p.covs))
    np.testing.assert_allclose(gmm_pdf(p, x), ref, rtol=1e-12)


def test_pdf_integrates_to_one_mc(rng):
    p = GaussianMixture([0.3, 0.7], [[0.0, 0.0], [0.5, 0.3]], [np.eye(2) * 0.04, np.eye(2) * 0.04])
    # 6 sigma around both means
    lo, hi = np.array([-1.2, -1.2]), np.array([1.7, 1.5])
    x = rng.uniform(lo, hi, size=(1_000_000, 2))
    est = gmm_pdf(p, x).mean() * np.prod(hi - lo)
    assert abs(est - 1) < 1e-2


def test_grad_examples(rng):
    p = GaussianMixture([1.0], [[0.3, 0.4]], [np.eye(2) * 0.5])
    np.testing.assert_array_equal(gmm_grad(p, [0.3, 0.4]), [0.0, 0.0])
    q = GaussianMixture([1.0], [[0.0]], [[[1.0]]])
    np.testing.assert_allclose(gmm_grad(q, [1.0]), [-np.exp(-0.5) / np.sqrt(2 * np.pi)], rtol=1e-14)
    np.testing.assert_allclose(gmm_grad(q, [1.0]), [-0.24197072451914337], rtol=1e-12)


def test_grad_fd_4d(rng):
    for _ in range(5):
        p = _random_gmm(rng, 4)
        x = rng.uniform(size=4)
        assert rel_err(gmm_grad(p, x), central_diff(lambda y: gmm_pdf(p, y), x)) < 1e-7


def test_sample_degenerate_floor(rng):
    p = GaussianMixture([1.0], [[0.2, 0.8]], [np.zeros((2, 2))])
    assert np.linalg.eigvalsh(p.covs[0]).min() >= COV_FLOOR * (1 - 1e-12)
    x = gmm_sample(p, rng, 100)
    assert np.abs(x - [0.2, 0.8]).max() < 1e-3


def test_sample_seeded():
    p = GaussianMixture([0.5, 0.5], [[0.0], [1.0]], [[[0.1]], [[0.2]]])
    a = gmm_sample(p, np.random.default_rng(4), 30)
    b = gmm_sample(p, np.random.default_rng(4), 30)
    np.testing.assert_array_equal(a, b)


def test_sample_mode_weights(rng):
    p = GaussianMixture([0.3, 0.7], [[-5.0], [5.0]], [[[0.1]], [[0.1]]])
    x = gmm_sample(p, rng, 100_000)
    assert abs((x[:, 0] < 0).mean() - 0.3) < 0.01


def test_sq_integral_examples(rng):
    one = GaussianMixture([1.0], [[0.0]], [[[1.0]]])
    np.testing.assert_allclose(gmm_sq_integral(one), 1 / (2 * np.sqrt(np.pi)), rtol=1e-14)
    two = GaussianMixture([0.5, 0.5], [[0.0], [0.0]], [[[1.0]], [[1.0]]])
    np.testing.assert_allclose(gmm_sq_integral(two), gmm_sq_integral(one), rtol=1e-14)
    p = _random_gmm(rng, 2)
    t = np.linspace(-1.5, 2.5, 1601)
    X, Y = np.meshgrid(t, t, indexing="ij")
    vals = gmm_pdf(p, np.stack([X, Y], axis=-1)) ** 2
    ref = np.trapezoid(np.trapezoid(vals, t, axis=1), t)
    assert rel_err(gmm_sq_integral(p), ref) < 1e-4


def test_box_mass(rng):
    p = GaussianMixture([1.0], [[0.5, 0.5]], [np.eye(2) * 1e-4])
    assert abs(gmm_box_mass(p, [0, 0], [1, 1]) - 1) < 1e-6
    q = GaussianMixture([1.0], [[0.0, 0.5]], [np.eye(2) * 1e-4])
    assert abs(gmm_box_mass(q, [0, 0], [1, 1]) - 0.5) < 1e-4


def test_mixture_shape_validation():
    with pytest.raises(DimMismatch):
        GaussianMixture([0.5, 0.5], [[0.0, 0.0]], [np.eye(2)])


def test_benchmark_gmm(rng):
    for dim in range(2, 7):
        p = random_benchmark_gmm(dim, rng)
        assert p.n_components == 3
        assert np.all(np.linalg.eigvalsh(p.covs) > 0)
        diag = np.diagonal(p.covs, axis1=1, axis2=2)
        assert diag.min() >= 0.01 - 1e-12 and diag.max() <= 0.02 + 1e-12
    a = random_benchmark_gmm(3, np.random.default_rng(7))
    b = random_benchmark_gmm(3, np.random.default_rng(7))
    np.testing.assert_array_equal(a.covs, b.covs)
    np.testing.assert_array_equal(a.means, b.means)


# ---------------------------------------------------------------------------
# Lie mixtures


def _se3_component(rng, scale=0.05):
    A = rng.normal(size=(6, 6))
    cov = scale * (A @ A.T) / 6 + 0.005 * np.eye(6)
    return LieGaussianComponent(random_se3(rng), cov)


def test_lie_pdf_at_mean(rng):
    c = _se3_component(rng)
    eta = multivariate_normal(np.zeros(6), c.cov).pdf(np.zeros(6))
    np.testing.assert_allclose(lie_gaussian_pdf(c, c.mean), eta, rtol=1e-12)


def test_lie_pdf_isotropic_reduction():
    s2, a = 0.04, 0.15
    mean = lg.exp_map([0.2, -0.1, 0.4])
    c = LieGaussianComponent(mean, s2 * np.eye(3))
    eta = (2 * np.pi * s2) ** -1.5
    g = mean @ lg.exp_map([a, 0, 0])
    np.testing.assert_allclose(lie_gaussian_pdf(c, g), eta * np.exp(-a * a / (2 * s2)), rtol=1e-12)


def test_lie_pdf_matches_tangent_gaussian(rng):
    c = _se3_component(rng)
    ref = multivariate_normal(np.zeros(6), c.cov)
    for _ in range(20):
        g = c.mean @ lg.exp_map(0.3 * rng.normal(size=6))
        xi = lg.log_map(np.linalg.inv(c.mean) @ g)
        np.testing.assert_allclose(lie_gaussian_pdf(c, g), ref.pdf(xi), rtol=1e-10)


def test_lie_grad_fd(rng):
    c = _se3_component(rng)
    np.testing.assert_allclose(lie_gaussian_grad(c, c.mean), np.zeros(6), atol=1e-9)
    for _ in range(10):
        g = c.mean @ lg.exp_map(0.3 * rng.normal(size=6))
        fd = trivialized_diff(lambda h: float(lie_gaussian_pdf(c, h)), g)
        assert rel_err(lie_gaussian_grad(c, g), fd) < 1e-6


def test_lie_grad_one_dof_slice():
    s2 = 0.05
    c = LieGaussianComponent(np.eye(3), s2 * np.eye(3))
    a = 0.3
    g = lg.exp_map([0, 0, a])
    eta = (2 * np.pi * s2) ** -1.5
    expected = -a / s2 * eta * np.exp(-a * a / (2 * s2))
    np.testing.assert_allclose(lie_gaussian_grad(c, g), [0, 0, expected], rtol=1e-12, atol=1e-15)


def test_lie_mixture_grad_so3(rng):
    means = [lg.exp_map(0.5 * rng.normal(size=3)) for _ in range(2)]
    p = LieGaussianMixture([0.4, 0.6], means, [np.eye(3) * 0.05, np.diag([0.02, 0.05, 0.08])])
    g = lg.exp_map(0.5 * rng.normal(size=3))
    fd = trivialized_diff(lambda h: float(lie_gmm_pdf(p, h)), g)
    assert rel_err(lie_gmm_grad(p, g), fd) < 1e-6


def test_lie_sampling(rng):
    mean = random_se3(rng)
    tiny = LieGaussianMixture([1.0], [mean], [np.zeros((6, 6))])
    g = lie_gmm_sample(tiny, rng, 20)
    assert np.abs(g - mean).max() < 1e-3
    c = _se3_component(rng, 0.02)
    p = LieGaussianMixture([1.0], [c.mean], [c.cov])
    g = lie_gmm_sample(p, rng, 10_000)
    xi = lg.log_map(np.linalg.inv(c.mean) @ g)
    emp = xi.T @ xi / len(xi)
    assert rel_err(emp, c.cov) < 0.1
    a = lie_gmm_sample(p, np.random.default_rng(3), 5)
    b = lie_gmm_sample(p, np.random.default_rng(3), 5)
    np.testing.assert_array_equal(a, b)


def test_karcher_mean_of_symmetric_set():
    center = lg.exp_map([0.1, 0.2, -0.3, 1.0, 0.0, 0.5])
    offs = [lg.exp_map(s * e) for e in 0.2 * np.eye(6) for s in (-1, 1)]
    samples = np.array([center @ o for o in offs])
    m = karcher_mean(samples, init=samples[0])
    assert np.abs(lg.log_map(np.linalg.inv(center) @ m)).max() < 1e-8


def test_em_identical_samples(rng):
    g0 = random_se3(rng)
    res = lie_gmm_fit_em(np.repeat(g0[None], 20, axis=0), 1, rng)
    np.testing.assert_allclose(res.mixture.means[0], g0, atol=1e-12)
    np.testing.assert_allclose(res.mixture.covs[0], COV_FLOOR * np.eye(6), rtol=1e-6, atol=1e-15)


def test_em_recovers_single_component(rng):
    c = _se3_component(rng, 0.02)
    p = LieGaussianMixture([1.0], [c.mean], [c.cov])
    res = lie_gmm_fit_em(lie_gmm_sample(p, rng, 2000), 1, rng)
    m = res.mixture
    assert np.linalg.norm(lg.log_map(np.linalg.inv(c.mean) @ m.means[0])) < 0.05
    assert rel_err(m.covs[0], c.cov) < 0.2
    assert np.all(np.diff(res.log_likelihood) >= -1e-9)


def test_em_two_clusters(rng):
    m1 = lg.exp_map([0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    m2 = lg.exp_map([0.5, -0.3, 0.2, 2.0, 1.0, -1.0])
    p = LieGaussianMixture([0.3, 0.7], [m1, m2], [np.eye(6) * 0.01, np.eye(6) * 0.01])
    res = lie_gmm_fit_em(lie_gmm_sample(p, rng, 1000), 2, rng)
    w = np.sort(res.mixture.weights)
    np.testing.assert_allclose(w, [0.3, 0.7], atol=0.05)
    assert np.all(np.diff(res.log_likelihood) >= -1e-9)


def test_em_needs_enough_samples(rng):
    with pytest.raises(ValueError):
        lie_gmm_fit_em(np.repeat(np.eye(4)[None], 5, axis=0), 1, rng)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_property_pdf_positive_and_grad_consistent(seed):
    r = np.random.default_rng(seed)
    p = _random_gmm(r, 2)
    x = r.uniform(size=2)
    assert gmm_pdf(p, x) > 0
    assert rel_err(gmm_grad(p, x), central_diff(lambda y: gmm_pdf(p, y), x)) < 1e-5
