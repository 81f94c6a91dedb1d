import math

import numpy as np
import pytest
from scipy import stats

from zrplab.equilibrium import (
    DegenerateVarianceError,
    ProductMeasure,
    SiteMarginal,
    ibp_residual,
    log_normalizer,
    parse_profile_expression,
)
from zrplab.lattice import TorusLattice


def test_log_normalizer_poisson():
    assert abs(log_normalizer(1.0, 2.0) - 2.0) < 1e-12


def test_log_normalizer_bessel():
    # sum 1/(k!)^2 = I_0(2); frozen from a 60-term partial sum
    z = math.exp(log_normalizer(2.0, 1.0))
    assert abs(z - 2.2795853023360673) < 1e-13


def test_log_normalizer_small_phi():
    assert abs(log_normalizer(2.0, 1e-300)) < 1e-12


def test_log_normalizer_rejects():
    with pytest.raises(ValueError):
        log_normalizer(0.5, 1.0)
    with pytest.raises(ValueError):
        log_normalizer(1.0, 0.0)


def test_marginal_probabilities_sum():
    for alpha in (1.0, 1.5, 2.0, 3.0):
        for a in (0.25, 1.0, 4.0):
            for chi in (1.0, 0.1, 0.01):
                m = SiteMarginal(alpha, chi, a)
                assert abs(m.probs.sum() - 1.0) < 1e-12
                # successor ratio at the cap is below 1/2 (certified tail)
                ratio = math.exp(m.log_phi - alpha * math.log(m.K_max + 2.0))
                assert ratio < 0.5


def test_exact_alpha_moment_grid():
    # single-site shift identity with F == 1: sum p(k) (chi k)^alpha = a^alpha
    for alpha in (1.0, 1.5, 2.0, 3.0):
        for a in (0.25, 1.0, 4.0):
            for chi in (1.0, 0.1, 0.01):
                m = SiteMarginal(alpha, chi, a)
                want = a ** alpha
                got = m.exact_alpha_moment()
                assert abs(got - want) <= 1e-10 * want, (alpha, a, chi, got)


def test_poisson_mean():
    m = SiteMarginal(1.0, 0.5, 2.0)  # Poisson(phi) with phi = 4
    assert abs(m.mean_count() - 4.0) < 1e-10
    assert abs(m.mean_eta() - 2.0) < 1e-10


def test_sampler_chi_square_gof():
    m = SiteMarginal(2.0, 1.0, 1.0)
    rng = np.random.default_rng(123)
    draws = m.sample(rng, 1_000_000)
    kmax = m.K_max
    observed = np.bincount(draws, minlength=kmax + 1).astype(float)
    expected = m.probs * draws.size
    # merge the tail so every expected bin count is >= 5
    cut = int(np.searchsorted(np.cumsum(expected[::-1]), 5.0))
    split = kmax + 1 - cut if cut > 0 else kmax + 1
    split = max(split, 2)
    obs = np.append(observed[:split], observed[split:].sum())
    exp = np.append(expected[:split], expected[split:].sum())
    keep = exp > 0
    chi2 = float(((obs[keep] - exp[keep]) ** 2 / exp[keep]).sum())
    dof = int(keep.sum()) - 1
    pvalue = stats.chi2.sf(chi2, dof)
    assert pvalue > 1e-3, (chi2, dof, pvalue)


def test_sampler_alias_route():
    # large support forces the alias table; check mean and determinism
    m = SiteMarginal(1.0, 0.01, 1.0)  # Poisson(100)
    assert m.K_max > 64
    assert m._alias is not None
    rng = np.random.default_rng(5)
    draws = m.sample(rng, 200_000)
    se = math.sqrt(100.0 / draws.size)
    assert abs(draws.mean() - 100.0) < 5 * se
    again = m.sample(np.random.default_rng(5), 200_000)
    assert (draws == again).all()


def test_sampler_small_phi_all_zero():
    m = SiteMarginal(2.0, 1.0, 1e-8)
    draws = m.sample(np.random.default_rng(0), 10_000)
    assert (draws == 0).all()


def test_weight_ratio_p0_p1():
    # alpha=2, chi=1, a=1: weights 1 and phi=1, so p(0) == p(1)
    m = SiteMarginal(2.0, 1.0, 1.0)
    assert abs(m.probs[0] - m.probs[1]) < 1e-14
    rng = np.random.default_rng(77)
    draws = m.sample(rng, 1_000_000)
    n0 = (draws == 0).sum()
    n1 = (draws == 1).sum()
    assert abs(n0 - n1) / math.sqrt(n0 + n1) < 5


def test_product_measure_constant_sampling_mean():
    lat = TorusLattice(1, 64)
    mu = ProductMeasure.constant(lat, 1.0, 0.5, 2.0)
    rng = np.random.default_rng(42)
    total = 0.0
    reps = 200
    for _ in range(reps):
        cfg = mu.sample(rng)
        total += cfg.eta().mean()
    n = reps * lat.n_sites
    se = math.sqrt(2.0 * 0.5 / n)  # var(chi * Poisson(phi)) = chi * a
    assert abs(total / reps - 2.0) < 5 * se


def test_profile_expression_parsing():
    f = parse_profile_expression("1 + 0.5 * cos(2*pi*x)")
    vals = f(np.array([0.0, 0.25, 0.5]))
    assert np.allclose(vals, [1.5, 1.0, 0.5])
    with pytest.raises(ValueError):
        parse_profile_expression("__import__('os')")
    with pytest.raises(ValueError):
        parse_profile_expression("open('x')")
    with pytest.raises(ValueError):
        parse_profile_expression("w + 1")


def test_profile_measure_levels():
    lat = TorusLattice(1, 8)
    mu = ProductMeasure.from_profile(lat, 2.0, 0.5, "1 + 0.5*cos(2*pi*x)")
    assert mu.levels[0] == 1.5
    assert abs(mu.levels[4] - 0.5) < 1e-12
    assert not mu.is_constant
    cfg = mu.sample(np.random.default_rng(3))
    assert cfg.counts.shape == (8,)


def test_profile_rejects_nonpositive():
    lat = TorusLattice(1, 8)
    with pytest.raises(ValueError):
        ProductMeasure.from_profile(lat, 2.0, 0.5, "cos(2*pi*x)")


def test_ibp_residual_basic():
    lat = TorusLattice(1, 4)
    mu = ProductMeasure.constant(lat, 1.0, 0.5, 1.0)
    rng = np.random.default_rng(2024)
    t = ibp_residual(mu, lambda eta: np.ones(eta.shape[0]), 0, 50_000, rng)
    assert abs(t) <= 4.0


def test_ibp_residual_indicator_functional():
    lat = TorusLattice(1, 4)
    mu = ProductMeasure.constant(lat, 2.0, 0.5, 1.0)
    rng = np.random.default_rng(99)
    t = ibp_residual(mu, lambda eta: (eta[:, 0] <= 1.0).astype(float), 0, 50_000, rng)
    assert abs(t) <= 4.0


def test_ibp_degenerate_variance_detected():
    lat = TorusLattice(1, 2)
    mu = ProductMeasure.constant(lat, 2.0, 1.0, 1e-9)  # essentially always empty
    rng = np.random.default_rng(1)
    # F == 1: term1 = eta^alpha = 0 a.s., term2 = a^alpha > 0 constant
    with pytest.raises(DegenerateVarianceError):
        ibp_residual(mu, lambda eta: np.ones(eta.shape[0]), 0, 10_000, rng)


def test_ibp_detects_wrong_sampler():
    # a deliberately biased "measure": sample from level 1 but claim 1.2
    lat = TorusLattice(1, 4)
    good = ProductMeasure.constant(lat, 1.0, 0.5, 1.0)
    bad = ProductMeasure.constant(lat, 1.0, 0.5, 1.2)
    rng = np.random.default_rng(5)
    counts = good.sample_counts_matrix(rng, 50_000)
    eta = good.chi * counts.astype(float)
    term1 = eta[:, 0] ** 1.0
    term2 = 1.2 * np.ones(eta.shape[0])
    w = term1 - term2
    t = w.mean() / (w.std(ddof=1) / math.sqrt(len(w)))
    assert abs(t) > 4.0
