import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from drlpdid import (InfluenceArray, build_basis, build_stack, cluster_se, estimate,
                     linear_contrast, multiplier_bootstrap)
from drlpdid.errors import AlignmentError, DegenerateBand, TooFewClusters
from drlpdid.estimators import estimate_ra
from drlpdid.inference import MomentSystem, eta_hat, multipliers, sup_t_draws
from drlpdid.nuisance import fit_nuisance, intercept_basis

from conftest import count_stack, random_panel

Z975 = stats.norm.ppf(0.975)


# ---------------------------------------------------------------- influence functions


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["rw", "rwx", "ra", "ipt", "dr"]),
       st.sampled_from([None, 12]))
def test_influence_sums_to_zero(seed, tag, n_clusters):
    p = random_panel(seed, N=60, T=8, n_clusters=n_clusters)
    est = estimate(build_stack(p, 1), tag)
    assert abs(est.influence.sum()) <= 1e-8
    assert est.influence.shape == (p.n_clusters,)


@pytest.mark.parametrize("seed", range(20))
def test_analytic_jacobian_matches_finite_differences(seed):
    p = random_panel(seed, N=50, T=8, n_clusters=20)
    s = build_stack(p, seed % 3)
    b = build_basis(s)
    fit = fit_nuisance(s, b)
    d = s.treated
    for kind in ("ra", "ipt", "dr"):
        if kind == "ra":
            f = fit_nuisance(s, b, propensity=False, outcome="ols")
            mu1, mu0 = s.delta[d].mean(), (b.matrix[d] @ f.beta).mean()
        else:
            f = fit
            w = f.odds[~d]
            r = s.delta - (b.matrix @ f.beta if kind == "dr" else 0.0)
            mu1, mu0 = r[d].mean(), w @ r[~d] / w.sum()
        system = MomentSystem(s, kind, b.matrix)
        eta = eta_hat(kind, s, b, f, mu1, mu0)
        A, J = system.jacobian(eta), system.numeric_jacobian(eta)
        scale = np.abs(A).max()
        assert np.abs(A - J).max() <= 1e-5 * scale
        assert np.abs(system.moments(eta).sum(axis=0)).max() <= 1e-8 * max(1.0, scale)


def test_numeric_jacobian_path_gives_same_influence():
    s = build_stack(random_panel(4, N=60, T=8), 1)
    b = build_basis(s)
    fit = fit_nuisance(s, b)
    d = s.treated
    r = s.delta - b.matrix @ fit.beta
    w = fit.odds[~d]
    eta = eta_hat("dr", s, b, fit, r[d].mean(), w @ r[~d] / w.sum())
    system = MomentSystem(s, "dr", b.matrix)
    np.testing.assert_allclose(system.influence(eta, numeric=True), system.influence(eta),
                               rtol=1e-5, atol=1e-8)


def test_ra_intercept_only_se_is_difference_in_means_se():
    rng = np.random.default_rng(7)
    n1, n0 = 13, 29
    s = count_stack(n1, n0, delta=rng.normal(size=n1 + n0) * 2 + 1)
    est = estimate_ra(s, intercept_basis(s))
    y1, y0 = s.delta[s.treated], s.delta[~s.treated]
    textbook = np.sqrt(y1.var() / n1 + y0.var() / n0)  # heteroskedasticity-robust (HC0)
    assert abs(est.se - textbook) <= 1e-8


def test_duplicating_clusters_shrinks_se_by_root_two():
    rng = np.random.default_rng(8)
    delta = rng.normal(size=30)
    s1 = count_stack(10, 20, delta=delta)
    one = estimate_ra(s1, intercept_basis(s1))
    s2 = count_stack(20, 40, delta=np.r_[delta[:10], delta[:10], delta[10:], delta[10:]])
    two = estimate_ra(s2, intercept_basis(s2))
    assert two.theta == pytest.approx(one.theta)
    assert two.se == pytest.approx(one.se / np.sqrt(2), rel=1e-10)


# ---------------------------------------------------------------- standard errors


def test_cluster_se_of_zero_influence():
    assert cluster_se(np.zeros(5)) == 0.0


def test_cluster_se_two_clusters():
    # sqrt(mean(IF^2) / N_C) with IF = (a, -a) is a / sqrt(2)
    a = 0.8
    assert cluster_se(np.array([a, -a])) == pytest.approx(a / np.sqrt(2), rel=1e-15)


def test_cluster_se_needs_two_clusters():
    with pytest.raises(TooFewClusters):
        cluster_se(np.array([1.0]))


# ---------------------------------------------------------------- contrasts


def _infl(values, horizons=(0, 1), estimates=(1.0, 3.0)):
    return InfluenceArray(tuple(horizons), np.asarray(estimates, dtype=float),
                          np.asarray(values, dtype=float))


def test_equal_weight_contrast():
    rng = np.random.default_rng(0)
    est, _ = linear_contrast(_infl(rng.normal(size=(10, 2))))
    assert est == 2.0


def test_identity_contrast_returns_horizon():
    rng = np.random.default_rng(1)
    ia = _infl(rng.normal(size=(10, 2)))
    est, se = linear_contrast(ia, {1: 1.0})
    assert est == 3.0 and se == ia.se()[1]


def test_perfectly_correlated_contrast_adds_ses():
    rng = np.random.default_rng(2)
    v = rng.normal(size=10)
    ia = _infl(np.column_stack([v, 3 * v]))
    _, se = linear_contrast(ia, {0: 0.25, 1: 0.75})
    assert se == pytest.approx(0.25 * ia.se()[0] + 0.75 * ia.se()[1], rel=1e-12)


def test_contrast_on_missing_horizon():
    with pytest.raises(AlignmentError):
        linear_contrast(_infl(np.ones((4, 2))), {5: 1.0})


# ---------------------------------------------------------------- bootstrap


@pytest.mark.parametrize("scheme", ["rademacher", "mammen", "webb"])
def test_multiplier_moments(scheme):
    xi = multipliers(scheme, 400_000, np.random.default_rng(0))
    assert abs(xi.mean()) < 0.01
    assert abs(xi.var() - 1) < 0.01


def test_multiplier_rejects_unknown_scheme():
    with pytest.raises(ValueError):
        multipliers("gaussianish", 3, np.random.default_rng(0))


def test_single_horizon_critical_value_near_normal():
    v = np.random.default_rng(3).normal(size=(2000, 1))
    band = multiplier_bootstrap(_infl(v, (0,), (0.5,)), B=20_000, seed=11)
    assert abs(band.c_star - 1.96) <= 0.05


@pytest.mark.parametrize("scheme", ["rademacher", "mammen", "webb"])
def test_two_horizon_band_between_normal_and_bonferroni(scheme):
    v = np.random.default_rng(4).normal(size=(2000, 2))
    ia = _infl(v)
    band = multiplier_bootstrap(ia, B=20_000, scheme=scheme, seed=5)
    # per-horizon draws from the same multipliers
    per_h = [sup_t_draws(_infl(v[:, [k]], (k,), (0.0,)), 20_000, scheme, 5)[0] for k in range(2)]
    bonferroni = max(np.quantile(t, 1 - 0.05 / 2) for t in per_h)
    assert Z975 + 0.1 < band.c_star <= bonferroni + 1e-12


def test_band_contains_pointwise_interval():
    v = np.random.default_rng(5).normal(size=(300, 3))
    band = multiplier_bootstrap(_infl(v, (0, 1, 2), (0.1, 0.2, 0.3)), B=999, seed=1)
    assert band.c_star >= band.z
    lo, hi = band.ci
    blo, bhi = band.band
    assert np.all(blo <= lo) and np.all(bhi >= hi)


def test_bootstrap_is_deterministic_in_seed():
    v = np.random.default_rng(6).normal(size=(50, 2))
    a = multiplier_bootstrap(_infl(v), B=1, seed=3)
    b = multiplier_bootstrap(_infl(v), B=1, seed=3)
    assert a.draws.tobytes() == b.draws.tobytes()
    c = multiplier_bootstrap(_infl(v), B=2500, seed=3)
    assert c.draws[0] == a.draws[0]  # later blocks never disturb earlier draws
    d = multiplier_bootstrap(_infl(v), B=2500, seed=4)
    assert not np.array_equal(c.draws, d.draws)


def test_zero_se_horizon_is_excluded():
    v = np.random.default_rng(7).normal(size=(40, 2))
    v[:, 0] = 0.0
    band = multiplier_bootstrap(_infl(v, (-1, 0), (0.0, 1.0)), B=500, seed=1)
    assert band.excluded == (-1,)
    with pytest.raises(DegenerateBand):
        multiplier_bootstrap(_infl(np.zeros((40, 2))), B=10)


def test_band_json_shape():
    v = np.random.default_rng(8).normal(size=(40, 2))
    d = multiplier_bootstrap(_infl(v), B=99, seed=2).to_dict()
    assert set(d) == {"alpha", "scheme", "B", "seed", "c_star", "horizons"}
    assert set(d["horizons"][0]) == {"h", "theta", "se", "ci_lo", "ci_hi", "band_lo", "band_hi"}
