import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kflip import (
    GameParams,
    InvalidParameter,
    NoMetastableState,
    end_slope,
    estimate_k_min,
    exact_rho_min,
    hitting_curve,
    metastable_endpoints,
    p_plus,
    p_plus_prime,
    phase_diagram,
    phi_mid,
    solve_equilibria,
)
from kflip.escape import kmin_balance


# ---- phi_mid -----------------------------------------------------------------


@given(beta=st.floats(1.3, 3.0), gamma=st.floats(0.2, 0.95), noise=st.sampled_from(["gumbel", "normal"]))
def test_phi_mid_first_order_condition(beta, gamma, noise):
    params = GameParams.at_gamma(50, 1, beta, gamma, noise=noise)
    eq = solve_equilibria(params)
    mid = phi_mid(params)
    assert eq.phi_minus < mid < eq.phi_zero
    assert abs(p_plus_prime(params, mid) - 1) < 1e-6
    # endpoints are fixed points, the interior maximizer is not
    assert abs(p_plus(params, mid) - mid) > abs(p_plus(params, eq.phi_minus) - eq.phi_minus)


def test_phi_mid_independent_of_size_and_k():
    a = phi_mid(GameParams.at_gamma(20, 1, 1.9, 0.8))
    b = phi_mid(GameParams.at_gamma(300, 123, 1.9, 0.8))
    assert a == b


def test_phi_mid_requires_three_roots():
    with pytest.raises(NoMetastableState):
        phi_mid(GameParams.create(50, 1, 0.8))


# ---- estimated k_min ---------------------------------------------------------


@pytest.mark.parametrize("beta", [1.5, 1.9, 2.5])
def test_estimate_solves_balance(beta):
    params = GameParams.at_gamma(150, 1, beta, 0.8)
    est = estimate_k_min(params)
    assert 1 <= est.k_min_estimated <= 150
    assert est.rho_min_estimated == pytest.approx(est.k_min_estimated / 150)
    assert abs(kmin_balance(params, est.phi_mid, est.k_min_estimated)) < 1e-8
    # smallest root: no sign change below it
    ks = np.linspace(1, est.k_min_estimated, 200)[:-1]
    vals = [kmin_balance(params, est.phi_mid, k) for k in ks]
    assert np.all(np.sign(vals) == np.sign(vals[0]))


def test_estimate_decreases_with_beta():
    rhos = [estimate_k_min(GameParams.at_gamma(150, 1, b, 0.8)).rho_min_estimated for b in (2.0, 2.5, 3.0)]
    assert rhos[0] > rhos[1] > rhos[2]


def test_estimate_without_root_reports_one():
    est = estimate_k_min(GameParams.at_gamma(2, 1, 3.0, 0.5))
    assert est.rho_min_estimated == 1.0
    assert est.k_min_estimated == 2.0


def test_estimate_near_exact_at_beta_2():
    params = GameParams.at_gamma(150, 1, 2.0, 0.8)
    ends = metastable_endpoints(params)
    est = estimate_k_min(params)
    exact = exact_rho_min(params, ends.meta, ends.stable)
    assert abs(est.rho_min_estimated - exact.rho_min_exact) <= 0.25


def test_estimate_needs_two_agents():
    with pytest.raises(InvalidParameter):
        estimate_k_min(GameParams.create(1, 1, 2.0, 0.1))


# ---- exact argmin ------------------------------------------------------------


@pytest.fixture(scope="module")
def n60():
    params = GameParams.at_gamma(60, 1, 1.9, 0.8)
    return params, metastable_endpoints(params)


def test_exact_interior_minimum(n60):
    params, ends = n60
    exact = exact_rho_min(params, ends.meta, ends.stable)
    assert 1 < exact.k_min_exact < 60
    assert exact.rho_min_exact == exact.k_min_exact / 60


def test_exact_matches_halved_stride_scan(n60):
    params, ends = n60
    exact = exact_rho_min(params, ends.meta, ends.stable)
    curve = hitting_curve(params, ends.meta, ends.stable)
    k = exact.k_min_exact
    window = [kk for kk in range(max(1, k - 6), min(60, k + 6) + 1) if (kk - k) % 2 == 0]
    coarse = exact_rho_min(params, ends.meta, ends.stable, ks=window)
    assert coarse.k_min_exact == k
    assert curve.T[k - 1] == curve.T.min()


def test_exact_unstable_start_prefers_full_flip(n60):
    params, ends = n60
    assert exact_rho_min(params, ends.unstable, ends.stable).k_min_exact == 60


def test_argmin_invariant_under_scaling(n60):
    params, ends = n60
    curve = hitting_curve(params, ends.meta, ends.stable)
    assert np.argmin(curve.T) == np.argmin(curve.T * 123.4) == np.argmin(curve.r_tau)


# ---- end slope and phase diagram ---------------------------------------------


def test_end_slope_matches_curve(n60):
    params, ends = n60
    curve = hitting_curve(params, ends.meta, ends.stable, ks=[59, 60])
    assert end_slope(params) == pytest.approx(math.log(curve.r_tau[1] / curve.r_tau[0]), rel=1e-12)


def test_phase_sign_matches_independent_curve():
    rng = np.random.default_rng(11)
    betas = np.linspace(1.5, 3.0, 6)
    gammas = np.linspace(0.7, 0.95, 6)
    pd = phase_diagram(betas, gammas, n_agents=30)
    for _ in range(5):
        a, c = rng.integers(0, 6, size=2)
        params = GameParams.at_gamma(30, 1, betas[a], gammas[c])
        ends = metastable_endpoints(params)
        curve = hitting_curve(params, ends.meta, ends.stable)
        assert np.sign(pd.log_ratio[a, c]) == np.sign(curve.r_tau[-1] - curve.r_tau[-2])


def test_phase_missing_cells_and_csv():
    pd = phase_diagram([0.8, 1.9], [0.5, 1.2], n_agents=20)
    assert np.isnan(pd.log_ratio[0]).all()  # subcritical
    assert np.isnan(pd.log_ratio[1, 1])  # beyond the spinodal
    assert np.isfinite(pd.log_ratio[1, 0])
    buf = io.StringIO()
    pd.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "beta,gamma,log_ratio"
    assert lines[1] == "0.80000000000000004,0.5,"
    assert len(lines) == 5


def test_phase_over_system_size():
    pd = phase_diagram([1.9], [20, 30], axis="n", gamma=0.8)
    buf = io.StringIO()
    pd.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "beta,N,log_ratio"
    assert lines[1].startswith("1.8999999999999999,20,")
    ref = end_slope(GameParams.at_gamma(30, 30, 1.9, 0.8))
    assert pd.log_ratio[0, 1] == ref


def test_phase_thread_independent():
    args = ([1.6, 2.4], [0.75, 0.9])
    a = phase_diagram(*args, n_agents=25)
    b = phase_diagram(*args, n_agents=25, threads=3)
    np.testing.assert_array_equal(a.log_ratio, b.log_ratio)


def test_phase_rejects_axis():
    with pytest.raises(InvalidParameter):
        phase_diagram([1.9], [0.8], axis="k")


def test_larger_gamma_flips_sign_to_negative():
    pd = phase_diagram(np.linspace(1.5, 3.0, 8), np.linspace(0.7, 0.95, 8), n_agents=80)
    signs = np.sign(pd.log_ratio)
    assert np.any(signs < 0) and np.any(signs > 0)
    # along gamma each row is positive up to at most one flip, then negative
    for row in signs:
        assert np.all(np.diff(row) <= 0)
