import math

import numpy as np
import pytest

from brwlab import exactfields as xf
from brwlab import lattice as lat
from brwlab.offspring import binary, geometric, zeta

B = binary()


# ---------------------------------------------------------------------------
# survival recursion


def test_survival_first_steps():
    assert xf.survival_prob(B, 0) == 1.0
    assert xf.survival_prob(B, 1) == 0.5
    assert xf.survival_prob(B, 2) == pytest.approx(3 / 8, abs=1e-15)


def test_survival_monotone_and_asymptotic():
    s = xf.survival_sequence(B, 4096)
    assert np.all(np.diff(s) < 0)
    assert 1.85 <= 4096 * s[4096] <= 2.0


def test_survival_general_families():
    g = geometric(2)
    # sigma2 = 2: n*s_n -> 2/sigma2 = 1
    assert 0.92 <= 2048 * xf.survival_prob(g, 2048) <= 1.0
    z = zeta(2.0)
    s = xf.survival_sequence(z, 64)
    assert np.all(np.diff(s) < 0) and s[64] > 0


# ---------------------------------------------------------------------------
# hitting fields


def test_hitting_one_step_frozen():
    u1 = xf.hitting_field(B, 1, 2)
    offs = [tuple(o) for o in lat.neighborhood(2)]
    for idx in np.ndindex(*u1.values.shape):
        site = tuple(i - u1.radius for i in idx)
        expect = 9 / 50 if site in offs else 0.0
        assert u1.values[idx] == pytest.approx(expect, abs=1e-16)


def test_hitting_two_steps_frozen():
    u2 = xf.hitting_field(B, 2, 2)
    assert u2.value_at((0, 0)) == pytest.approx(0.18 - 0.5 * 0.18**2, abs=1e-15)


def test_hitting_below_survival():
    s = xf.survival_sequence(B, 24)
    for n in (4, 12, 24):
        u = xf.hitting_field(B, n, 2)
        assert u.values.max() <= s[n] + 1e-15


def test_hitting_routes_agree_for_general_law():
    g = geometric(2)
    u = xf.hitting_field(g, 6, 2, method="pgf")
    # against a per-site truncated-pmf oracle
    pf = xf.pmf_oracle(g, 6, 2, degree=96)
    assert np.abs(u.values - pf.hitting_values().values).max() <= 1e-9
    with pytest.raises(ValueError):
        xf.hitting_field(g, 3, 2, method="kpp")


def test_mean_occupied_frozen_and_oracle():
    total, _ = xf.mean_occupied(B, 1, 2)
    assert total == pytest.approx(5 * 9 / 50, abs=1e-14)
    for n in (2, 6):
        total, _ = xf.mean_occupied(B, n, 2)
        pf = xf.pmf_oracle(B, n, 2, degree=64)
        assert total == pytest.approx(pf.hitting_values().total(), abs=1e-9)


# ---------------------------------------------------------------------------
# mgf and dominating fields


def test_mgf_zero_theta_vanishes():
    g = xf.mgf_field(B, 5, 0.0, 2)
    assert np.abs(g.values).max() == 0.0


def test_mgf_initial_and_one_step():
    th = 0.3
    g0 = xf.mgf_field(B, 0, th, 2)
    assert g0.value_at((0, 0)) == pytest.approx(math.expm1(th), abs=1e-15)
    g1 = xf.mgf_field(B, 1, th, 2)
    expect = 0.5 * (1 + (1 + math.expm1(th) / 5) ** 2) - 1
    assert g1.value_at((0, 0)) == pytest.approx(expect, abs=1e-15)


def test_mgf_derivative_recovers_transition_probs():
    h = 1e-6
    for n in (8, 32):
        g = xf.mgf_field(B, n, h, 2)
        p = lat.transition_field(n, 2)
        err = np.abs(g.values / h - p.values)
        assert np.all(err <= 1e-4 * p.values + 1e-12)


def test_mgf_blowup_signaled_with_step():
    g = geometric(2)
    with pytest.raises(xf.MgfBlowupError) as e:
        xf.mgf_field(g, 50, 0.8, 2)
    assert e.value.step == 0
    with pytest.raises(xf.MgfBlowupError) as e:
        xf.mgf_field(g, 200, 0.55, 2)
    assert e.value.step > 100


def test_mgf_sums_stabilize_in_d3():
    sums = xf.mgf_sum_sequence(B, 64, 0.05, 3, clamp=lat.clamp_radius(64, 3, 1e-12))
    assert np.all(np.diff(sums) >= -1e-15)
    assert abs(sums[64] / sums[48] - 1.0) <= 0.01


def test_dominating_field_basics():
    th = 0.3
    h1 = xf.dominating_field(B, 1, th, 2)
    g1 = xf.mgf_field(B, 1, th, 2)
    assert np.array_equal(h1.values, g1.values)
    for n in (2, 8, 24):
        h = xf.dominating_field(B, n, th, 2)  # closed-form cross-check inside
        g = xf.mgf_field(B, n, th, 2)
        assert np.all(h.values >= g.values - 1e-15)
    h0 = xf.dominating_field(B, 6, 0.0, 2)
    assert np.abs(h0.values).max() == 0.0


# ---------------------------------------------------------------------------
# second moments and the pmf oracle


def test_second_moment_one_step_frozen():
    f = xf.second_moment_field(B, 1, 2)
    offs = [tuple(o) for o in lat.neighborhood(2)]
    for idx in np.ndindex(*f.values.shape):
        site = tuple(i - f.radius for i in idx)
        expect = 6 / 25 if site in offs else 0.0
        assert f.values[idx] == pytest.approx(expect, abs=1e-15)


def test_second_moment_summed_identity_small():
    from brwlab.spine import return_probs
    _, sums = xf.second_moment_sweep(B, 12, 2)
    p0 = return_probs(24, 2)
    rhs = 1.0 + np.cumsum(np.concatenate(([0.0], p0[2:25:2])))
    assert np.abs(sums - rhs).max() <= 1e-10


def test_pmf_oracle_one_step_frozen():
    pf = xf.pmf_oracle(B, 1, 2, degree=8)
    assert pf.pmf_at((1, 0))[:3] == pytest.approx([41 / 50, 8 / 50, 1 / 50], abs=1e-15)
    assert pf.pmf_at((0, 0))[:3] == pytest.approx([41 / 50, 8 / 50, 1 / 50], abs=1e-15)
    assert pf.pmf_at((1, 1))[0] == 1.0


def test_pmf_oracle_moments_match_fields():
    for n in (3, 7):
        pf = xf.pmf_oracle(B, n, 2, degree=64)
        pn = lat.transition_field(n, 2)
        u = xf.hitting_field(B, n, 2)
        m2 = xf.second_moment_field(B, n, 2)
        assert np.abs(pf.mean_field().values - pn.values).max() <= 1e-9
        assert np.abs(pf.hitting_values().values - u.values).max() <= 1e-9
        assert np.abs(pf.second_moment_values().values - m2.values).max() <= 1e-8


def test_pmf_oracle_refuses_undersized_degree():
    with pytest.raises(xf.PmfTruncationError):
        xf.pmf_oracle(B, 10, 2, degree=4)


def test_paley_zygmund_sandwich():
    s = xf.survival_sequence(B, 128)
    for n in (16, 64, 128):
        p = lat.transition_field(n, 2)
        u = xf.hitting_field(B, n, 2)
        m2 = xf.second_moment_field(B, n, 2)
        assert np.all(p.values**2 <= u.values * m2.values + 1e-15)
        assert np.all(u.values <= np.minimum(p.values, s[n]) + 1e-15)


def test_hitting_orthant_monotonicity():
    for n in (8, 32, 64):
        u = xf.hitting_field(B, n, 2)
        R = u.radius
        quad = u.values[R:, R:]
        assert np.diff(quad, axis=0).max() <= 1e-12
        assert np.diff(quad, axis=1).max() <= 1e-12


# ---------------------------------------------------------------------------
# super-solution machinery


def test_supersolution_field_center_and_constants():
    assert xf.BETA == 2.5
    assert xf.KAPPA0 == pytest.approx(4 * math.exp(15.0))
    p = xf.SuperSolutionParams(kappa=7.0)
    v = xf.supersolution_field(p, 16, radius=4)
    assert v.value_at((0, 0)) == pytest.approx(7.0 / (16 * math.log(16)), abs=1e-15)
    assert v.value_at((3, 0)) == pytest.approx(
        7.0 / (16 * math.log(16)) * math.exp(-p.beta_n(16) * 9 / 32), abs=1e-15)


def test_supersolution_margin_holds_beyond_start():
    n0 = xf.find_supersolution_start(xf.KAPPA0)
    rep = xf.verify_supersolution(xf.SuperSolutionParams(xf.KAPPA0),
                                  range(n0, 2 * n0 + 1))
    assert rep["holds"] and rep["min_margin"] >= 0
    assert rep["argmin"]["regime"] in ("core", "mid", "edge")


def test_supersolution_degenerate_prefactor_rejected():
    rep = xf.verify_supersolution(xf.SuperSolutionParams(0.0), range(8, 10))
    assert rep["holds"] is False


def test_comparison_trivial_cases():
    u_seq = xf.hitting_bank(B, 6, 2)
    assert xf.verify_comparison(u_seq, u_seq) is True
    zeros = [lat.Field(2, f.radius, np.zeros_like(f.values)) for f in u_seq]
    assert xf.verify_comparison(u_seq, zeros) is False
    broken = [f.copy() for f in u_seq]
    broken[3].values[0, 0] += 1e-6
    with pytest.raises(ValueError):
        xf.verify_comparison(broken, u_seq)


def test_comparison_with_shifted_bump():
    n0 = xf.find_supersolution_start(xf.KAPPA0)
    n1 = xf.comparison_shift(xf.KAPPA0, n_min=n0)
    assert n1 * math.log(n1) >= xf.KAPPA0 > (n1 - 1) * math.log(n1 - 1)
    params = xf.SuperSolutionParams(n1 * math.log(n1))
    u_seq = xf.hitting_bank(B, 48, 2)
    v_seq = [xf.supersolution_field(params, n1 + k, radius=f.radius)
             for k, f in enumerate(u_seq)]
    assert xf.verify_comparison(u_seq, v_seq) is True


def test_supersolution_margin_shrinks_toward_band_edge():
    # in the bulk of the checked region the margin tightens as |x| grows
    p = xf.SuperSolutionParams(xf.KAPPA0)
    n = 16
    S = 3 * n
    q = xf._quadrant_v(p, n, S + 2)
    m = []
    for x1 in (int(math.sqrt(10 * n)) + 4, 2 * n, 3 * n - 1):
        center = q[x1, 0]
        pv = (q[x1 + 1, 0] + q[x1 - 1, 0] + 2 * q[x1, 1] + center) / 5.0
        vnext = xf._quadrant_v(p, n + 1, S + 2)[x1, 0]
        m.append(vnext - pv * (1 - pv / 2))
    assert m[0] > m[1] > m[2] >= 0
