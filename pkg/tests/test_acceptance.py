"""Acceptance gate: every verification suite at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` for one pass/fail line per
criterion (the CLI equivalent is `brwlab verify --suite all --seed 20240817`).

Two checks are expected to fail for mathematical reasons and are marked
strict-xfail with the analysis in the reason string: the as-stated Yaglom
exponential mean (the classical constant is sigma^2/2, its reciprocal), and
nothing else at criterion level.
"""

import pytest

from brwlab import verify as vf

SEED = 20240817
_MEMO: dict[str, list] = {}


@pytest.fixture(scope="module")
def bank():
    return vf.SimBank(SEED)


def run_suite(name, bank):
    if name not in _MEMO:
        _MEMO[name] = vf.SUITES[name](SEED, bank)
        for r in _MEMO[name]:
            flag = "PASS" if r.passed else ("soft-FAIL" if r.soft else "FAIL")
            print(f"{flag} {r.theorem} {r.statistic}: {r.value:.6g} (band {r.band})")
    return _MEMO[name]


def assert_hard_rows(rows):
    bad = [r for r in rows if not r.soft and not r.passed]
    assert not bad, [f"{r.theorem}:{r.statistic}={r.value}" for r in bad]


def test_c01_fundamental_identity(bank):
    assert_hard_rows(run_suite("fundamental", bank))


def test_c02_hitting_recursion(bank):
    assert_hard_rows(run_suite("hitting", bank))


def test_c03_second_moments(bank):
    assert_hard_rows(run_suite("second-moment", bank))


def test_c04_kolmogorov_survival(bank):
    assert_hard_rows(run_suite("kolmogorov", bank))


@pytest.mark.xfail(strict=True, reason=(
    "the conditional law of Z_n/n given survival is exponential with mean "
    "sigma^2/2 (E[Z_n/n | G_n] = 1/(n s_n) -> 1/2 for binary by the exact "
    "survival recursion); the stated target Exp(mean 2/sigma^2) is the "
    "reciprocal constant and coincides only when sigma^2 = 2, so the "
    "as-stated KS check cannot pass"))
def test_c05_yaglom_as_stated(bank):
    assert_hard_rows(run_suite("yaglom", bank))


def test_c05_yaglom_classical_constant(bank):
    rows = run_suite("yaglom", bank)
    classical = [r for r in rows if "classical" in r.statistic]
    assert classical and all(r.passed for r in classical)


def test_c06_multiplicity_fractions_d3(bank):
    assert_hard_rows(run_suite("multiplicity", bank))


def test_c07_max_occupancy_tightness(bank):
    assert_hard_rows(run_suite("tightness", bank))


def test_c08_size_bias_exactness(bank):
    assert_hard_rows(run_suite("sizebias", bank))


def test_c09_spine_mean_identity(bank):
    assert_hard_rows(run_suite("spine-mean", bank))


def test_c10_conditioned_representation(bank):
    assert_hard_rows(run_suite("conditioned", bank))


def test_c11_supersolution_and_comparison(bank):
    assert_hard_rows(run_suite("supersolution", bank))


def test_c12_occupied_sites_2d(bank):
    assert_hard_rows(run_suite("occupied-2d", bank))


def test_c13_clustering_soft_bands(bank):
    rows = run_suite("clustering", bank)
    # soft bands: measured to pass at the pinned seed, asserted to keep them
    # from silently regressing
    assert all(r.passed for r in rows)


def test_c14_monotonicity_and_overlap(bank):
    assert_hard_rows(run_suite("monotonicity", bank))
