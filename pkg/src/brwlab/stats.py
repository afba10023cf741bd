"""Estimators, confidence intervals, and goodness-of-fit tests for the
simulation harness.  Everything here is a pure function of its sample arrays."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats as sps


@dataclass
class EstimateCI:
    mean: float
    std_error: float
    reps: int
    q10: float | None = None
    q50: float | None = None
    q90: float | None = None

    @classmethod
    def from_samples(cls, x, quantiles: bool = False) -> "EstimateCI":
        x = np.asarray(x, dtype=np.float64)
        if len(x) < 2:
            raise ValueError("need at least 2 samples")
        out = cls(float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x))), len(x))
        if quantiles:
            out.q10, out.q50, out.q90 = (float(q) for q in np.quantile(x, [0.1, 0.5, 0.9]))
        return out

    def covers(self, value: float, z: float = 1.96) -> bool:
        return abs(self.mean - value) <= z * self.std_error


@dataclass
class ReportRow:
    theorem: str
    n: int
    d: int
    offspring: str
    statistic: str
    value: float
    band: str
    passed: bool
    soft: bool = False

    CSV_HEADER = "theorem,n,d,offspring,statistic,value,band,passed,soft"

    def to_csv(self) -> str:
        return (f"{self.theorem},{self.n},{self.d},{self.offspring},"
                f"{self.statistic},{self.value!r},{self.band},"
                f"{int(self.passed)},{int(self.soft)}")


def ks_against_exponential(samples, mean: float, level: float = 0.05) -> dict:
    """One-sample Kolmogorov-Smirnov distance to Exp(mean); asymptotic p-value."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(x)
    if n < 100:
        raise ValueError("need at least 100 samples")
    cdf = -np.expm1(-x / mean)
    hi = np.arange(1, n + 1) / n
    lo = np.arange(0, n) / n
    d = float(max(np.abs(cdf - hi).max(), np.abs(cdf - lo).max()))
    p = float(special.kolmogorov(math.sqrt(n) * d))
    return {"D": d, "n": n, "p_value": p, "passed": p > level}


def chi_square(observed, probs, min_expected: float = 5.0) -> dict:
    """Pearson chi-square of an observed histogram against exact cell
    probabilities; trailing cells are pooled until every expected count is
    at least `min_expected`."""
    obs = np.asarray(observed, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if len(obs) != len(p):
        raise ValueError("histogram and probabilities must align")
    total = obs.sum()
    rest = 1.0 - p.sum()
    if rest > 1e-12:  # implicit everything-else cell
        obs = np.append(obs, 0.0)
        p = np.append(p, rest)
    exp = total * p
    # pool adjacent cells from the tail until every group reaches the minimum
    groups: list[tuple[float, float]] = []
    acc_o = acc_e = 0.0
    for o, e in zip(obs[::-1], exp[::-1]):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            groups.append((acc_o, acc_e))
            acc_o = acc_e = 0.0
    if acc_e > 0:
        if not groups:
            raise ValueError("too few samples for the minimum expected count")
        acc_o += groups[-1][0]
        acc_e += groups[-1][1]
        groups[-1] = (acc_o, acc_e)
    obs_g = np.array([g[0] for g in reversed(groups)])
    exp_g = np.array([g[1] for g in reversed(groups)])
    if len(exp_g) < 2:
        raise ValueError("pooling left a single cell; nothing to test")
    stat = float(((obs_g - exp_g) ** 2 / exp_g).sum())
    dof = len(exp_g) - 1
    return {"stat": stat, "dof": dof, "p_value": float(sps.chi2.sf(stat, dof))}


def tightness_table(samples_by_n: dict[int, np.ndarray], normalizer,
                    ratio_bound: float, q: float = 0.9) -> dict:
    """Upper-quantile stability of X_n / f(n) across a geometric n grid."""
    qs = {n: float(np.quantile(np.asarray(x) / normalizer(n), q))
          for n, x in sorted(samples_by_n.items())}
    vals = list(qs.values())
    ratio = max(vals) / min(vals) if min(vals) > 0 else math.inf
    return {"quantiles": qs, "ratio": ratio, "bound": ratio_bound,
            "passed": ratio <= ratio_bound}


def kappa_estimates(m_hist: np.ndarray, z: np.ndarray, overflow_mass: np.ndarray,
                    j_max: int | None = None) -> dict:
    """Conditional multiplicity fractions kappa_j ~ mean of M_n(j)/Z_n.

    m_hist: (reps, J) histogram, z: (reps,) populations (all > 0),
    overflow_mass: (reps,) particle mass above the histogram cap.
    """
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("kappa estimates need surviving replicates")
    J = m_hist.shape[1] if j_max is None else j_max
    ratios = m_hist[:, :J] / z[:, None]
    reps = len(z)
    kappa = ratios.mean(axis=0)
    se = ratios.std(axis=0, ddof=1) / math.sqrt(reps)
    j = np.arange(1, J + 1)
    weighted = float((kappa * j).sum() + (overflow_mass / z).mean())
    return {"kappa": kappa, "se": se, "weighted_sum": weighted, "reps": reps}


def coverage_selftest(rng: np.random.Generator, p: float = 0.3,
                      trials: int = 1000, samples: int = 400) -> float:
    """Fraction of 95% CIs covering the true Bernoulli mean (sanity >= 0.90)."""
    draws = rng.random((trials, samples)) < p
    means = draws.mean(axis=1)
    ses = np.sqrt(means * (1 - means) / samples)
    covered = np.abs(means - p) <= 1.96 * np.maximum(ses, 1e-12)
    return float(covered.mean())


def write_report_csv(rows, fh, header_lines: list[str] | None = None) -> None:
    for line in header_lines or []:
        fh.write(f"# {line}\n")
    fh.write(ReportRow.CSV_HEADER + "\n")
    for r in rows:
        fh.write(r.to_csv() + "\n")


def summary_dict(rows) -> dict:
    hard = [r for r in rows if not r.soft]
    return {
        "criteria": sorted({r.theorem for r in rows}),
        "rows": len(rows),
        "failed_rows": [f"{r.theorem}:{r.statistic}" for r in rows if not r.passed],
        "hard_pass": all(r.passed for r in hard),
    }
