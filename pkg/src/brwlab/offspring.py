"""Critical offspring laws: mean one, finite positive variance.

Built-in families:
  binary          Q_0 = Q_2 = 1/2 (double-or-nothing), sigma^2 = 1
  geometric:<m>   Q_0 = r, Q_l = (1-r)^2 r^(l-1), r = 1 - 1/m; exponential tail
  zeta:<alpha>    Q_l = c l^(-(alpha+1.5)) for l >= 2, Q_0/Q_1 forcing mean 1;
                  exactly alpha finite integer moments
  table:<l=p,...> inline finite-support law

Sampling of offspring sums is exact: finite support uses sequential binomial
splitting across support values, the geometric family uses its negative
binomial closed form, and infinite-support tables fall back to per-particle
inverse-CDF draws on a cache truncated at cumulative weight 1 - 1e-15.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

_TRUNC = 1e-15
_CHUNK = 4096


class PgfDomainError(ValueError):
    """Argument outside the pgf's radius of convergence."""


@dataclass
class OffspringDist:
    name: str
    support: np.ndarray        # offspring counts l with Q_l > 0 (sorted)
    probs: np.ndarray          # Q_l for each support point
    sigma2: float
    tail_class: str            # "finite-support" | "exponential" | "polynomial"
    z_max: float               # sup of the pgf domain on the positive axis
    geo_r: float | None = None  # closed-form parameter for the geometric family
    _cdf: np.ndarray = dc_field(init=False, repr=False, default=None)

    def __post_init__(self):
        q = self.probs
        if np.any(q <= 0):
            raise ValueError("support must carry strictly positive weights")
        total = float(q.sum())
        mean = float((self.support * q).sum())
        if self.tail_class == "finite-support" and abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total}, not 1")
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"truncated table mass {total} too far from 1")
        if abs(mean - 1.0) > 1e-9:
            raise ValueError(f"offspring mean {mean} is not 1 (criticality)")
        if self.sigma2 <= 0:
            raise ValueError("offspring variance must be positive")
        self._cdf = np.cumsum(q)

    @property
    def is_binary(self) -> bool:
        return self.name == "binary"

    # -- pgf and derivatives --------------------------------------------------

    def pgf(self, z):
        """Phi(z) = sum_l Q_l z^l on [0, z_max]."""
        self._check_domain(z)
        if self.geo_r is not None:
            r = self.geo_r
            return r + (1 - r) ** 2 * z / (1 - r * z)
        if self.name == "binary":
            return 0.5 + 0.5 * np.square(z) if isinstance(z, np.ndarray) else 0.5 + 0.5 * z * z
        return self._series(z, lambda ls, qs, zz: qs * np.power(zz, ls))

    def pgf_prime(self, z):
        """Phi'(z); Phi'(1) = 1 for critical laws."""
        self._check_domain(z)
        if self.geo_r is not None:
            r = self.geo_r
            return (1 - r) ** 2 / np.square(1 - r * np.asarray(z, dtype=np.float64))
        if self.name == "binary":
            return np.asarray(z, dtype=np.float64) if isinstance(z, np.ndarray) else float(z)
        return self._series(z, lambda ls, qs, zz: np.where(ls >= 1, qs * ls, 0.0)
                            * np.power(zz, np.maximum(ls - 1, 0)))

    def pgf_at_one_plus(self, y):
        """Phi(1+y) - 1 in a cancellation-free form (y may be negative)."""
        yy = np.asarray(y, dtype=np.float64)
        self._check_domain(1.0 + yy)
        if self.name == "binary":
            out = yy + 0.5 * np.square(yy)
        elif self.geo_r is not None:
            r = self.geo_r
            out = (1 - r) * yy / ((1 - r) - r * yy)
        else:
            # log1p(-1) = -inf gives expm1(l * -inf) = -1, the exact 0^l - 1;
            # the discarded l = 0 branch evaluates 0 * -inf before np.where
            with np.errstate(divide="ignore", invalid="ignore"):
                return self._series(y, lambda ls, qs, zz: np.where(
                    ls >= 1, qs * np.expm1(ls * np.log1p(zz)), 0.0))
        return out if isinstance(y, np.ndarray) else float(out)

    def _series(self, z, term):
        zz = np.asarray(z, dtype=np.float64)
        acc = np.zeros_like(zz)
        for i in range(0, len(self.support), _CHUNK):
            ls = self.support[i:i + _CHUNK].astype(np.float64)
            qs = self.probs[i:i + _CHUNK]
            acc = acc + term(ls, qs, zz[..., None]).sum(axis=-1)
        return acc if isinstance(z, np.ndarray) else float(acc)

    def _check_domain(self, z):
        arr = np.atleast_1d(np.asarray(z, dtype=np.float64))
        if float(arr.min()) < 0 or float(arr.max()) > self.z_max * (1 + 1e-12):
            raise PgfDomainError(f"pgf argument outside [0, {self.z_max}]")

    def moment(self, k: int) -> float:
        """k-th moment of the (truncated) table."""
        return float((self.probs * self.support.astype(np.float64) ** k).sum())

    # -- exact sampling ---------------------------------------------------------

    def sample_offspring_sum(self, k, rng: np.random.Generator):
        """Sum of k iid offspring draws (the k-fold convolution), exactly.

        `k` may be a scalar or an integer array; the output matches its shape.
        """
        karr = np.atleast_1d(np.asarray(k, dtype=np.int64))
        if np.any(karr < 0):
            raise ValueError("parent count must be >= 0")
        if self.name == "binary":
            out = 2 * rng.binomial(karr, 0.5)
        elif self.geo_r is not None:
            r = self.geo_r
            born = rng.binomial(karr, 1.0 - r)
            extra = np.zeros_like(born)
            pos = born > 0
            if np.any(pos):
                extra[pos] = rng.negative_binomial(born[pos], 1.0 - r)
            out = born + extra
        elif self.tail_class == "finite-support":
            out = self._sum_by_splitting(karr, rng)
        else:
            out = self._sum_by_expansion(karr, rng)
        return out if isinstance(k, np.ndarray) else int(out[0])

    def _sum_by_splitting(self, karr, rng):
        # multinomial over support values via sequential binomial splitting
        rem = karr.copy()
        remaining_p = 1.0
        out = np.zeros_like(karr)
        for l, q in zip(self.support, self.probs):
            if remaining_p <= 0 or not rem.any():
                break
            c = rng.binomial(rem, min(1.0, q / remaining_p))
            out += l * c
            rem -= c
            remaining_p -= q
        return out

    def _sum_by_expansion(self, karr, rng):
        # one inverse-CDF draw per particle, then segment sums
        total = int(karr.sum())
        out = np.zeros_like(karr)
        if total == 0:
            return out
        u = rng.random(total)
        idx = np.searchsorted(self._cdf, u * self._cdf[-1], side="right")
        draws = self.support[idx.clip(0, len(self.support) - 1)]
        seg = np.repeat(np.arange(len(karr)), karr)
        np.add.at(out, seg, draws)
        return out

    def population_step(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Next-generation sizes for an array of current populations."""
        return self.sample_offspring_sum(z, rng)


# ---------------------------------------------------------------------------
# Built-in families.


def binary() -> OffspringDist:
    return OffspringDist(
        name="binary",
        support=np.array([0, 2], dtype=np.int64),
        probs=np.array([0.5, 0.5]),
        sigma2=1.0,
        tail_class="finite-support",
        z_max=math.inf,
    )


def geometric(m: float) -> OffspringDist:
    """Exponential-tail family; m > 1 is the mean offspring count of parents
    that reproduce at all.  m = 2 gives the standard critical geometric law."""
    if m <= 1:
        raise ValueError("geometric family needs m > 1")
    r = 1.0 - 1.0 / m
    # table kept for inspection; sampling and pgf use the closed forms
    ls, qs = [0], [r]
    mass, l, ql = r, 1, (1 - r) ** 2
    while mass < 1 - _TRUNC and l < 5_000_000:
        ls.append(l)
        qs.append(ql)
        mass += ql
        l += 1
        ql *= r
    return OffspringDist(
        name=f"geometric:{m:g}",
        support=np.array(ls, dtype=np.int64),
        probs=np.array(qs),
        sigma2=2 * r / (1 - r),
        tail_class="exponential",
        z_max=1.0 / r,
        geo_r=r,
    )


def zeta(alpha: float) -> OffspringDist:
    """Polynomial-tail family with exactly `alpha` finite integer moments:
    Q_l = c*l^(-(alpha+1.5)) for l >= 2, scale fixed by sum_{l>=2} l*Q_l = 1/2."""
    if alpha < 2:
        raise ValueError("zeta family needs alpha >= 2 (finite variance)")
    power = alpha + 1.5
    lmax = int(math.ceil((10.0 / _TRUNC) ** (1.0 / (power - 1.0)))) + 10
    ls = np.arange(2, lmax + 1, dtype=np.int64)
    w = ls.astype(np.float64) ** (-power)
    c = 0.5 / float((ls * w).sum())
    q = c * w
    s0 = float(q.sum())
    q0 = 0.5 - s0
    if q0 <= 0:
        raise ValueError("zeta normalization failed")
    support = np.concatenate(([0, 1], ls))
    probs = np.concatenate(([q0, 0.5], q))
    sigma2 = float((probs * support.astype(np.float64) ** 2).sum()) - 1.0
    return OffspringDist(
        name=f"zeta:{alpha:g}",
        support=support,
        probs=probs,
        sigma2=sigma2,
        tail_class="polynomial",
        z_max=1.0,
    )


def table(entries: dict[int, float], name: str = "table") -> OffspringDist:
    ls = np.array(sorted(entries), dtype=np.int64)
    qs = np.array([entries[int(l)] for l in ls])
    sigma2 = float((qs * ls.astype(np.float64) ** 2).sum()) - 1.0
    return OffspringDist(
        name=name,
        support=ls,
        probs=qs,
        sigma2=sigma2,
        tail_class="finite-support",
        z_max=math.inf,
    )


def parse_offspring(spec: str) -> OffspringDist:
    """Config syntax: binary | geometric:<m> | zeta:<alpha> | table:l=p,l=p,..."""
    spec = spec.strip()
    if spec == "binary":
        return binary()
    if spec.startswith("geometric:"):
        return geometric(float(spec.split(":", 1)[1]))
    if spec.startswith("zeta:"):
        return zeta(float(spec.split(":", 1)[1]))
    if spec.startswith("table:"):
        entries = {}
        for part in spec.split(":", 1)[1].split(","):
            l, p = part.split("=")
            entries[int(l)] = float(p)
        return table(entries, name=spec)
    raise ValueError(f"unknown offspring spec {spec!r}")


def theorem3_delta(dist: OffspringDist, d: int) -> float:
    """Largest exponent delta for which fixed-site pileups force
    V_n >= delta*log(n) with conditional probability -> 1:
    sup over support points l0 > 1 of (l0-1)/(-l0*log p), where
    p = Q_{l0} * (2d+1)^{-l0} is the probability that a parent produces l0
    children and all of them hold still.  The ratio decays once l0*log(2d+1)
    dominates, so scanning the first thousand support points suffices."""
    best = -math.inf
    for l, q in zip(dist.support, dist.probs):
        if l <= 1:
            continue
        p = q * (1.0 / (2 * d + 1)) ** int(l)
        best = max(best, (l - 1) / (-l * math.log(p)))
        if l > 1000:
            break
    if best == -math.inf:
        raise ValueError("degenerate offspring law: no support point above 1")
    return best
