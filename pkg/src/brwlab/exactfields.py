"""Exact deterministic recursions for the critical branching random walk.

Everything here is obtained by conditioning on the first generation:

  survival        s_{k+1} = 1 - Phi(1 - s_k)
  hitting         u_k(x) = P{U_k(x) >= 1}; binary form u_{k+1} = Pu_k - (Pu_k)^2/2,
                  general form via extinction fields h_{k+1} = Phi(P h_k)
  mgf             G_{k+1}(x) = Phi(1 + P G_k(x)) - 1,  G_k(x) = E exp(theta U_k(x)) - 1
  dominating      H_1 = G_1,  H_{k+1} = (P H_k) * Phi'(1 + H_k(0))
  second moment   f_k = P f_{k-1} + sigma^2 * P_k^2,   f_k(x) = E U_k(x)^2
  pmf oracle      per-site generating polynomials C_k(x) = E s^{U_k(x)},
                  C_{k+1} = Phi(P C_k) truncated at a fixed degree

plus the quadratic super-solution bump v_n(x) = kappa/(n log n) *
exp(-beta_n |x|^2 / (2n)) and its one-step inequality / comparison checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import Field, transition_field, clamp_radius
from .offspring import OffspringDist


class MgfBlowupError(ArithmeticError):
    """Raised when an mgf recursion leaves the pgf domain ("mgf blowup at step n")."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"mgf blowup at step {step}")


class PmfTruncationError(ValueError):
    """Raised when the pmf oracle cannot certify its truncated mass below 1e-9."""


# ---------------------------------------------------------------------------
# scalar survival recursion


def survival_sequence(dist: OffspringDist, n: int) -> np.ndarray:
    """s_0..s_n with s_k = P(Z_k > 0), via s_{k+1} = 1 - Phi(1 - s_k)."""
    s = np.empty(n + 1)
    s[0] = 1.0
    for k in range(n):
        s[k + 1] = -dist.pgf_at_one_plus(-s[k])
    return s


def survival_prob(dist: OffspringDist, n: int) -> float:
    if n < 0:
        raise ValueError("n must be >= 0")
    return float(survival_sequence(dist, n)[n])


# ---------------------------------------------------------------------------
# stencil helper: mean over the 2d+1 neighbors with a configurable pad value


def _pmean(vals: np.ndarray, d: int, pad: float = 0.0, clamp: int | None = None):
    """(vals', lost): one averaging step, output radius +1 unless clamped.

    `pad` is the implicit field value outside the input box (0 for mass-type
    fields, 1 for extinction-probability fields).  `lost` is the exact mass
    dropped by cropping (only meaningful for pad=0).  Uses the symmetric
    stencil reduction so symmetric inputs stay bit-exactly symmetric."""
    from .lattice import symmetric_stencil_sum

    R = (vals.shape[0] - 1) // 2
    src = np.full((2 * R + 5,) * d, pad, dtype=np.float64)
    src[tuple(slice(2, 2 * R + 3) for _ in range(d))] = vals
    out = symmetric_stencil_sum(src, d)
    out /= 2 * d + 1
    lost = 0.0
    out_R = R + 1
    if clamp is not None and out_R > clamp:
        lo, hi = out_R - clamp, out_R + clamp + 1
        crop = out[tuple(slice(lo, hi) for _ in range(d))].copy()
        if pad == 0.0:
            lost = float(out.sum() - crop.sum())
        out = crop
    return out, lost


# ---------------------------------------------------------------------------
# hitting probability fields


def hitting_field(dist: OffspringDist, n: int, d: int = 2,
                  clamp: int | None = None, method: str = "auto") -> Field:
    """u_n(x) = P{U_n(x) >= 1} started from one particle at the origin.

    method "kpp" (binary only) iterates u <- Pu - (Pu)^2/2 directly;
    method "pgf" iterates extinction fields h <- Phi(P h) with h_0 = 1 - delta
    and returns 1 - h.  "auto" picks kpp for binary fission.
    """
    return hitting_bank(dist, n, d, clamp, method)[n]


def hitting_bank(dist: OffspringDist, n: int, d: int = 2,
                 clamp: int | None = None, method: str = "auto") -> list[Field]:
    """[u_0, ..., u_n] in one sweep (shared by the conditioned-walk sampler)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if method == "auto":
        method = "kpp" if dist.is_binary else "pgf"
    if method == "kpp" and not dist.is_binary:
        raise ValueError("the quadratic recursion form is binary-only")
    bank = []
    if method == "kpp":
        vals = np.ones((1,) * d)
        tail = 0.0
        bank.append(Field(d, 0, vals.copy(), 0.0, step=0))
        for k in range(n):
            pu, lost = _pmean(vals, d, pad=0.0, clamp=clamp)
            vals = pu - 0.5 * np.square(pu)
            tail += lost
            f = Field(d, (vals.shape[0] - 1) // 2, vals, tail)
            f.step = k + 1
            bank.append(f)
    else:
        h = np.zeros((1,) * d)  # h_0 = 1 - delta; the pad supplies the ones
        bank.append(Field.delta(d))
        for k in range(n):
            ph, _ = _pmean(h, d, pad=1.0, clamp=clamp)
            h = np.asarray(dist.pgf(ph))
            f = Field(d, (h.shape[0] - 1) // 2, 1.0 - h, 0.0)
            f.step = k + 1
            bank.append(f)
    return bank


def mean_occupied(dist: OffspringDist, n: int, d: int = 2,
                  clamp: int | None = None) -> tuple[float, float]:
    """(sum_x u_n(x), certified tail) — the expected number of occupied sites.

    The out-of-box deficit is at most the transition-field tail, since
    u_n <= P_n pointwise."""
    if clamp is None:
        clamp = clamp_radius(n, d, 1e-12) if n > 16 else None
    u = hitting_field(dist, n, d, clamp=clamp)
    tail = transition_field(n, d, clamp=clamp).tail_bound if clamp is not None else 0.0
    return u.total(), tail


# ---------------------------------------------------------------------------
# mgf and dominating fields


def mgf_field(dist: OffspringDist, n: int, theta: float, d: int = 2,
              clamp: int | None = None) -> Field:
    return mgf_bank(dist, n, theta, d, clamp)[n]


def mgf_bank(dist: OffspringDist, n: int, theta: float, d: int = 2,
             clamp: int | None = None) -> list[Field]:
    """[G_0, ..., G_n] for G_k(x;theta) = E exp(theta U_k(x)) - 1."""
    if theta < 0:
        raise ValueError("theta must be >= 0")
    vals = np.full((1,) * d, math.expm1(theta))
    if 1.0 + vals[(0,) * d] > dist.z_max:
        raise MgfBlowupError(0)
    bank = [Field(d, 0, vals.copy(), 0.0, step=0)]
    for k in range(n):
        pg, _ = _pmean(vals, d, pad=0.0, clamp=clamp)
        if 1.0 + float(pg.max()) > dist.z_max * (1 - 1e-12):
            raise MgfBlowupError(k + 1)
        vals = np.asarray(dist.pgf_at_one_plus(pg))
        if not np.all(np.isfinite(vals)):
            raise MgfBlowupError(k + 1)
        f = Field(d, (vals.shape[0] - 1) // 2, vals, 0.0)
        f.step = k + 1
        bank.append(f)
    return bank


def mgf_sum_sequence(dist: OffspringDist, n: int, theta: float, d: int = 2,
                     clamp: int | None = None) -> np.ndarray:
    """sum_x G_k(x;theta) for k = 0..n (one sweep)."""
    return np.array([f.total() for f in mgf_bank(dist, n, theta, d, clamp)])


def dominating_field(dist: OffspringDist, n: int, theta: float, d: int = 2,
                     clamp: int | None = None, check_closed_form: bool = True) -> Field:
    """H_n with H_1 = G_1 and H_{k+1} = (P H_k) * Phi'(1 + H_k(0)).

    The iterative values are cross-checked against the closed product form
    H_n(x) = P_n(x) * (2d+1) * H_1(0) * prod_{j<n} Phi'(1 + H_j(0)) to 1e-10.
    """
    if n < 1:
        raise ValueError("H_n is defined for n >= 1")
    g1 = mgf_field(dist, 1, theta, d)
    vals = g1.values.copy()
    center_hist = []
    for k in range(1, n):
        h0 = float(vals[(vals.shape[0] // 2,) * d])
        if 1.0 + h0 > dist.z_max * (1 - 1e-12):
            raise MgfBlowupError(k + 1)
        center_hist.append(h0)
        ph, _ = _pmean(vals, d, pad=0.0, clamp=clamp)
        vals = ph * float(dist.pgf_prime(1.0 + h0))
        if not np.all(np.isfinite(vals)):
            raise MgfBlowupError(k + 1)
    out = Field(d, (vals.shape[0] - 1) // 2, vals, 0.0)
    out.step = n
    if check_closed_form:
        pn = transition_field(n, d, clamp=clamp)
        h1_0 = g1.value_at((0,) * d)
        prod = h1_0 * (2 * d + 1)
        for h0 in center_hist:
            prod *= float(dist.pgf_prime(1.0 + h0))
        closed = pn.values * prod
        if pn.radius != out.radius:
            raise AssertionError("closed-form box mismatch")
        err = float(np.abs(closed - out.values).max())
        if err > 1e-10:
            raise AssertionError(f"closed product form deviates by {err}")
    return out


# ---------------------------------------------------------------------------
# exact second moments


def second_moment_field(dist: OffspringDist, n: int, d: int = 2,
                        clamp: int | None = None) -> Field:
    return second_moment_sweep(dist, n, d, clamp)[0]


def _octant_stencil(src: np.ndarray, dst: np.ndarray, d: int) -> None:
    """One averaging step on the nonnegative orthant of a fully symmetric
    field: index 0 reflects (the -1 neighbor equals the +1 one), the outer
    face kills.  Exact for fields symmetric under coordinate sign flips."""
    dst[...] = src
    for ax in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        dst[tuple(lo)] += src[tuple(hi)]
        dst[tuple(hi)] += src[tuple(lo)]
        zero = [slice(None)] * d
        zero[ax] = 0
        one = [slice(None)] * d
        one[ax] = 1
        dst[tuple(zero)] += src[tuple(one)]
    dst /= 2 * d + 1


def _octant_weights(radius: int, d: int) -> np.ndarray:
    w = np.ones((radius + 1,) * d)
    for ax in range(d):
        sl = [slice(None)] * d
        sl[ax] = slice(1, None)
        w[tuple(sl)] *= 2.0
    return w


def _unfold_octant(oct_vals: np.ndarray, d: int) -> np.ndarray:
    R = oct_vals.shape[0] - 1
    full = np.empty((2 * R + 1,) * d)
    for idx in np.ndindex(*(2,) * d):
        sl_full, sl_oct = [], []
        for ax, mirrored in enumerate(idx):
            if mirrored:
                sl_full.append(slice(0, R))
                sl_oct.append(slice(R, 0, -1))
            else:
                sl_full.append(slice(R, 2 * R + 1))
                sl_oct.append(slice(0, R + 1))
        full[tuple(sl_full)] = oct_vals[tuple(sl_oct)]
    return full


def second_moment_sweep(dist: OffspringDist, n: int, d: int = 2,
                        clamp: int | None = None):
    """(f_n, sums) where f_n(x) = E U_n(x)^2 and sums[k] = sum_x f_k(x).

    Linear recursion f_k = P f_{k-1} + sigma^2 * P_k^2 from first-generation
    conditioning; P_k is advanced alongside on the same box.  Clamped sweeps
    fold onto one octant (both fields are symmetric under sign flips and
    coordinate permutations of the initial delta).
    """
    sig2 = dist.sigma2
    sums = np.empty(n + 1)
    sums[0] = 1.0
    if clamp is not None:
        shape = (clamp + 1,) * d
        p = np.zeros(shape)
        f = np.zeros(shape)
        p[(0,) * d] = 1.0
        f[(0,) * d] = 1.0
        scratch = np.empty(shape)
        w = _octant_weights(clamp, d)
        for k in range(1, n + 1):
            _octant_stencil(p, scratch, d)
            p, scratch = scratch, p
            _octant_stencil(f, scratch, d)
            f, scratch = scratch, f
            f += sig2 * np.square(p)
            sums[k] = float((w * f).sum())
        full = _unfold_octant(f, d)
        escaped = max(0.0, 1.0 - float((w * p).sum()))  # exact killed P mass
        out = Field(d, clamp, full, escaped)
        out.step = n
        return out, sums
    f = np.ones((1,) * d)
    p = np.ones((1,) * d)
    for k in range(1, n + 1):
        p, _ = _pmean(p, d, pad=0.0, clamp=None)
        pf, _ = _pmean(f, d, pad=0.0, clamp=None)
        f = pf + sig2 * np.square(p)
        sums[k] = float(f.sum())
    out = Field(d, (f.shape[0] - 1) // 2, f, 0.0)
    out.step = n
    return out, sums


# ---------------------------------------------------------------------------
# exact pmf oracle (truncated per-site generating polynomials)


@dataclass
class PmfField:
    """Exact truncated pmf of U_n(x) per site.

    coeffs[..., k] = P{U_n(x) = k} for k <= degree; truncating polynomial
    products leaves the low-order coefficients exact, so the per-site deficit
    1 - sum_k coeffs is the exact mass sitting above the truncation degree
    (plus the certified epsilon dropped from infinite offspring tables).
    """

    dim: int
    radius: int
    degree: int
    coeffs: np.ndarray
    step: int

    def deficit(self) -> np.ndarray:
        return 1.0 - self.coeffs.sum(axis=-1)

    def p0_field(self) -> Field:
        return Field(self.dim, self.radius, self.coeffs[..., 0].copy(), 0.0, self.step)

    def hitting_values(self) -> Field:
        return Field(self.dim, self.radius, 1.0 - self.coeffs[..., 0], 0.0, self.step)

    def mean_field(self) -> Field:
        k = np.arange(self.degree + 1, dtype=np.float64)
        return Field(self.dim, self.radius, self.coeffs @ k, 0.0, self.step)

    def second_moment_values(self) -> Field:
        k = np.arange(self.degree + 1, dtype=np.float64)
        return Field(self.dim, self.radius, self.coeffs @ (k * k), 0.0, self.step)

    def pmf_at(self, site) -> np.ndarray:
        idx = tuple(int(c) + self.radius for c in site)
        return self.coeffs[idx].copy()

    def conditional_pmf_at(self, site) -> np.ndarray:
        """pmf of U_n(x) given U_n(x) >= 1 (index k-1 holds P(U=k | U>=1))."""
        p = self.pmf_at(site)
        u = 1.0 - p[0]
        if u <= 0:
            raise ValueError(f"site {tuple(site)} is unreachable at step {self.step}")
        return p[1:] / u


def _poly_mult_trunc(a: np.ndarray, b: np.ndarray, degree: int) -> np.ndarray:
    out = np.zeros_like(a)
    for k in range(degree + 1):
        out[..., k] = np.einsum("...j,...j->...", a[..., : k + 1], b[..., k::-1])
    return out


def pmf_oracle(dist: OffspringDist, n: int, d: int = 2, degree: int = 64,
               max_deficit: float = 1e-9) -> PmfField:
    """Exact law of U_n(x) truncated at `degree`; refuses (raises) when the
    exact truncated mass exceeds `max_deficit` at any site."""
    if len(dist.support) > 4096:
        raise PmfTruncationError("pmf oracle needs a (truncated) support of workable size")
    coeffs = np.zeros((1,) * d + (degree + 1,))
    coeffs[(0,) * d + (1,)] = 1.0
    for k in range(n):
        R = (coeffs.shape[0] - 1) // 2
        size = 2 * R + 3
        src = np.zeros((2 * R + 5,) * d + (degree + 1,))
        src[..., 0] = 1.0  # outside the box U = 0 a.s., pgf identically 1
        src[tuple(slice(2, 2 * R + 3) for _ in range(d))] = coeffs
        base = tuple(slice(1, 1 + size) for _ in range(d))
        acc = src[base].copy()
        for axis in range(d):
            for shift in (1, -1):
                sl = list(base)
                sl[axis] = slice(1 + shift, 1 + shift + size)
                acc += src[tuple(sl)]
        acc /= 2 * d + 1
        # compose Phi: sum_l Q_l * acc^l with truncated powers
        out = np.zeros_like(acc)
        power = None
        prev_l = 0
        for l, q in zip(dist.support, dist.probs):
            l = int(l)
            if l == 0:
                out[..., 0] += q
                continue
            if power is None:
                power = acc.copy()
                prev_l = 1
            while prev_l < l:
                power = _poly_mult_trunc(power, acc, degree)
                prev_l += 1
            out += q * power
        coeffs = out
    pf = PmfField(d, (coeffs.shape[0] - 1) // 2, degree, coeffs, n)
    worst = float(pf.deficit().max())
    if worst > max_deficit:
        raise PmfTruncationError(
            f"truncated mass {worst:.3e} exceeds {max_deficit:.1e} at step {n}; raise the degree")
    return pf


# ---------------------------------------------------------------------------
# super-solution bump and comparison machinery (dimension 2, binary recursion)

BETA = 2.5


@dataclass
class SuperSolutionParams:
    kappa: float
    beta: float = BETA

    def beta_n(self, n) -> float:
        return self.beta * (1.0 - 1.0 / np.log(n))

    def amplitude(self, n) -> float:
        return self.kappa / (n * np.log(n))


KAPPA0 = 4.0 * math.exp(6.0 * BETA)  # smallest prefactor covering the core regime


def supersolution_field(params: SuperSolutionParams, n: int, d: int = 2,
                        radius: int | None = None) -> Field:
    """v_n(x) = kappa/(n log n) * exp(-beta_n |x|^2 / (2n)) on a centered box."""
    if d != 2:
        raise ValueError("the super-solution construction is two-dimensional")
    if n < 2:
        raise ValueError("needs n >= 2 (log n)")
    if radius is None:
        radius = 3 * n
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    sq = ax[:, None] ** 2 + ax[None, :] ** 2
    vals = params.amplitude(n) * np.exp(-params.beta_n(n) * sq / (2.0 * n))
    f = Field(2, radius, vals, 0.0)
    f.step = n
    return f


def _quadrant_v(params: SuperSolutionParams, n: int, size: int) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64)
    sq = ax[:, None] ** 2 + ax[None, :] ** 2
    return params.amplitude(n) * np.exp(-params.beta_n(n) * sq / (2.0 * n))


def supersolution_margin(params: SuperSolutionParams, n: int):
    """min over |x| <= 3n of v_{n+1}(x) - (Pv_n)(x)*(1 - (Pv_n)(x)/2).

    Evaluated in closed form on one quadrant (v is even in each coordinate)
    with the exact 5-point average for Pv.  Returns (min_margin, argmin site).
    """
    S = 3 * n  # margin grid: 0 <= x1, x2 <= 3n
    q = _quadrant_v(params, n, S + 2)
    center = q[: S + 1, : S + 1]
    x_plus = q[1: S + 2, : S + 1]
    x_minus = np.concatenate([q[1:2, : S + 1], q[: S, : S + 1]], axis=0)
    y_plus = q[: S + 1, 1: S + 2]
    y_minus = np.concatenate([q[: S + 1, 1:2], q[: S + 1, : S]], axis=1)
    pv = (center + x_plus + x_minus + y_plus + y_minus) / 5.0
    margin = _quadrant_v(params, n + 1, S + 1) - pv * (1.0 - 0.5 * pv)
    ax = np.arange(S + 1, dtype=np.float64)
    inside = (ax[:, None] ** 2 + ax[None, :] ** 2) <= (3.0 * n) ** 2
    masked = np.where(inside, margin, np.inf)
    flat = int(np.argmin(masked))
    i, j = divmod(flat, S + 1)
    return float(masked[i, j]), (i, j)


def _regime(n: int, site) -> str:
    r2 = site[0] ** 2 + site[1] ** 2
    if r2 <= 10 * n:
        return "core"
    if r2 >= (3 * n - 1) ** 2:
        return "edge"
    return "mid"


def verify_supersolution(params: SuperSolutionParams, n_range) -> dict:
    """Direct numerical check of the one-step inequality over n_range.

    holds=False is a valid outcome; the report carries the violating point.
    """
    if params.kappa <= 0:
        return {"params": {"kappa": params.kappa, "beta": params.beta},
                "n_range": [int(min(n_range)), int(max(n_range))], "holds": False,
                "min_margin": -math.inf, "argmin": None,
                "note": "degenerate prefactor: the zero bump dominates nothing"}
    worst = math.inf
    arg = None
    holds = True
    for n in n_range:
        m, site = supersolution_margin(params, int(n))
        if m < worst:
            worst, arg = m, {"n": int(n), "x": [int(site[0]), int(site[1])],
                             "regime": _regime(int(n), site)}
        if m < 0:
            holds = False
    return {
        "params": {"kappa": params.kappa, "beta": params.beta},
        "n_range": [int(min(n_range)), int(max(n_range))],
        "holds": holds,
        "min_margin": worst,
        "argmin": arg,
    }


def find_supersolution_start(kappa: float = KAPPA0, cap: int = 256) -> int:
    """Smallest N0 <= cap with nonnegative margin on all of [N0, 4*N0]."""
    params = SuperSolutionParams(kappa)
    n0 = 2
    margins: dict[int, float] = {}

    def margin(n: int) -> float:
        if n not in margins:
            margins[n] = supersolution_margin(params, n)[0]
        return margins[n]

    while n0 <= cap:
        bad = None
        for n in range(n0, 4 * n0 + 1):
            if margin(n) < 0:
                bad = n
                break
        if bad is None:
            return n0
        n0 = bad + 1
    raise ValueError(f"no super-solution start found below {cap}")


def comparison_shift(kappa0: float = KAPPA0, n_min: int = 2) -> int:
    """Smallest N1 >= n_min with N1*log(N1) >= kappa0, so that the bump with
    prefactor N1*log(N1) starts at height 1 and dominates the point mass."""
    lo, hi = max(n_min, 2), 2
    while hi * math.log(hi) < kappa0:
        hi *= 2
    lo = hi // 2
    while lo < hi:
        mid = (lo + hi) // 2
        if mid * math.log(mid) >= kappa0:
            hi = mid
        else:
            lo = mid + 1
    return max(hi, n_min)


def verify_comparison(u_seq: list[Field], v_seq: list[Field], slack: float = 1e-12) -> bool:
    """True iff v_k >= u_k - slack pointwise for every supplied index, after
    recomputing the binary hitting recursion from u_seq[0] and checking the
    supplied u fields satisfy it to 1e-12."""
    if len(u_seq) != len(v_seq):
        raise ValueError("sequences must align")
    vals = u_seq[0].values.copy()
    d = u_seq[0].dim
    for k, (u, v) in enumerate(zip(u_seq, v_seq)):
        if u.dim != v.dim or u.radius > v.radius:
            raise ValueError("comparison boxes must cover the u boxes")
        if k > 0:
            pu, _ = _pmean(vals, d, pad=0.0, clamp=None)
            vals = pu - 0.5 * np.square(pu)
            if vals.shape != u.values.shape or float(np.abs(vals - u.values).max()) > 1e-12:
                raise ValueError(f"u_seq[{k}] does not satisfy the hitting recursion")
        off = v.radius - u.radius
        vv = v.values[tuple(slice(off, off + 2 * u.radius + 1) for _ in range(d))] \
            if off else v.values
        if float((u.values - vv).max()) > slack:
            return False
    return True
