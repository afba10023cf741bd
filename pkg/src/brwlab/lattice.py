"""Lazy nearest-neighbor lattice kernel on Z^d.

The walk steps uniformly over the 2d+1 sites at distance <= 1 from its current
position (holding included), so the one-step Markov operator is

    (P f)(x) = (2d+1)^{-1} sum_{e in N} f(x - e),

and P_n denotes the n-step transition probabilities started from the origin.
Fields are dense real arrays over a centered box {-R..R}^d; a field carries a
certified `tail_bound` on the mass living outside its box.  Clamped recursions
kill mass at the box boundary, so stored values are exact lower bounds and the
killed mass is tracked exactly.

All field arithmetic is double precision and every kernel is a fixed-order
numpy reduction, so results are bit-identical across runs and thread counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np
from scipy.signal import convolve as _direct_convolve

Site = tuple[int, ...]


def neighborhood(d: int) -> np.ndarray:
    """The 2d+1 neighbor offsets, hold first then +e1, -e1, +e2, ... (fixed order)."""
    offs = [np.zeros(d, dtype=np.int64)]
    for axis in range(d):
        for sign in (1, -1):
            e = np.zeros(d, dtype=np.int64)
            e[axis] = sign
            offs.append(e)
    return np.array(offs)


@dataclass
class Field:
    """Dense real field on the centered box {-R..R}^d.

    `tail_bound` certifies the total mass outside the box for probability-type
    fields; it never decreases under the operations in this module.
    """

    dim: int
    radius: int
    values: np.ndarray
    tail_bound: float = 0.0
    step: int | None = None  # generation index for fields indexed by time

    def __post_init__(self):
        expect = (2 * self.radius + 1,) * self.dim
        if self.values.shape != expect:
            raise ValueError(f"field shape {self.values.shape} != {expect}")

    @classmethod
    def zeros(cls, d: int, radius: int, tail_bound: float = 0.0) -> "Field":
        return cls(d, radius, np.zeros((2 * radius + 1,) * d), tail_bound)

    @classmethod
    def delta(cls, d: int) -> "Field":
        f = cls.zeros(d, 0)
        f.values[(0,) * d] = 1.0
        f.step = 0
        return f

    def copy(self) -> "Field":
        return Field(self.dim, self.radius, self.values.copy(), self.tail_bound, self.step)

    def index_of(self, site: Sequence[int]) -> tuple[int, ...]:
        return tuple(int(c) + self.radius for c in site)

    def in_box(self, site: Sequence[int]) -> bool:
        return all(abs(int(c)) <= self.radius for c in site)

    def value_at(self, site: Sequence[int]) -> float:
        if not self.in_box(site):
            raise IndexError(f"site {tuple(site)} outside box of radius {self.radius}")
        return float(self.values[self.index_of(site)])

    def lookup(self, site: Sequence[int], default: float = 0.0) -> float:
        return self.value_at(site) if self.in_box(site) else default

    def total(self) -> float:
        return float(self.values.sum())


def symmetric_stencil_sum(src: np.ndarray, d: int) -> np.ndarray:
    """Sum of the 2d+1 neighbor translates of a padded source, organized so
    that mirror-symmetric and permutation-symmetric inputs give bit-identical
    symmetric outputs: opposite shifts are added pairwise (commutative), and
    for d = 3 the axis pair-sums are sorted elementwise before reduction.

    `src` must be padded by one cell on each side; the result has the
    unpadded shape."""
    size = src.shape[0] - 2
    base = tuple(slice(1, 1 + size) for _ in range(d))
    pairs = []
    for axis in range(d):
        hi = list(base)
        hi[axis] = slice(2, 2 + size)
        lo = list(base)
        lo[axis] = slice(0, size)
        pairs.append(src[tuple(hi)] + src[tuple(lo)])
    if d == 1:
        acc = pairs[0]
    elif d == 2:
        acc = pairs[0] + pairs[1]
    else:
        s = np.sort(np.stack(pairs), axis=0)
        acc = (s[0] + s[1]) + s[2]
    return acc + src[base]


def apply_markov(f: Field, clamp: int | None = None) -> Field:
    """One application of the averaging operator P; output radius grows by one
    unless clamped, in which case the exactly-dropped mass is added to the
    tail bound."""
    d, R = f.dim, f.radius
    out_R = R + 1
    src = np.zeros((2 * R + 5,) * d)
    src[tuple(slice(2, 2 * R + 3) for _ in range(d))] = f.values
    vals = symmetric_stencil_sum(src, d)
    vals /= 2 * d + 1
    tail = f.tail_bound
    if clamp is not None and out_R > clamp:
        lo, hi = out_R - clamp, out_R + clamp + 1
        crop = vals[tuple(slice(lo, hi) for _ in range(d))].copy()
        tail += float(vals.sum() - crop.sum())
        vals, out_R = crop, clamp
    out = Field(d, out_R, vals, tail)
    out.step = None if f.step is None else f.step + 1
    return out


def transition_field(n: int, d: int, clamp: int | None = None) -> Field:
    """Exact P_n on the box of radius min(n, clamp).

    When clamped, the recursion kills mass at the boundary; the stored values
    are then pointwise lower bounds on P_n and `tail_bound` is the exact
    killed mass, itself bounded by `escape_bound(n, d, clamp)`.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    f = Field.delta(d)
    for _ in range(n):
        f = apply_markov(f, clamp=clamp)
    return f


def convolve(f: Field, g: Field) -> Field:
    """Dense direct convolution (no FFT); tail bounds compose additively."""
    if f.dim != g.dim:
        raise ValueError("dimension mismatch")
    vals = _direct_convolve(f.values, g.values, mode="full", method="direct")
    out = Field(f.dim, f.radius + g.radius, vals, f.tail_bound + g.tail_bound)
    if f.step is not None and g.step is not None:
        out.step = f.step + g.step
    return out


def sample_srw(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Path of a lazy simple random walk from the origin: array (n+1, d)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    offs = neighborhood(d)
    idx = rng.integers(0, 2 * d + 1, size=n)
    path = np.zeros((n + 1, d), dtype=np.int64)
    if n:
        np.cumsum(offs[idx], axis=0, out=path[1:])
    return path


def sample_srw_batch(n: int, d: int, reps: int, rng: np.random.Generator) -> np.ndarray:
    """Positions S_0..S_n for `reps` independent walks: array (reps, n+1, d)."""
    offs = neighborhood(d)
    idx = rng.integers(0, 2 * d + 1, size=(reps, n))
    path = np.zeros((reps, n + 1, d), dtype=np.int64)
    if n:
        np.cumsum(offs[idx], axis=1, out=path[:, 1:])
    return path


# ---------------------------------------------------------------------------
# Clamp policy and certified tail bounds.


def hoeffding_tail(n: int, d: int, radius: int) -> float:
    """Sub-Gaussian bound 2d*exp(-R^2/(2n)) on the exit probability."""
    if n == 0:
        return 0.0
    return min(1.0, 2 * d * math.exp(-(radius**2) / (2.0 * n)))


def escape_bound(n: int, d: int, radius: int) -> float:
    """Certified Chernoff bound on P(some coordinate leaves [-R, R] within n steps).

    Valid for the running maximum (Doob), hence for the killed recursion.
    Any grid value of t yields a rigorous bound; the grid minimum only
    tightens it.
    """
    if n == 0 or radius > n:
        return 0.0
    t = np.linspace(1e-3, 25.0, 800)
    log_m = np.log((2 * d - 1 + 2 * np.cosh(t)) / (2 * d + 1))
    best = float(np.min(-t * radius + n * log_m))
    return min(1.0, 2 * d * math.exp(best))


def clamp_radius(n: int, d: int, eps: float = 1e-12) -> int:
    """Smallest box radius whose certified escape bound is below eps."""
    if n <= 1:
        return max(n, 1)
    lo, hi = 1, n
    if escape_bound(n, d, hi) > eps:
        return n
    while lo < hi:
        mid = (lo + hi) // 2
        if escape_bound(n, d, mid) <= eps:
            hi = mid
        else:
            lo = mid + 1
    return lo


def default_clamp(n: int, c: float = 6.0) -> int:
    """Default clamp policy radius ceil(c*sqrt(n*ln(n+2)))."""
    return math.ceil(c * math.sqrt(n * math.log(n + 2)))


# ---------------------------------------------------------------------------
# CSV export.


def field_to_csv(f: Field, n: int, fh: IO[str]) -> None:
    """Header `# dim=.. n=.. radius=.. tail_bound=..` then `x1,...,xd,value`
    rows in lexicographic site order."""
    fh.write(f"# dim={f.dim} n={n} radius={f.radius} tail_bound={float(f.tail_bound)!r}\n")
    R = f.radius
    for idx in np.ndindex(*f.values.shape):
        coords = ",".join(str(i - R) for i in idx)
        fh.write(f"{coords},{float(f.values[idx])!r}\n")


def sites_in_ball(d: int, ell: float) -> np.ndarray:
    """Lattice sites with Euclidean norm <= ell, as an (m, d) array."""
    r = int(math.floor(ell))
    axes = [np.arange(-r, r + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    keep = (grid.astype(np.float64) ** 2).sum(axis=1) <= ell**2 + 1e-9
    return grid[keep].astype(np.int64)
