"""Size-biased sampling: spine constructions under dP_H/dP = Z_n.

Binary fission only.  The size-biased tree is a spine of distinguished
particles, each fissioning surely; the spare child at height j starts an
ordinary branching random walk.  Reversing time turns the count at the
typical site into

    T**_n = 1 + B_0 + sum_{j=2..n} U^{j-1}_{j-1}(S_j + xi_{j-1}),

with S a lazy walk, xi_j uniform neighbor steps, B_0 ~ Bernoulli(1/(2d+1))
and U^i independent unbiased branching random walks.  The sum splits into
Gamma_n = sum_{i=2..n} P_i(S_i) (a walk functional with exact mean
sum P_{2i}(0)) plus a centered part Delta_n with orthogonal increments.

The ball count within distance ell of the typical site has the analogous
representation  W_n = 2 + sum_{i=1..n-1} sum_{|x|<=ell} U^i_i(x + S_{i+1} + xi_i);
the constant 2 presumes the spine tip's sibling lands in the ball, true for
ell >= 2.  Vacancy statistics are sampled from the forward (unreversed)
construction, which realizes the exact joint occupancy law around the tip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import forward as fw
from .exactfields import _pmean
from .lattice import clamp_radius, neighborhood, sample_srw_batch, sites_in_ball
from .offspring import binary

RETURN_COEF_2D = 5.0 / (4.0 * math.pi)  # n * P_n(0) -> 5/(4*pi) in d = 2

_BINARY = binary()
_return_cache: dict[int, np.ndarray] = {}


def return_probs(max_n: int, d: int = 2) -> np.ndarray:
    """P_m(0) for m = 0..max_n, one clamped sweep, cached per dimension."""
    cached = _return_cache.get(d)
    if cached is not None and len(cached) > max_n:
        return cached[: max_n + 1]
    clamp = clamp_radius(max(max_n, 2), d, 1e-14)
    out = np.empty(max_n + 1)
    out[0] = 1.0
    vals = np.ones((1,) * d)
    for m in range(1, max_n + 1):
        vals, _ = _pmean(vals, d, pad=0.0, clamp=clamp)
        out[m] = vals[(vals.shape[0] // 2,) * d]
    _return_cache[d] = out
    return out


def exact_mean_gamma(n: int, d: int = 2) -> float:
    """sum_{i=2}^{n} P_{2i}(0): the exact mean of Gamma_n (and of the attached
    single-site counts in the typical-site representation)."""
    if n < 2:
        return 0.0
    p0 = return_probs(2 * n, d)
    return float(p0[4 : 2 * n + 1 : 2].sum())


def _field_values_at(n: int, d: int, positions: np.ndarray, eps: float = 1e-14):
    """Sweep P_i for i = 1..n, reading each field at positions[:, i, :].

    Returns (vals[reps, n+1], misses per rep); sites outside the clamped box
    read as 0 and count as clamp misses.
    """
    reps = positions.shape[0]
    clamp = clamp_radius(n, d, eps)
    vals = np.zeros((reps, n + 1))
    misses = np.zeros(reps, dtype=np.int64)
    cur = np.ones((1,) * d)
    for i in range(1, n + 1):
        cur, _ = _pmean(cur, d, pad=0.0, clamp=clamp)
        R = (cur.shape[0] - 1) // 2
        pos = positions[:, i, :]
        inside = np.all(np.abs(pos) <= R, axis=1)
        idx = pos[inside] + R
        flat = np.zeros(reps)
        if idx.size:
            flat[inside] = cur[tuple(idx[:, k] for k in range(d))]
        vals[:, i] = flat
        misses += ~inside
    return vals, misses


@dataclass
class SpineRealization:
    """One draw of the distinguished-line construction: the spine path, the
    sibling displacements, the tip-sibling collision coin, and the resulting
    typical-site statistics."""

    S: np.ndarray            # spine positions, (n+1, d)
    xi: np.ndarray           # sibling displacements, (n, d)
    b0: bool
    tstar: int
    gamma: float
    delta: float
    clamp_misses: int


def sample_spine_realization(n: int, d: int = 2,
                             rng: np.random.Generator = None) -> SpineRealization:
    out = spine_typical_batch(n, 1, rng, d, keep_paths=True)
    return SpineRealization(
        S=out["S"][0], xi=out["xi"][0], b0=bool(out["B0"][0]),
        tstar=int(out["Tstar"][0]), gamma=float(out["Gamma"][0]),
        delta=float(out["Delta"][0]), clamp_misses=int(out["clamp_misses"][0]))


def spine_typical_batch(n: int, reps: int, rng: np.random.Generator, d: int = 2,
                        keep_increments: tuple[int, ...] = (),
                        keep_paths: bool = False) -> dict:
    """Batched draws of (T**_n, Gamma_n, Delta_n) under the size-biased law.

    keep_increments: indices i for which the centered increments
    X_{i-1} = U^{i-1}_{i-1}(S_i + xi_{i-1}) - P_i(S_i) are returned
    (orthogonality diagnostics).
    """
    if n < 2:
        raise ValueError("the representation needs n >= 2")
    fw._check_capacity(n, d, reps)
    S = sample_srw_batch(n, d, reps, rng)                  # (reps, n+1, d)
    offs = neighborhood(d)
    xi = offs[rng.integers(0, 2 * d + 1, size=(reps, n))]  # xi_0..xi_{n-1}
    b0 = rng.integers(0, 2 * d + 1, size=reps) == 0
    p_at_s, misses = _field_values_at(n, d, S)
    gamma = p_at_s[:, 2:].sum(axis=1)
    shift = fw._rep_shift(d)
    rep_ids = np.arange(reps, dtype=np.int64) << shift
    origin = fw.encode_sites(np.zeros((1, d)), d)[0]
    u_sum = np.zeros(reps, dtype=np.int64)
    kept = {}
    for j in range(2, n + 1):
        keys = fw.evolve_particles(rep_ids + origin, j - 1, _BINARY, d, rng)
        target = S[:, j, :] + xi[:, j - 1, :]
        qkeys = rep_ids + fw.encode_sites(target, d)
        u_j = np.zeros(reps, dtype=np.int64)
        if keys.size:
            hit = keys == qkeys[keys >> shift]
            if hit.any():
                u_j = np.bincount((keys[hit] >> shift).astype(np.int64),
                                  minlength=reps).astype(np.int64)
        u_sum += u_j
        if j in keep_increments:
            kept[j] = u_j - p_at_s[:, j]
    tstar = 1 + b0.astype(np.int64) + u_sum
    assert tstar.min() >= 1  # the spine survives on every sample
    out = {
        "Tstar": tstar,
        "Gamma": gamma,
        "Delta": u_sum - gamma,
        "B0": b0,
        "clamp_misses": misses,
        "increments": kept,
        "Z_attached_total": u_sum,
    }
    if keep_paths:
        out["S"] = S
        out["xi"] = xi
    return out


def sample_typical_occupancy(n: int, d: int = 2, rng: np.random.Generator = None) -> int:
    """One draw of the particle count at the typical site under the
    size-biased measure (always >= 1: the spine counts itself)."""
    out = spine_typical_batch(n, 1, rng, d)
    return int(out["Tstar"][0])


def sample_gamma_delta(n: int, d: int = 2, rng: np.random.Generator = None) -> tuple[float, float]:
    out = spine_typical_batch(n, 1, rng, d)
    return float(out["Gamma"][0]), float(out["Delta"][0])


# ---------------------------------------------------------------------------
# ball statistics around the typical site


def spine_ball_batch(n: int, ell: float, reps: int, rng: np.random.Generator,
                     d: int = 2) -> np.ndarray:
    """W_n: particles of generation n within Euclidean distance ell of the
    typical site, via the reversed window representation."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    fw._check_capacity(n, d, reps)
    S = sample_srw_batch(n, d, reps, rng)
    offs = neighborhood(d)
    xi = offs[rng.integers(0, 2 * d + 1, size=(reps, n))]
    shift = fw._rep_shift(d)
    rep_ids = np.arange(reps, dtype=np.int64) << shift
    origin = fw.encode_sites(np.zeros((1, d)), d)[0]
    w = np.full(reps, 2, dtype=np.int64)
    ell2 = float(ell) ** 2 + 1e-9
    for i in range(1, n):
        keys = fw.evolve_particles(rep_ids + origin, i, _BINARY, d, rng)
        if keys.size == 0:
            continue
        rep = (keys >> shift).astype(np.int64)
        sites = fw.decode_sites(keys & ((np.int64(1) << shift) - 1), d)
        center = S[:, i + 1, :] + xi[:, i, :]
        rel = sites - center[rep]
        inside = (rel.astype(np.float64) ** 2).sum(axis=1) <= ell2
        if inside.any():
            w += np.bincount(rep[inside], minlength=reps)
    return w


def spine_ball_forward_batch(n: int, ell: float, reps: int,
                             rng: np.random.Generator, d: int = 2) -> dict:
    """Forward spine construction: exact joint occupancy of the ball
    B(S_n; ell) in generation n of the size-biased walk.

    Returns per-replicate particle counts, unoccupied-site counts, and the
    ball size."""
    fw._check_capacity(n, d, reps)
    offsets = sites_in_ball(d, ell)
    nball = len(offsets)
    lookup_radius = int(math.floor(ell))
    side = 2 * lookup_radius + 1
    widx = -np.ones((side,) * d, dtype=np.int64)
    for w_i, off in enumerate(offsets):
        widx[tuple(off + lookup_radius)] = w_i
    S = sample_srw_batch(n, d, reps, rng)       # spine positions, increments eta
    offs = neighborhood(d)
    xi = offs[rng.integers(0, 2 * d + 1, size=(reps, n))]
    shift = fw._rep_shift(d)
    rep_ids = np.arange(reps, dtype=np.int64) << shift
    occupied = np.zeros((reps, nball), dtype=bool)
    particles = np.zeros(reps, dtype=np.int64)
    # the spine tip itself
    particles += 1
    occupied[:, widx[(lookup_radius,) * d]] = True
    for j in range(n):
        # sibling born at S_j + xi_j, then an ordinary walk for n-1-j generations
        start = S[:, j, :] + xi[:, j, :]
        keys = fw.evolve_particles(rep_ids + fw.encode_sites(start, d), n - 1 - j,
                                   _BINARY, d, rng)
        if keys.size == 0:
            continue
        rep = (keys >> shift).astype(np.int64)
        sites = fw.decode_sites(keys & ((np.int64(1) << shift) - 1), d)
        rel = sites - S[rep, n, :]
        inb = np.all(np.abs(rel) <= lookup_radius, axis=1)
        if not inb.any():
            continue
        rel_in = rel[inb] + lookup_radius
        w_i = widx[tuple(rel_in[:, k] for k in range(d))]
        ok = w_i >= 0
        if ok.any():
            rr = rep[inb][ok]
            particles += np.bincount(rr, minlength=reps)
            occupied[rr, w_i[ok]] = True
    return {
        "particles": particles,
        "unoccupied": nball - occupied.sum(axis=1),
        "ball_sites": nball,
    }


def sample_ball_count(n: int, ell: float, d: int = 2,
                      rng: np.random.Generator = None) -> int:
    return int(spine_ball_batch(n, ell, 1, rng, d)[0])


# ---------------------------------------------------------------------------
# change-of-measure validation


def sizebias_population_batch(n: int, reps: int, rng: np.random.Generator) -> np.ndarray:
    """Z_n under the size-biased law: the spine plus one ordinary offspring
    process of age n-1-j for every spine height j < n."""
    z = np.ones(reps, dtype=np.int64)
    for j in range(n):
        w = np.ones(reps, dtype=np.int64)
        idx = np.arange(reps)
        for _ in range(n - 1 - j):
            if len(w) == 0:
                break
            w = _BINARY.population_step(w, rng)
            alive = w > 0
            idx, w = idx[alive], w[alive]
        np.add.at(z, idx, w)
    assert z.min() >= 1  # the spine survives on every sample
    return z


def sizebias_check(f, n: int, reps: int, rng: np.random.Generator) -> dict:
    """Compare E_{P_H}[f(Z_n)] (spine construction) against E_P[Z_n f(Z_n)]
    (forward runs); the two agree exactly under the change of measure.

    `f` must be vectorized over integer population arrays.
    """
    z_sb = sizebias_population_batch(n, reps, rng)
    lhs = np.asarray(f(z_sb), dtype=np.float64)
    z = fw.population_batch(_BINARY, n, reps, rng)
    rhs = np.asarray(f(z), dtype=np.float64) * z
    lhs_m, rhs_m = float(lhs.mean()), float(rhs.mean())
    se = math.sqrt(lhs.var(ddof=1) / reps + rhs.var(ddof=1) / reps)
    return {
        "lhs": lhs_m,
        "rhs": rhs_m,
        "se": se,
        "z_score": (lhs_m - rhs_m) / se if se > 0 else 0.0,
        "reps": reps,
    }
