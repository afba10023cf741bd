"""Occupancy-level Monte Carlo of the branching random walk under P.

Two engines share the exact particle dynamics:

* `step`/`run`/`run_conditioned` work on SparseOccupancy maps —
  per site the total offspring is drawn from the k-fold convolution Q^k and
  scattered over the 2d+1 neighbors by sequential binomial splitting in fixed
  neighbor order.

* the batched engine packs (replicate, site) into int64 keys and evolves one
  particle array for thousands of replicates at once: each particle draws its
  offspring count and each child picks a uniform neighbor.  A multinomial is
  a sum of independent categorical draws and Q^k splits over subgroups, so
  the law of every occupancy statistic is identical; only the RNG call
  pattern differs.

Population-only (Galton-Watson) batches drop the spatial part entirely; the
survival event and Z_n do not depend on particle motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import neighborhood, sites_in_ball
from .offspring import OffspringDist

J_MAX = 64          # multiplicity histogram cap; larger counts go to the overflow bucket
COORD_BITS = 15
COORD_OFF = 1 << 14  # coordinates must stay in (-COORD_OFF, COORD_OFF)


def _rep_shift(d: int) -> int:
    return d * COORD_BITS


def encode_sites(coords: np.ndarray, d: int) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, d)
    keys = np.zeros(len(coords), dtype=np.int64)
    for i in range(d):
        keys = (keys << COORD_BITS) | (coords[:, i] + COORD_OFF)
    return keys


def decode_sites(keys: np.ndarray, d: int) -> np.ndarray:
    out = np.empty((len(keys), d), dtype=np.int64)
    k = np.asarray(keys, dtype=np.int64)
    mask = (1 << COORD_BITS) - 1
    for i in range(d - 1, -1, -1):
        out[:, i] = (k & mask) - COORD_OFF
        k = k >> COORD_BITS
    return out


def _move_deltas(d: int) -> np.ndarray:
    """Encoded key increments for the 2d+1 neighbor offsets (hold first)."""
    offs = neighborhood(d)
    deltas = np.zeros(2 * d + 1, dtype=np.int64)
    for j, off in enumerate(offs):
        acc = 0
        for i in range(d):
            acc = (acc << COORD_BITS) + int(off[i])
        deltas[j] = acc
    return deltas


def _sample_counts(dist: OffspringDist, m: int, rng: np.random.Generator) -> np.ndarray:
    """One offspring draw per particle."""
    if dist.is_binary:
        return rng.integers(0, 2, size=m) * 2
    u = rng.random(m) * dist._cdf[-1]
    idx = np.searchsorted(dist._cdf, u, side="right").clip(0, len(dist.support) - 1)
    return dist.support[idx]


def evolve_particles(keys: np.ndarray, gens: int, dist: OffspringDist, d: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Run `gens` generations of the particle array (keys may carry rep tags)."""
    deltas = _move_deltas(d)
    for _ in range(gens):
        if keys.size == 0:
            break
        off = _sample_counts(dist, keys.size, rng)
        keys = np.repeat(keys, off)
        if keys.size == 0:
            break
        moves = rng.integers(0, 2 * d + 1, size=keys.size)
        keys = keys + deltas[moves]
    return keys


# ---------------------------------------------------------------------------
# SparseOccupancy and single-replicate stepping


@dataclass
class SparseOccupancy:
    """Map site -> positive particle count for one generation."""

    entries: dict[tuple[int, ...], int]
    n: int
    d: int

    def __post_init__(self):
        self.entries = {k: int(v) for k, v in self.entries.items() if v}
        if any(v < 0 for v in self.entries.values()):
            raise ValueError("counts must be >= 1")

    @classmethod
    def origin(cls, d: int) -> "SparseOccupancy":
        return cls({(0,) * d: 1}, 0, d)

    @property
    def z(self) -> int:
        return sum(self.entries.values())


def step(occ: SparseOccupancy, dist: OffspringDist, rng: np.random.Generator) -> SparseOccupancy:
    """One generation: per site, total offspring ~ Q^k, scattered multinomially
    over the 2d+1 neighbors by sequential binomial splitting in fixed order."""
    d = occ.d
    if not occ.entries:
        return SparseOccupancy({}, occ.n + 1, d)
    sites = sorted(occ.entries)
    counts = np.array([occ.entries[s] for s in sites], dtype=np.int64)
    totals = dist.sample_offspring_sum(counts, rng)
    offs = neighborhood(d)
    out: dict[tuple[int, ...], int] = {}
    rem = np.asarray(totals, dtype=np.int64).copy()
    for j in range(2 * d + 1):
        if j < 2 * d:
            c = rng.binomial(rem, 1.0 / (2 * d + 1 - j))
        else:
            c = rem
        rem = rem - c
        for i in np.nonzero(c)[0]:
            site = tuple(int(x) + int(offs[j][k]) for k, x in enumerate(sites[i]))
            out[site] = out.get(site, 0) + int(c[i])
    return SparseOccupancy(out, occ.n + 1, d)


# ---------------------------------------------------------------------------
# per-generation statistics


@dataclass
class GenStats:
    n: int
    d: int
    Z: int
    V: int
    Omega: int
    M: list[int]                  # M[j-1] = number of multiplicity-j sites, j <= J_MAX
    overflow_sites: int
    overflow_mass: int
    T: int | None = None          # count at the typical site
    S: list[int] | None = None    # typical-particle site
    conditioned: bool = False
    attempts: int | None = None
    rep: int | None = None
    seed: int | None = None

    def to_json_dict(self) -> dict:
        return {
            "rep": self.rep, "n": self.n, "d": self.d, "seed": self.seed,
            "conditioned": self.conditioned, "attempts": self.attempts,
            "Z": self.Z, "V": self.V, "Omega": self.Omega, "M": list(map(int, self.M)),
            "overflow": {"sites": self.overflow_sites, "mass": self.overflow_mass},
            "T": self.T, "S": self.S,
        }


def stats_from_occupancy(occ: SparseOccupancy, rng: np.random.Generator | None = None) -> GenStats:
    counts = np.array(sorted(occ.entries.values()), dtype=np.int64) if occ.entries else np.array([], dtype=np.int64)
    z = int(counts.sum())
    hist = np.zeros(J_MAX, dtype=np.int64)
    over_sites = over_mass = 0
    for c in counts:
        if c <= J_MAX:
            hist[c - 1] += 1
        else:
            over_sites += 1
            over_mass += int(c)
    stats = GenStats(occ.n, occ.d, z, int(counts.max()) if z else 0,
                     len(occ.entries), hist.tolist(), over_sites, over_mass)
    if rng is not None and z > 0:
        sites = sorted(occ.entries)
        w = np.array([occ.entries[s] for s in sites], dtype=np.float64)
        pick = sites[int(rng.choice(len(sites), p=w / w.sum()))]
        stats.S = [int(c) for c in pick]
        stats.T = int(occ.entries[pick])
    return stats


class BatchStats:
    """Segmented per-replicate statistics of a final particle array."""

    def __init__(self, keys: np.ndarray, reps: int, d: int,
                 rng: np.random.Generator | None = None):
        shift = _rep_shift(d)
        uk, cnt = np.unique(keys, return_counts=True)
        rep = (uk >> shift).astype(np.int64)
        self.reps = reps
        self.d = d
        self.Z = np.bincount(rep, weights=cnt, minlength=reps).astype(np.int64)
        self.V = np.zeros(reps, dtype=np.int64)
        np.maximum.at(self.V, rep, cnt)
        self.Omega = np.bincount(rep, minlength=reps).astype(np.int64)
        cl = np.minimum(cnt, J_MAX + 1)
        M = np.bincount(rep * (J_MAX + 1) + (cl - 1),
                        minlength=reps * (J_MAX + 1)).reshape(reps, J_MAX + 1)
        self.M = M[:, :J_MAX]
        self.overflow_sites = M[:, J_MAX].copy()
        self.overflow_mass = np.bincount(
            rep, weights=cnt * (cnt > J_MAX), minlength=reps).astype(np.int64)
        self.T = np.full(reps, -1, dtype=np.int64)
        self.S = np.zeros((reps, d), dtype=np.int64)
        if rng is not None and len(uk):
            csum = np.cumsum(cnt)
            zc = np.concatenate(([0], np.cumsum(self.Z)))
            alive = np.nonzero(self.Z > 0)[0]
            target = zc[alive] + rng.random(len(alive)) * self.Z[alive]
            pos = np.searchsorted(csum, target, side="right")
            self.T[alive] = cnt[pos]
            self.S[alive] = decode_sites(uk[pos], d)

    def genstats(self, i: int, n: int, **kw) -> GenStats:
        alive = self.Z[i] > 0
        return GenStats(
            n, self.d, int(self.Z[i]), int(self.V[i]), int(self.Omega[i]),
            self.M[i].tolist(), int(self.overflow_sites[i]), int(self.overflow_mass[i]),
            T=int(self.T[i]) if alive and self.T[i] >= 0 else None,
            S=self.S[i].tolist() if alive and self.T[i] >= 0 else None, **kw)


# ---------------------------------------------------------------------------
# runs


def run(dist: OffspringDist, n: int, d: int, rng: np.random.Generator,
        want_occupancy: bool = False, want_typical: bool = True):
    """Free run of n generations from one particle at the origin."""
    keys = evolve_particles(encode_sites(np.zeros((1, d)), d), n, dist, d, rng)
    uk, cnt = np.unique(keys, return_counts=True)
    coords = decode_sites(uk, d)
    occ = SparseOccupancy({tuple(map(int, c)): int(v) for c, v in zip(coords, cnt)}, n, d)
    stats = stats_from_occupancy(occ, rng if want_typical else None)
    return (stats, occ) if want_occupancy else stats


def run_conditioned(dist: OffspringDist, n: int, d: int, rng: np.random.Generator,
                    max_attempts: int = 10**7, want_occupancy: bool = False):
    """Rejection sampling of the conditional law given survival to n."""
    for attempt in range(1, max_attempts + 1):
        out = run(dist, n, d, rng, want_occupancy=want_occupancy)
        stats = out[0] if want_occupancy else out
        if stats.Z > 0:
            stats.conditioned = True
            stats.attempts = attempt
            return out
    raise RuntimeError(f"no survival to generation {n} within {max_attempts} attempts")


def run_batch(dist: OffspringDist, n: int, d: int, reps: int,
              rng: np.random.Generator, want_typical: bool = False) -> BatchStats:
    """`reps` independent free runs in one particle array."""
    _check_capacity(n, d, reps)
    rep_ids = np.arange(reps, dtype=np.int64) << _rep_shift(d)
    keys = evolve_particles(rep_ids + encode_sites(np.zeros((1, d)), d)[0], n, dist, d, rng)
    return BatchStats(keys, reps, d, rng if want_typical else None)


def run_conditioned_batch(dist: OffspringDist, n: int, d: int, want: int,
                          rng: np.random.Generator, survival: float,
                          want_typical: bool = False,
                          max_rounds: int = 200) -> BatchStats:
    """Batched rejection: free-run rounds, survivors re-tagged 0..want-1."""
    shift = _rep_shift(d)
    site_mask = (np.int64(1) << shift) - 1
    round_size = min(int(1.25 * want / survival) + 64, 100_000)
    collected: list[np.ndarray] = []
    got = 0
    origin_key = encode_sites(np.zeros((1, d)), d)[0]
    for _ in range(max_rounds):
        if got >= want:
            break
        rep_ids = np.arange(round_size, dtype=np.int64) << shift
        keys = evolve_particles(rep_ids + origin_key, n, dist, d, rng)
        if keys.size == 0:
            continue
        rep = keys >> shift
        alive = np.zeros(round_size, dtype=bool)
        alive[rep] = True
        new_id = np.cumsum(alive) - 1  # survivor rank within the round
        keep = new_id[rep] + got < want
        retagged = ((new_id[rep[keep]] + got) << shift) | (keys[keep] & site_mask)
        collected.append(retagged)
        got += int(alive.sum())
    if got < want:
        raise RuntimeError(f"only {got} survivors after {max_rounds} rounds")
    return BatchStats(np.concatenate(collected), want, d, rng if want_typical else None)


def site_count_batch(dist: OffspringDist, n: int, d: int, site, reps: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Per-replicate particle counts at one fixed site after n free generations."""
    _check_capacity(n, d, reps)
    shift = _rep_shift(d)
    rep_ids = np.arange(reps, dtype=np.int64) << shift
    keys = evolve_particles(rep_ids + encode_sites(np.zeros((1, d)), d)[0], n, dist, d, rng)
    out = np.zeros(reps, dtype=np.int64)
    if keys.size:
        site_mask = (np.int64(1) << shift) - 1
        hits = (keys & site_mask) == encode_sites(np.asarray(site).reshape(1, d), d)[0]
        if hits.any():
            out = np.bincount((keys[hits] >> shift).astype(np.int64),
                              minlength=reps).astype(np.int64)
    return out


def _check_capacity(n: int, d: int, reps: int) -> None:
    if n >= COORD_OFF:
        raise ValueError(f"n={n} exceeds the coordinate packing range")
    if reps >= 1 << (62 - _rep_shift(d)):
        raise ValueError("too many replicates for one batch; use rounds")


# ---------------------------------------------------------------------------
# population-only (Galton-Watson) batches


def population_batch(dist: OffspringDist, n: int, reps: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Z_n for `reps` free runs; particle motion is irrelevant to Z."""
    z_final = np.zeros(reps, dtype=np.int64)
    idx = np.arange(reps)
    z = np.ones(reps, dtype=np.int64)
    for _ in range(n):
        if len(z) == 0:
            break
        z = dist.population_step(z, rng)
        alive = z > 0
        idx, z = idx[alive], z[alive]
    z_final[idx] = z
    return z_final


def population_conditioned_batch(dist: OffspringDist, n: int, want: int,
                                 rng: np.random.Generator, survival: float,
                                 max_rounds: int = 200) -> np.ndarray:
    """Conditional Z_n samples by batched rejection (exact conditional law)."""
    out: list[np.ndarray] = []
    got = 0
    round_size = min(int(1.25 * want / survival) + 64, 4_000_000)
    for _ in range(max_rounds):
        if got >= want:
            break
        z = population_batch(dist, n, round_size, rng)
        z = z[z > 0]
        out.append(z)
        got += len(z)
    if got < want:
        raise RuntimeError(f"only {got} survivors after {max_rounds} rounds")
    return np.concatenate(out)[:want]


# ---------------------------------------------------------------------------
# overlap statistic and ball counts


def overlap_stat(dist: OffspringDist, n: int, d: int, x_u, x_v,
                 rng: np.random.Generator) -> int:
    """D_n for two independent walks from x_u and x_v: total particles at
    sites holding descendants of both."""
    return int(overlap_batch(dist, n, d, x_u, x_v, 1, rng)[0])


def overlap_batch(dist: OffspringDist, n: int, d: int, x_u, x_v, reps: int,
                  rng: np.random.Generator) -> np.ndarray:
    _check_capacity(n, d, reps)
    shift = _rep_shift(d)
    rep_ids = np.arange(reps, dtype=np.int64) << shift
    ku = evolve_particles(rep_ids + encode_sites(np.asarray(x_u).reshape(1, d), d)[0],
                          n, dist, d, rng)
    kv = evolve_particles(rep_ids + encode_sites(np.asarray(x_v).reshape(1, d), d)[0],
                          n, dist, d, rng)
    uu, cu = np.unique(ku, return_counts=True)
    uv, cv = np.unique(kv, return_counts=True)
    allk = np.concatenate([uu, uv])
    allc = np.concatenate([cu, cv])
    order = np.argsort(allk, kind="stable")
    sk, sc = allk[order], allc[order]
    both = np.nonzero(sk[1:] == sk[:-1])[0]
    d_n = np.zeros(reps, dtype=np.int64)
    if len(both):
        contrib = sc[both] + sc[both + 1]
        np.add.at(d_n, (sk[both] >> shift).astype(np.int64), contrib)
    return d_n


def ball_stats(occ: SparseOccupancy, center, ell: float) -> dict:
    """Exact counts of unoccupied sites and particles in the Euclidean ball."""
    offsets = sites_in_ball(occ.d, ell)
    unocc = 0
    particles = 0
    c = tuple(int(x) for x in center)
    for off in offsets:
        site = tuple(int(c[i]) + int(off[i]) for i in range(occ.d))
        cnt = occ.entries.get(site, 0)
        if cnt == 0:
            unocc += 1
        particles += cnt
    return {"ball_sites": len(offsets), "unoccupied": unocc, "particles": particles}
