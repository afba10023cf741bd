"""Command-line surface.

Subcommands: simulate | spine | exact | conditioned | verify | report.

Reproducibility contract: every stochastic command requires --seed, replicate
r draws from the documented substream (seed, stream id, r), and outputs are
sorted by replicate index, so reruns are byte-identical and independent of the
worker count (BRW_THREADS).  Primary outputs carry no timestamps; wall-clock
metadata goes to a `<out>.meta.json` sidecar.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import conditioned as cr
from . import exactfields as xf
from . import forward as fw
from . import spine as sp
from . import stats as st
from . import verify as vf
from .lattice import field_to_csv, transition_field
from .offspring import parse_offspring
from .rngstreams import substream

_SENTINEL = object()


def load_config(path: str | None) -> dict[str, str]:
    """Flat key = value file; # starts a comment."""
    cfg: dict[str, str] = {}
    if not path:
        return cfg
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"config line without '=': {line!r}")
            k, v = line.split("=", 1)
            cfg[k.strip()] = v.strip()
    return cfg


def resolve(args, cfg: dict, key: str, cast, default):
    """Precedence: explicit flag > config file > default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    if key in cfg:
        return cast(cfg[key])
    return default


def _open_out(path: str | None):
    return open(path, "w") if path and path != "-" else sys.stdout


def _write_sidecar(path: str | None, resolved: dict) -> None:
    if not path or path == "-":
        return
    meta = dict(resolved)
    meta["written_at_unix"] = time.time()
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)


def _provenance(resolved: dict) -> str:
    return " ".join(f"{k}={resolved[k]}" for k in sorted(resolved))


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("BRW_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# simulate


def _simulate_rep(task):
    seed, rep, spec, n, d, conditioned, max_attempts = task
    dist = parse_offspring(spec)
    stream = "conditioned-sim" if conditioned else "simulate"
    rng = substream(seed, stream, rep)
    if conditioned:
        stats = fw.run_conditioned(dist, n, d, rng, max_attempts=max_attempts)
    else:
        stats = fw.run(dist, n, d, rng)
    stats.rep = rep
    stats.seed = seed
    return rep, json.dumps(stats.to_json_dict(), sort_keys=True)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    n = resolve(args, cfg, "n", int, 32)
    d = resolve(args, cfg, "dim", int, 2)
    spec = resolve(args, cfg, "offspring", str, "binary")
    reps = resolve(args, cfg, "reps", int, 10)
    seed = resolve(args, cfg, "seed", int, None)
    conditioned = bool(resolve(args, cfg, "conditioned", lambda s: s == "true", False))
    max_attempts = resolve(args, cfg, "max-attempts", int, 10**7)
    if seed is None:
        raise SystemExit("--seed is required for stochastic commands")
    resolved = {"command": "simulate", "n": n, "dim": d, "offspring": spec,
                "reps": reps, "seed": seed, "conditioned": conditioned,
                "max_attempts": max_attempts}
    tasks = [(seed, r, spec, n, d, conditioned, max_attempts) for r in range(reps)]
    lines = _parallel_map(_simulate_rep, tasks)
    out = _open_out(args.out)
    for _, line in sorted(lines):
        out.write(line + "\n")
    if out is not sys.stdout:
        out.close()
    _write_sidecar(args.out, resolved)
    return 0


def _parallel_map(fn, tasks):
    w = _workers()
    if w == 1 or len(tasks) < 4:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * w))))


# ---------------------------------------------------------------------------
# spine


def _spine_rep(task):
    seed, rep, n, d, ell = task
    rng = substream(seed, "spine", rep)
    out = sp.spine_typical_batch(n, 1, rng, d)
    row = {
        "rep": rep, "n": n, "seed": seed,
        "Tstar": int(out["Tstar"][0]),
        "Gamma": float(out["Gamma"][0]),
        "Delta": float(out["Delta"][0]),
        "clamp_miss_count": int(out["clamp_misses"][0]),
    }
    if ell is not None:
        row["W"] = int(sp.spine_ball_batch(n, ell, 1, rng, d)[0])
        row["ell"] = ell
    return rep, json.dumps(row, sort_keys=True)


def cmd_spine(args) -> int:
    cfg = load_config(args.config)
    n = resolve(args, cfg, "n", int, 64)
    reps = resolve(args, cfg, "reps", int, 10)
    seed = resolve(args, cfg, "seed", int, None)
    ell = resolve(args, cfg, "ell", float, None)
    if seed is None:
        raise SystemExit("--seed is required for stochastic commands")
    if n < 2:
        raise SystemExit("spine sampling needs n >= 2")
    resolved = {"command": "spine", "n": n, "reps": reps, "seed": seed,
                "ell": ell, "dim": 2, "offspring": "binary"}
    tasks = [(seed, r, n, 2, ell) for r in range(reps)]
    lines = _parallel_map(_spine_rep, tasks)
    out = _open_out(args.out)
    for _, line in sorted(lines):
        out.write(line + "\n")
    if out is not sys.stdout:
        out.close()
    _write_sidecar(args.out, resolved)
    return 0


# ---------------------------------------------------------------------------
# exact


def cmd_exact(args) -> int:
    cfg = load_config(args.config)
    kind = args.kind
    n = resolve(args, cfg, "n", int, 8)
    d = resolve(args, cfg, "dim", int, 2)
    spec = resolve(args, cfg, "offspring", str, "binary")
    theta = resolve(args, cfg, "theta", float, 0.05)
    clamp = resolve(args, cfg, "clamp", int, None)
    dist = parse_offspring(spec)
    out = _open_out(args.out)
    resolved = {"command": "exact", "kind": kind, "n": n, "dim": d,
                "offspring": spec, "theta": theta, "clamp": clamp}
    if kind == "p-field":
        field_to_csv(transition_field(n, d, clamp=clamp), n, out)
    elif kind == "u-field":
        field_to_csv(xf.hitting_field(dist, n, d, clamp=clamp), n, out)
    elif kind == "mgf-field":
        field_to_csv(xf.mgf_field(dist, n, theta, d, clamp=clamp), n, out)
    elif kind == "h-field":
        field_to_csv(xf.dominating_field(dist, n, theta, d, clamp=clamp), n, out)
    elif kind == "m2-field":
        field_to_csv(xf.second_moment_field(dist, n, d, clamp=clamp), n, out)
    elif kind == "survival":
        json.dump({"n": n, "offspring": spec, "survival": xf.survival_prob(dist, n),
                   "n_times_survival": n * xf.survival_prob(dist, n)}, out, sort_keys=True)
        out.write("\n")
    elif kind == "mean-occupied":
        total, tail = xf.mean_occupied(dist, n, d, clamp=clamp)
        json.dump({"n": n, "dim": d, "offspring": spec, "mean_occupied": total,
                   "tail_bound": tail}, out, sort_keys=True)
        out.write("\n")
    elif kind == "gamma":
        json.dump({"n": n, "exact_mean_gamma": sp.exact_mean_gamma(n, d)}, out,
                  sort_keys=True)
        out.write("\n")
    elif kind == "supersolution-verify":
        kappa = resolve(args, cfg, "kappa", float, xf.KAPPA0)
        n0 = resolve(args, cfg, "n0", int, None)
        if n0 is None:
            n0 = xf.find_supersolution_start(kappa)
        rep = xf.verify_supersolution(xf.SuperSolutionParams(kappa),
                                      range(n0, 4 * n0 + 1))
        json.dump(rep, out, sort_keys=True)
        out.write("\n")
    else:
        raise SystemExit(f"unknown exact kind {kind!r}")
    if out is not sys.stdout:
        out.close()
    _write_sidecar(args.out, resolved)
    return 0


# ---------------------------------------------------------------------------
# conditioned


def _path_checksum(path: np.ndarray) -> int:
    return int(((np.arange(1, len(path) + 1)[:, None] * np.abs(path)).sum()) % (1 << 31))


def cmd_conditioned(args) -> int:
    cfg = load_config(args.config)
    n = resolve(args, cfg, "n", int, 2)
    reps = resolve(args, cfg, "reps", int, 100)
    seed = resolve(args, cfg, "seed", int, None)
    if seed is None:
        raise SystemExit("--seed is required for stochastic commands")
    x = tuple(int(c) for c in resolve(args, cfg, "x", str, "1,0").split(","))
    bank = cr.HittingBank(n, len(x))
    sampler = cr.ConditionedSampler(n, x, bank)
    out = _open_out(args.out)
    values = []
    for rep in range(reps):
        rng = substream(seed, "conditioned-rep", rep)
        path = sampler.sample_path(rng)
        value = sampler.sample(rng)
        values.append(value)
        out.write(json.dumps({"n": n, "x": list(x), "rep": rep, "value": value,
                              "path_len_checksum": _path_checksum(path)},
                             sort_keys=True) + "\n")
    if out is not sys.stdout:
        out.close()
    resolved = {"command": "conditioned", "n": n, "x": ",".join(map(str, x)),
                "reps": reps, "seed": seed}
    _write_sidecar(args.out, resolved)
    if args.chi_square_report:
        pf = xf.pmf_oracle(parse_offspring("binary"), n, len(x), degree=64)
        cond = pf.conditional_pmf_at(x)
        obs = np.bincount(np.array(values), minlength=len(cond) + 1)[1:]
        chi = st.chi_square(obs, cond)
        with open(args.chi_square_report, "w") as fh:
            json.dump({"n": n, "x": list(x), "reps": reps, **chi}, fh, sort_keys=True)
    return 0


# ---------------------------------------------------------------------------
# verify / report


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    seed = resolve(args, cfg, "seed", int, None)
    if seed is None:
        raise SystemExit("--seed is required for stochastic commands")
    budget = resolve(args, cfg, "budget", float, None)
    names = list(vf.SUITES) if args.suite == "all" else [args.suite]
    for name in names:
        if name not in vf.SUITES:
            raise SystemExit(f"unknown suite {name!r}; choose from {sorted(vf.SUITES)}")
    rows = vf.run_suites(names, seed, budget_seconds=budget, echo=print)
    resolved = {"command": "verify", "suite": ",".join(names), "seed": seed,
                "budget": budget}
    out = _open_out(args.out)
    st.write_report_csv(rows, out, header_lines=[_provenance(resolved)])
    if out is not sys.stdout:
        out.close()
    _write_sidecar(args.out, resolved)
    summary = st.summary_dict(rows)
    if args.summary:
        with open(args.summary, "w") as fh:
            json.dump(summary, fh, sort_keys=True, indent=1)
    return 0 if summary["hard_pass"] else 1


def cmd_report(args) -> int:
    rows = []
    with open(args.input) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    if not rows:
        raise SystemExit("empty input")
    numeric = [k for k, v in rows[0].items()
               if isinstance(v, (int, float)) and not isinstance(v, bool)
               and k not in ("rep", "seed")]
    out = _open_out(args.out)
    out.write("statistic,mean,std_error,reps,q10,q50,q90\n")
    for k in sorted(numeric):
        vals = np.array([r[k] for r in rows if r.get(k) is not None], dtype=np.float64)
        if len(vals) < 2:
            continue
        e = st.EstimateCI.from_samples(vals, quantiles=True)
        out.write(f"{k},{e.mean!r},{e.std_error!r},{e.reps},{e.q10!r},{e.q50!r},{e.q90!r}\n")
    if out is not sys.stdout:
        out.close()
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brwlab",
                                description="critical branching random walk laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    def common(q):
        q.add_argument("--config", help="flat key=value config file")
        q.add_argument("--seed", type=int)
        q.add_argument("--out", help="output path ('-' for stdout)", default="-")

    q = sub.add_parser("simulate", help="forward occupancy runs (JSONL)")
    common(q)
    q.add_argument("--n", type=int)
    q.add_argument("--dim", type=int)
    q.add_argument("--offspring")
    q.add_argument("--reps", type=int)
    q.add_argument("--conditioned", action="store_const", const=True, default=None)
    q.add_argument("--max-attempts", type=int)
    q.set_defaults(fn=cmd_simulate)

    q = sub.add_parser("spine", help="size-biased spine samples (JSONL)")
    common(q)
    q.add_argument("--n", type=int)
    q.add_argument("--reps", type=int)
    q.add_argument("--ell", type=float)
    q.set_defaults(fn=cmd_spine)

    q = sub.add_parser("exact", help="deterministic fields and scalars")
    common(q)
    q.add_argument("kind", choices=["p-field", "u-field", "mgf-field", "h-field",
                                    "m2-field", "survival", "mean-occupied", "gamma",
                                    "supersolution-verify"])
    q.add_argument("--n", type=int)
    q.add_argument("--dim", type=int)
    q.add_argument("--offspring")
    q.add_argument("--theta", type=float)
    q.add_argument("--clamp", type=int)
    q.add_argument("--kappa", type=float)
    q.add_argument("--n0", type=int)
    q.set_defaults(fn=cmd_exact)

    q = sub.add_parser("conditioned", help="conditional single-site law (JSONL)")
    common(q)
    q.add_argument("--n", type=int)
    q.add_argument("--x")
    q.add_argument("--reps", type=int)
    q.add_argument("--chi-square-report", help="write a chi-square JSON report here")
    q.set_defaults(fn=cmd_conditioned)

    q = sub.add_parser("verify", help="run verification suites")
    common(q)
    q.add_argument("--suite", default="all")
    q.add_argument("--budget", type=float, help="wall-clock budget in seconds")
    q.add_argument("--summary", help="write a pass/fail summary JSON here")
    q.set_defaults(fn=cmd_verify)

    q = sub.add_parser("report", help="aggregate a JSONL file into a stats CSV")
    q.add_argument("--input", required=True)
    q.add_argument("--out", default="-")
    q.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
