"""Command line front door.

    depguide run          --config CFG [--out DIR] [--seed S] [--runs N] [--workers W]
    depguide compare      --config CFG [--modes a,b] [--swap-order] ...
    depguide landscape    --config CFG [--modes a,b] ...
    depguide cagrad-bench [--config CFG] [--runs N] [--seed S] [--out DIR]
    depguide selftest     [--inject-fault] [--full] [--out DIR]

CFG is a JSON file or the name of a shipped reference config. Exit codes:
0 success, 1 config error, 2 runtime failure, 3 selftest failure.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import NamedTuple, Optional

import numpy as np

from . import config as config_mod
from . import diagnostics as diag
from . import selftest as selftest_mod
from .config import ConfigError, ExperimentConfig
from .mtl import CAGradConfig, cagrad_direction, inner_objective
from .oracles import simplex_grid_min
from .sampler import MODES, RunTrace, SamplerConfig, SamplerError, sample

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_SELFTEST = 0, 1, 2, 3


class Variant(NamedTuple):
    mode: str
    order: tuple

    @property
    def label(self) -> str:
        if self.mode == "dependent_pair":
            return f"{self.mode}[{self.order[0]},{self.order[1]}]"
        return self.mode


class Outcome(NamedTuple):
    variant: Variant
    run_id: int
    seed: int
    trace: Optional[RunTrace]
    error: str

    @property
    def ok(self) -> bool:
        return self.trace is not None


# -- running ------------------------------------------------------------------


def sampler_config(cfg: ExperimentConfig, variant: Variant, seed: int, run_id: int,
                   keep_states: bool = False) -> SamplerConfig:
    return SamplerConfig(schedule=cfg.schedule(), mode=variant.mode, order=variant.order, seed=seed,
                         record_every=cfg.sampler.record_every, guidance_stop_t=cfg.guidance.stop_t,
                         suppress_final_noise=cfg.sampler.suppress_final_noise,
                         fresh_noise=cfg.sampler.fresh_noise, cagrad=cfg.cagrad_config(),
                         hessian=cfg.sampler.hessian, keep_states=keep_states, run_id=run_id)


def _run_job(job) -> Outcome:
    cfg, variant, run_id, seed, keep_states = job
    try:
        # unconditional runs still record the condition energies
        trace = sample(sampler_config(cfg, variant, seed, run_id, keep_states), cfg.mixture(),
                       cfg.condition_list())
        return Outcome(variant, run_id, seed, trace, "")
    except SamplerError as exc:
        return Outcome(variant, run_id, seed, None, str(exc))


def run_variants(cfg: ExperimentConfig, variants, workers: int = 1, keep_states: bool = False):
    """Every variant on the same seed list; results come back ordered by (variant, seed)."""
    jobs = [(cfg, v, k, cfg.seed + k, keep_states) for v in variants for k in range(cfg.runs)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    by_variant = {v: [] for v in variants}
    for r in results:
        by_variant[r.variant].append(r)
    return by_variant


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def mean_curves(outcomes, n_cond: int):
    """Per-condition mean energy at each recorded t over successful runs."""
    acc = {}
    for o in outcomes:
        if not o.ok:
            continue
        for rec in o.trace.records:
            slot = acc.setdefault(rec.t, [np.zeros(n_cond), 0])
            slot[0] += np.asarray(rec.energies, dtype=float)
            slot[1] += 1
    ts = sorted(acc, reverse=True)
    means = np.array([acc[t][0] / acc[t][1] for t in ts]) if ts else np.zeros((0, n_cond))
    return ts, means


def win_rate(baseline, challenger) -> float:
    """Fraction of seeds where ``challenger`` ends lower; ties count one half."""
    a = np.asarray(baseline, dtype=float)
    b = np.asarray(challenger, dtype=float)
    if a.size == 0:
        return math.nan
    return float(np.mean(b < a) + 0.5 * np.mean(b == a))


def _summary_rows(outcomes, n_cond: int):
    for o in outcomes:
        if o.ok:
            energies = list(o.trace.final_energies)
            total = o.trace.final_total
            status = "ok"
            warns = len(o.trace.warnings)
        else:
            energies, total, status, warns = [math.nan] * n_cond, math.nan, "failed: " + o.error, 0
        yield [o.run_id, o.seed, o.variant.label, status] + energies + [total, warns]


def _summary_header(n_cond: int):
    return (["run_id", "seed", "variant", "status"] + [f"final_energy_{i}" for i in range(n_cond)]
            + ["final_total", "cagrad_warnings"])


def _curve_series(cfg, variant, outcomes, n_cond):
    ts, means = mean_curves(outcomes, n_cond)
    series = {}
    for i in range(n_cond):
        name = cfg.conditions[i].name or f"cond{i}"
        series[f"{variant.label}: {name}"] = (ts, means[:, i].tolist())
    return series


# -- subcommands --------------------------------------------------------------


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        updates["runs"] = args.runs
    if not updates:
        return cfg
    return config_mod.validate({**cfg.model_dump(exclude_none=True), **updates})


def _out_dir(cfg: ExperimentConfig, args) -> str:
    return args.out if args.out else cfg.output


def _parse_modes(text: Optional[str], default) -> list:
    if not text:
        return list(default)
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise ConfigError(f"--modes: unknown mode(s) {bad}; expected from {MODES}")
    return modes


def cmd_run(args) -> int:
    cfg = _apply_overrides(config_mod.load(args.config), args)
    out = _out_dir(cfg, args)
    variant = Variant(cfg.guidance.mode, tuple(cfg.guidance.order))
    outcomes = run_variants(cfg, [variant], args.workers)[variant]
    n_cond = len(cfg.conditions)
    records = [r for o in outcomes if o.ok for r in o.trace.records]
    diag.emit_trace_csv(records, os.path.join(out, "trace.csv"), n_cond)
    diag.write_csv(os.path.join(out, "summary.csv"), _summary_header(n_cond), _summary_rows(outcomes, n_cond))
    svg = diag.line_plot_svg(_curve_series(cfg, variant, outcomes, n_cond),
                             title=f"{cfg.scenario}: mean condition energy", ylabel="energy")
    diag.write_svg(os.path.join(out, "loss_curves.svg"), svg)
    totals = [o.trace.final_total for o in outcomes if o.ok]
    failed = [o for o in outcomes if not o.ok]
    mean, se = mean_stderr(totals)
    print(f"{cfg.scenario} {variant.label}: final total energy {mean:.6g} +- {se:.3g} "
          f"(runs={len(totals)}, failed={len(failed)})")
    for o in failed:
        print(f"  seed {o.seed}: {o.error}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def compare_variants(cfg: ExperimentConfig, modes, swap_order: bool) -> list:
    """Variants in comparison order; a repeated mode stays repeated (self-comparison)."""
    variants = []
    for m in modes:
        variants.append(Variant(m, tuple(cfg.guidance.order)))
        if swap_order and m == "dependent_pair":
            variants.append(Variant(m, tuple(reversed(cfg.guidance.order))))
    return variants


def cmd_compare(args) -> int:
    cfg = _apply_overrides(config_mod.load(args.config), args)
    out = _out_dir(cfg, args)
    modes = _parse_modes(args.modes, ["independent", cfg.guidance.mode])
    variants = compare_variants(cfg, modes, args.swap_order)
    if len(variants) < 2:
        raise ConfigError("compare needs at least two modes, or --swap-order with dependent_pair")
    results = run_variants(cfg, list(dict.fromkeys(variants)), args.workers)
    labels = [v.label for v in variants]
    n_cond = len(cfg.conditions)

    header = ["run_id", "seed"]
    for lab in labels:
        header += [f"{lab}:energy_{i}" for i in range(n_cond)] + [f"{lab}:total", f"{lab}:status"]
    rows = []
    for k in range(cfg.runs):
        row = [k, cfg.seed + k]
        for v in variants:
            o = results[v][k]
            if o.ok:
                row += list(o.trace.final_energies) + [o.trace.final_total, "ok"]
            else:
                row += [math.nan] * n_cond + [math.nan, "failed"]
        rows.append(row)
    diag.write_csv(os.path.join(out, "paired.csv"), header, rows)

    stats = []
    for i, va in enumerate(variants):
        for vb in variants[i + 1:]:
            pairs = [(a.trace, b.trace) for a, b in zip(results[va], results[vb]) if a.ok and b.ok]
            ta = [p[0].final_total for p in pairs]
            tb = [p[1].final_total for p in pairs]
            ea = np.array([p[0].final_energies for p in pairs]).reshape(len(pairs), n_cond)
            eb = np.array([p[1].final_energies for p in pairs]).reshape(len(pairs), n_cond)
            rel = [abs(eb[:, c].mean() - ea[:, c].mean()) / max(abs(ea[:, c].mean()), 1e-300)
                   if pairs else math.nan for c in range(n_cond)]
            stats.append([va.label, vb.label, len(pairs), win_rate(ta, tb),
                          mean_stderr(ta)[0], mean_stderr(tb)[0],
                          float(np.mean(np.subtract(tb, ta))) if pairs else math.nan] + rel)
    diag.write_csv(os.path.join(out, "comparison.csv"),
                   ["baseline", "challenger", "n_pairs", "win_rate", "mean_total_baseline",
                    "mean_total_challenger", "mean_diff"] + [f"rel_change_energy_{c}" for c in range(n_cond)],
                   stats)

    curve_rows, series = [], {}
    for v in dict.fromkeys(variants):
        ts, means = mean_curves(results[v], n_cond)
        for t, m in zip(ts, means):
            curve_rows.append([v.label, t] + list(m))
        series.update(_curve_series(cfg, v, results[v], n_cond))
    diag.write_csv(os.path.join(out, "mean_curves.csv"),
                   ["variant", "t"] + [f"energy_{i}" for i in range(n_cond)], curve_rows)
    diag.write_svg(os.path.join(out, "mean_curves.svg"),
                   diag.line_plot_svg(series, title=f"{cfg.scenario}: mean condition energy",
                                      ylabel="energy"))
    for s in stats:
        print(f"{cfg.scenario} {s[1]} vs {s[0]}: win-rate {s[3]:.3f} over {s[2]} seeds, "
              f"mean total {s[5]:.6g} vs {s[4]:.6g}")
    failed = sum(not o.ok for v in results for o in results[v])
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_landscape(args) -> int:
    cfg = _apply_overrides(config_mod.load(args.config), args)
    out = _out_dir(cfg, args)
    ls = cfg.landscape
    grid = diag.landscape_scan(cfg.mixture(), cfg.condition_list(), ls.t, cfg.schedule(),
                               n_samples=ls.samples, grid=(ls.grid[0], ls.grid[1], ls.extent), seed=cfg.seed)
    diag.emit_landscape_csv(grid, os.path.join(out, "landscape.csv"))
    modes = _parse_modes(args.modes, ["independent", cfg.guidance.mode])
    single = cfg.model_copy(update={"runs": 1})
    variants = list(dict.fromkeys(Variant(m, tuple(cfg.guidance.order)) for m in modes))
    results = run_variants(single, variants, 1, keep_states=True)
    paths, rows = {}, []
    for v in variants:
        o = results[v][0]
        if not o.ok:
            print(f"{v.label}: {o.error}", file=sys.stderr)
            continue
        pts = [grid.project(x) for _, x in o.trace.states]
        paths[v.label] = pts
        rows += [[v.label, t, a, b] for (t, _), (a, b) in zip(o.trace.states, pts)]
    diag.write_csv(os.path.join(out, "trajectories.csv"), ["variant", "t", "a", "b"], rows)
    diag.write_svg(os.path.join(out, "landscape.svg"),
                   diag.heatmap_svg(grid, paths, title=f"{cfg.scenario}: total energy at t={ls.t}"))
    print(f"{cfg.scenario}: landscape {ls.grid[0]}x{ls.grid[1]} at t={ls.t}, "
          f"explained variance {grid.explained[0]:.3f} / {grid.explained[1]:.3f}")
    return EXIT_OK


def cmd_cagrad_bench(args) -> int:
    cfg = config_mod.load(args.config).cagrad_config() if args.config else CAGradConfig()
    n = args.runs if args.runs is not None else 100
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    rows, worst, passed = [], 0.0, 0
    for i in range(n):
        m = 2 + i % 5
        d = int(rng.integers(2, 9))
        grads = selftest_mod.random_grad_set(rng, m, d)
        res = cagrad_direction(grads, cfg)
        grid_f, _ = simplex_grid_min(grads, cfg.c)
        solver_f = inner_objective(res.weights, grads, cfg.c)
        gap = solver_f - grid_f
        g0 = grads.mean(axis=0)
        corr = float(np.linalg.norm(res.direction - g0))
        rows.append([i, m, d, solver_f, grid_f, gap, res.converged, res.guarded, corr,
                     cfg.c * float(np.linalg.norm(g0))])
        worst = max(worst, gap)
        passed += gap <= selftest_mod.CAGRAD_TOL
    out = args.out or "out/cagrad_bench"
    diag.write_csv(os.path.join(out, "cagrad_bench.csv"),
                   ["instance", "m", "d", "solver_objective", "grid_objective", "gap", "converged",
                    "guarded", "correction_norm", "sqrt_phi"], rows)
    print(f"cagrad-bench: {passed}/{n} within {selftest_mod.CAGRAD_TOL:g} of the grid minimum, "
          f"worst gap {worst:.3g}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = selftest_mod.run_all(fault=args.inject_fault, quick=not args.full)
    ok = True
    for group, n_pass, n_total in selftest_mod.summarize(results):
        status = "PASS" if n_pass == n_total else "FAIL"
        ok &= n_pass == n_total
        print(f"{status} {group}: {n_pass}/{n_total}")
    for r in results:
        if not r.passed:
            print(f"  failed {r.group} {r.item}: {r.detail}")
    if args.out:
        diag.write_csv(os.path.join(args.out, "selftest.csv"), ["group", "item", "passed", "detail"],
                       [list(r) for r in results])
    return EXIT_OK if ok else EXIT_SELFTEST


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depguide", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_config=True):
        p.add_argument("--config", required=need_config,
                       help="JSON config path or reference name " + "/".join(config_mod.REFERENCE_CONFIGS))
        p.add_argument("--out", help="output directory (default: the config's output key)")
        p.add_argument("--seed", type=int, help="seed of run 0, overrides the config")
        p.add_argument("--runs", type=int, help="number of seeded runs, overrides the config")
        p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")

    p = sub.add_parser("run", help="sample under the configured guidance mode")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("compare", help="paired comparison of modes on identical seeds")
    common(p)
    p.add_argument("--modes", help="comma-separated modes (default: independent and the configured mode)")
    p.add_argument("--swap-order", action="store_true", help="also run dependent_pair with the order reversed")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("landscape", help="energy landscape on a PCA plane with sample trajectories")
    common(p)
    p.add_argument("--modes", help="comma-separated modes whose trajectories are drawn")
    p.set_defaults(func=cmd_landscape)
    p = sub.add_parser("cagrad-bench", help="CAGrad inner solver against the simplex grid oracle")
    common(p, need_config=False)
    p.set_defaults(func=cmd_cagrad_bench)
    p = sub.add_parser("selftest", help="run the oracle checks")
    p.add_argument("--inject-fault", action="store_true", help="flip the sign of the Hessian term")
    p.add_argument("--full", action="store_true", help="use 200 derivative instances instead of 64")
    p.add_argument("--out", help="also write selftest.csv here")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "runs", None) is not None and args.runs < 1:
        print("error: --runs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, SamplerError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
