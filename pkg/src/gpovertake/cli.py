"""Command-line entry points.

Subcommands:
  run              run a batch of seeded episodes, write logs and metrics
  sweep            success-rate curve over a list of opponent speed scalers
  predict-bench    dense-vs-sparse fit/predict timing and curated-vs-latest
                   prediction accuracy on a synthetic multi-lap opponent
  validate-config  check a scenario file and exit

Exit codes: 0 success, 2 configuration error, 3 runtime failure.

The predict-bench synthetic opponent is documented and reproducible: lateral
position d(s) = 0.3 sin(2 pi s / L) plus seeded Gaussian noise and a small
fraction of corrupted outliers; speed v(s) = s_max * v_ref(s) plus noise.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import gp, selection, sim
from .scenario import ConfigError, load_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _run_batch(scn, seeds, s_max=None, log_detail=True, out_dir=None):
    results = []
    logs = []
    for seed in seeds:
        cfg = scn.episode_config(seed)
        if s_max is not None:
            cfg.s_max = s_max
        res, log = sim.run_episode(
            scn.raceline, cfg,
            vehicle=scn.vehicle, mpc_cfg=scn.mpc_cfg, pred_cfg=scn.pred_cfg,
            plan_cfg=scn.plan_cfg, log_detail=log_detail,
        )
        results.append(res)
        logs.append(log)
    return results, logs


def cmd_run(args):
    scn = load_scenario(args.scenario, out_dir=args.out)
    seeds = [scn.seed_base + i for i in range(args.seeds or scn.episodes)]
    out = scn.out_dir
    out.mkdir(parents=True, exist_ok=True)
    ep_dir = out / "episodes"
    ep_dir.mkdir(exist_ok=True)

    results, logs = _run_batch(scn, seeds)
    for i, log in enumerate(logs):
        log.write_jsonl(ep_dir / f"ep_{i:04d}.jsonl")
    sim.write_metrics_summary(results, out / "metrics_summary.csv")
    agg = sim.aggregate_metrics(results)
    sim.write_aggregate(agg, out / "aggregate.csv")

    rate = agg["success_rate"]
    print(f"episodes: {len(results)}  overtakes: {agg['n_overtake']}  crashes: {agg['n_crash']}  "
          f"timeouts: {agg['n_timeout']}")
    print(f"success_rate: {'n/a' if rate is None else f'{rate:.4f}'}")
    print(f"compute: mean {agg['compute_mean_ms']:.2f} ms, std {agg['compute_std_ms']:.2f} ms")
    print(f"artifacts: {out}")
    return EXIT_OK


def cmd_sweep(args):
    scn = load_scenario(args.scenario, out_dir=args.out)
    smax_list = [float(v) for v in args.smax.split(",")] if args.smax else [0.0, 0.25, 0.5, 0.75]
    if not smax_list:
        raise ConfigError("--smax: empty list")
    for v in smax_list:
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"--smax: {v} outside [0, 1]")
    seeds = [scn.seed_base + i for i in range(args.seeds or scn.episodes)]
    out = scn.out_dir
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for s_max in smax_list:
        results, _ = _run_batch(scn, seeds, s_max=s_max, log_detail=False)
        rate = sim.compute_success_rate(results)
        n_ot = sum(1 for r in results if r.outcome == sim.OUTCOME_OVERTAKE)
        n_c = sum(1 for r in results if r.outcome == sim.OUTCOME_CRASH)
        n_to = sum(1 for r in results if r.outcome == sim.OUTCOME_TIMEOUT)
        rows.append((s_max, len(results), n_ot, n_c, n_to, rate))
        print(f"s_max={s_max:.2f}: {n_ot} overtakes, {n_c} crashes, {n_to} timeouts, "
              f"rate={'n/a' if rate is None else f'{rate:.3f}'}")

    with open(out / "sweep.csv", "w") as fh:
        fh.write("s_max,episodes,n_overtake,n_crash,n_timeout,success_rate\n")
        for r in rows:
            rate = "" if r[5] is None else f"{r[5]:.6f}"
            fh.write(f"{r[0]:.4f},{r[1]},{r[2]},{r[3]},{r[4]},{rate}\n")
    print(f"artifacts: {out / 'sweep.csv'}")
    return EXIT_OK


def generate_synthetic_buffer(raceline, laps=3, s_max=0.5, noise_std=0.08,
                              outlier_frac=0.04, points_per_lap=300, seed=0):
    """Documented synthetic opponent for the prediction benchmark.

    Truth: d(s) = 0.3 sin(2 pi s / L); v(s) = s_max * v_ref(s).  Observations
    add Gaussian noise; a fraction are corrupted by +-0.6 m (sensor faults).
    Returns (obs_d, obs_v, truth_d callable, truth_v callable).
    """
    rng = np.random.default_rng(seed)
    length = raceline.total_length

    def truth_d(s):
        return 0.3 * np.sin(2.0 * np.pi * np.asarray(s) / length)

    def truth_v(s):
        return s_max * raceline.sample(np.asarray(s)).v_ref

    obs_d, obs_v = [], []
    t = 0.0
    for lap in range(laps):
        s_lap = np.sort(rng.uniform(0.0, length, points_per_lap))
        d = truth_d(s_lap) + rng.normal(0.0, noise_std, points_per_lap)
        v = truth_v(s_lap) + rng.normal(0.0, noise_std, points_per_lap)
        bad = rng.random(points_per_lap) < outlier_frac
        d = np.where(bad, d + rng.choice([-0.6, 0.6], points_per_lap), d)
        for s_i, d_i, v_i in zip(s_lap, d, v):
            t += 0.05
            obs_d.append(selection.Observation(x=float(s_i), y=float(d_i), t=t, lap=lap))
            obs_v.append(selection.Observation(x=float(s_i), y=float(v_i), t=t, lap=lap))
    return obs_d, obs_v, truth_d, truth_v


def curate_buffer(observations, raceline, n_target=400, m=40, iters=120, seed=0):
    """Run the selection pipeline lap by lap, refitting after each lap.

    Returns (curated observations, fitted sparse model).
    """
    cfg = selection.SelectionConfig(
        n_target=n_target,
        delta_s=2.0 * raceline.mean_spacing,
        y_min=-float(np.max(raceline.d_left)),
        y_max=float(np.max(raceline.d_left)),
        track_length=raceline.total_length,
    )
    buf = selection.ObservationBuffer(cfg)
    model = None
    for lap in sorted({o.lap for o in observations}):
        incoming = [o for o in observations if o.lap == lap]
        buf.update(incoming, model)
        xs, ys = buf.arrays()
        init = None
        if model is not None and model.num_inducing == min(m, xs.size):
            init = dict(z=model.z, lengthscale=model.kernel.lengthscale,
                        signal_variance=model.kernel.signal_variance,
                        noise_variance=model.noise_variance)
        model = gp.fit_sgp(xs, ys, m, iters=iters, seed=seed, init=init)
    return buf.train, model


def _time_call(fn, repeats=5):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cmd_predict_bench(args):
    scn = load_scenario(args.scenario, out_dir=args.out)
    raceline = scn.raceline
    bench = dict(scn.bench)
    m_list = [int(v) for v in args.m.split(",")] if args.m else bench.get("m_list", [10, 20, 40])
    out = scn.out_dir
    out.mkdir(parents=True, exist_ok=True)

    if args.buffer:
        obs_d = selection.load_buffer(args.buffer)
        laps = len({o.lap for o in obs_d})
        if laps < 3:
            raise ConfigError(f"--buffer: need >= 3 laps of data, found {laps}")
        obs_v = None
        length = raceline.total_length

        def truth_d(s):
            return 0.3 * np.sin(2.0 * np.pi * np.asarray(s) / length)
    else:
        obs_d, obs_v, truth_d, _ = generate_synthetic_buffer(
            raceline,
            laps=int(bench.get("laps", 3)),
            s_max=float(bench.get("s_max", scn.episode.s_max)),
            noise_std=float(bench.get("noise_std", 0.08)),
            outlier_frac=float(bench.get("outlier_frac", 0.04)),
            points_per_lap=int(bench.get("points_per_lap", 300)),
            seed=scn.seed_base,
        )
        selection.save_buffer(obs_d, out / "buffer_snapshot.csv")

    grid = np.linspace(0.0, raceline.total_length, 200, endpoint=False)
    truth = truth_d(grid)
    iters = int(bench.get("iters", 120))

    curated, _ = curate_buffer(obs_d, raceline, m=max(m_list), iters=iters, seed=scn.seed_base)
    xs = np.array([o.x for o in curated])
    ys = np.array([o.y for o in curated])

    rows = []
    fit_dense_t, dense = _time_call(lambda: gp.fit_dense_gp(xs, ys, iters=iters), repeats=1)
    pred_dense_t, post_d = _time_call(lambda: gp.predict_dense(dense, grid))
    rmse_dense = float(np.sqrt(np.mean((post_d.mean - truth) ** 2)))
    rows.append(("dense", xs.size, fit_dense_t * 1e3, pred_dense_t * 1e3, rmse_dense))

    for m in m_list:
        fit_t, model = _time_call(lambda m=m: gp.fit_sgp(xs, ys, m, iters=iters, seed=scn.seed_base), repeats=1)
        pred_t, post = _time_call(lambda model=model: gp.predict(model, grid))
        rmse = float(np.sqrt(np.mean((post.mean - truth) ** 2)))
        rows.append((f"sgp_m{m}", xs.size, fit_t * 1e3, pred_t * 1e3, rmse))

    # M = N row: inducing set pinned to the data with the dense GP's
    # hyperparameters, which reproduces the dense posterior exactly.
    full = gp.make_sgp(xs, ys, xs.copy(), dense.kernel, dense.noise_variance)
    pred_full_t, post_full = _time_call(lambda: gp.predict(full, grid))
    rmse_full = float(np.sqrt(np.mean((post_full.mean - truth) ** 2)))
    rows.append(("sgp_mN", xs.size, float("nan"), pred_full_t * 1e3, rmse_full))

    with open(out / "bench.csv", "w") as fh:
        fh.write("model,n_train,fit_ms,predict_ms,rmse_m\n")
        for name, n, ft, pt, rm in rows:
            fh.write(f"{name},{n},{ft:.3f},{pt:.3f},{rm:.6f}\n")

    # Curated sparse model vs the latest-lap-only dense baseline.
    last_lap = max(o.lap for o in obs_d)
    latest = [o for o in obs_d if o.lap == last_lap]
    lx = np.array([o.x for o in latest])
    ly = np.array([o.y for o in latest])
    baseline = gp.fit_dense_gp(lx, ly, iters=iters)
    rmse_latest = float(np.sqrt(np.mean((gp.predict_dense(baseline, grid).mean - truth) ** 2)))
    sgp_row = [r for r in rows if r[0] == f"sgp_m{max(m_list)}"][0]
    rmse_curated = sgp_row[4]

    with open(out / "baseline_compare.csv", "w") as fh:
        fh.write("model,rmse_m\n")
        fh.write(f"curated_sgp_m{max(m_list)},{rmse_curated:.6f}\n")
        fh.write(f"latest_lap_dense,{rmse_latest:.6f}\n")
        fh.write(f"ratio,{rmse_curated / rmse_latest:.6f}\n")

    print(f"{'model':<12} {'fit_ms':>10} {'predict_ms':>11} {'rmse_m':>10}")
    for name, n, ft, pt, rm in rows:
        print(f"{name:<12} {ft:>10.2f} {pt:>11.3f} {rm:>10.5f}")
    print(f"curated rmse {rmse_curated:.5f} vs latest-lap {rmse_latest:.5f} "
          f"(ratio {rmse_curated / rmse_latest:.3f})")
    print(f"artifacts: {out}")
    return EXIT_OK


def cmd_validate_config(args):
    scn = load_scenario(args.scenario, out_dir=args.out)
    print(f"scenario OK: track {scn.track_path.name} "
          f"(length {scn.raceline.total_length:.1f} m, "
          f"{'closed' if scn.raceline.closed else 'open'}), "
          f"{scn.episodes} episodes, seed base {scn.seed_base}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="gpovertake", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", default=None, help="output directory override")

    p_run = sub.add_parser("run", help="run seeded episodes")
    add_common(p_run)
    p_run.add_argument("--seeds", type=int, default=None, help="episode count override")

    p_sweep = sub.add_parser("sweep", help="success rate vs speed scaler")
    add_common(p_sweep)
    p_sweep.add_argument("--seeds", type=int, default=None)
    p_sweep.add_argument("--smax", default=None, help="comma list of speed scalers in [0,1]")

    p_bench = sub.add_parser("predict-bench", help="GP vs sparse-GP benchmark")
    add_common(p_bench)
    p_bench.add_argument("--m", default=None, help="comma list of inducing counts")
    p_bench.add_argument("--buffer", default=None, help="recorded buffer snapshot CSV")

    p_val = sub.add_parser("validate-config", help="validate a scenario file")
    add_common(p_val)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "sweep": cmd_sweep,
        "predict-bench": cmd_predict_bench,
        "validate-config": cmd_validate_config,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
