"""Command-line entry point: ``uwbeam <subcommand> [options]``."""

import argparse
import csv
import math
import os
import sys

import numpy as np

from .angle import (
    PrincipalAngleEstimator,
    probe_signal,
    write_map_csv,
)
from .beamformer import (
    beam_pattern,
    design_null_steering,
    design_single_beam,
    synthesize_time_filters,
    write_filters_csv,
    write_weights_csv,
)
from .channel import propagate_uplink
from .config import ExperimentConfig, load_config
from .dsp import MSequenceSpec, generate_mseq
from .exceptions import UwbeamError
from .experiment import emit_results, run_monte_carlo, run_single_link, run_two_user


def _common(p):
    p.add_argument("--config", help="JSON config file or run manifest")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--profile", choices=["space", "mace"], help="named system profile")
    p.add_argument("--realizations", type=int, help="Monte Carlo realization count K")


def build_parser():
    ap = argparse.ArgumentParser(prog="uwbeam", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("design-weights", help="write beam weight and filter CSVs")
    _common(p)
    p.add_argument("--theta", type=float, default=0.0, help="steering angle in degrees")
    p.add_argument("--null", type=float, action="append", default=[], help="null angle in degrees")
    p = sub.add_parser("beampattern", help="array response versus angle")
    _common(p)
    p.add_argument("--theta", type=float, default=0.0, help="steering angle in degrees")
    p.add_argument("--null", type=float, action="append", default=[], help="null angle in degrees")
    p.add_argument("--freq", type=float, help="evaluation frequency in Hz (default fc)")
    p.add_argument("--step", type=float, default=0.1, help="angle step in degrees")
    p = sub.add_parser("sim", help="single link")
    _common(p)
    p = sub.add_parser("mc", help="Monte Carlo run")
    _common(p)
    p = sub.add_parser("two-user", help="two simultaneous users")
    _common(p)
    p.add_argument("--no-nulls", action="store_true", help="plain single beams instead of null steering")
    p = sub.add_parser("angle-map", help="delay-angle map from a simulated probe")
    _common(p)
    return ap


def resolve_config(args):
    if args.config:
        cfg = load_config(args.config)
        if args.profile and args.profile != cfg.profile:
            cfg = cfg.with_updates(profile=args.profile)
    else:
        cfg = ExperimentConfig.from_profile(args.profile or "space")
    upd = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise SystemExit("--seed must be an unsigned 64-bit integer")
        upd["seed"] = args.seed
    if args.realizations is not None:
        upd["protocol"] = {"realizations": args.realizations}
    return cfg.with_updates(**upd) if upd else cfg


def _design(cfg, theta_deg, nulls_deg):
    s = cfg.system
    geom = s.geometry
    if nulls_deg:
        return design_null_steering(geom, math.radians(theta_deg), [math.radians(a) for a in nulls_deg],
                                    s.fc, s.fs, cfg.beam.L, s.Ns, cfg.pulse.alpha_rc)
    return design_single_beam(geom, math.radians(theta_deg), s.fc, s.fs, cfg.beam.L, s.Ns,
                              cfg.pulse.alpha_rc)


def _print_metrics(label, m):
    print(f"{label}: mse_db={m.mse_db:.2f} bit_errors={m.bit_errors} symbols={m.symbols} "
          f"converged={m.converged}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        os.makedirs(args.out, exist_ok=True)
        cmdline = ["uwbeam"] + list(sys.argv[1:] if argv is None else argv)
        if args.command == "design-weights":
            w = _design(cfg, args.theta, args.null)
            write_weights_csv(os.path.join(args.out, "weights.csv"), w)
            write_filters_csv(os.path.join(args.out, "filters.csv"), synthesize_time_filters(w), w)
            print(f"wrote {len(w.band)} band bins x {w.M} elements to {args.out}")
        elif args.command == "beampattern":
            w = _design(cfg, args.theta, args.null)
            f = cfg.system.fc if args.freq is None else args.freq
            deg = np.arange(-90.0, 90.0 + 1e-9, args.step)
            g = beam_pattern(w, np.deg2rad(deg), f)
            path = os.path.join(args.out, "beampattern.csv")
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["angle_deg", "gain", "gain_db"])
                for a, v in zip(deg, g):
                    wr.writerow([repr(float(a)), repr(float(v)),
                                 repr(float(20 * np.log10(max(v, 1e-300))))])
            print(f"wrote {path}")
        elif args.command == "sim":
            r = run_single_link(cfg)
            emit_results(r, args.out, cfg, cmdline)
            _print_metrics("link", r.metrics)
        elif args.command == "mc":
            K = cfg.protocol.realizations

            def progress(i, lr):
                if (i + 1) % max(1, K // 20) == 0 or i + 1 == K:
                    print(f"realization {i + 1}/{K}: mse_db={lr.metrics.mse_db:.2f}", flush=True)

            res = run_monte_carlo(cfg, progress=progress)
            emit_results(res, args.out, cfg, cmdline)
            print(f"K={res.K} median_mse_db={np.median(res.mse_db):.2f} ber={res.ber:.3g} "
                  f"diverged={res.diverged} elapsed_s={res.elapsed_s:.1f}")
        elif args.command == "two-user":
            r = run_two_user(cfg, nulls=not args.no_nulls)
            emit_results(r, args.out, cfg, cmdline)
            for k, u in enumerate(r.users, 1):
                _print_metrics(f"user {k}", u.metrics)
            print("pll slopes (rad/s): " + ", ".join(f"{s:.3f}" for s in r.pll_slopes))
        elif args.command == "angle-map":
            s = cfg.system
            pulse = cfg.pulse_spec()
            probe = generate_mseq(MSequenceSpec(cfg.beam.probe_degree))
            tx = probe_signal(probe, pulse, repeats=cfg.beam.probe_periods + 1)
            spec = cfg.channel_spec(snr_db=cfg.beam.probe_snr_db, seed=np.random.SeedSequence(cfg.seed))
            rx = propagate_uplink(tx, spec, t_start=0.0)
            est = PrincipalAngleEstimator(M=s.M, delta=s.delta, c=s.c, fc=s.fc, fs=s.fs, Ns=s.Ns,
                                          alpha_rc=cfg.pulse.alpha_rc,
                                          span_symbols=cfg.pulse.span_symbols,
                                          angle_step_deg=cfg.beam.angle_step_deg,
                                          angle_min_deg=cfg.beam.angle_min_deg,
                                          angle_max_deg=cfg.beam.angle_max_deg,
                                          periods=cfg.beam.probe_periods)
            est.fit(rx, probe)
            path = os.path.join(args.out, "angle_map.csv")
            write_map_csv(path, est.map_)
            print(f"principal angle {math.degrees(est.angle_):.2f} deg; wrote {path}")
    except (UwbeamError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
