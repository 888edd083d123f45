"""
Experiment pipelines: single link, Monte Carlo and the two-user scenario, plus
result emission.

A single link follows the feedback protocol: the array probes the channel at
``t_probe``, estimates the principal angle, designs the beam and transmits
the data frame ``feedback_delay_s`` later through the drifted channel. The
user synchronizes, removes the bulk Doppler scale and equalizes.
"""

from dataclasses import dataclass, field
import csv
import json
import math
import os
import time

import numpy as np

from .angle import PrincipalAngleEstimator, probe_signal
from .beamformer import design_null_steering, design_single_beam, synthesize_time_filters
from .config import ExperimentConfig, PathConfig, DriftConfig
from .channel import propagate_beamformed, propagate_uplink
from .dsp import ComplexBasebandSignal, MSequenceSpec, add_awgn, generate_mseq, pulse_shape
from .exceptions import InvalidArgumentError, StageError, UwbeamError
from .metrics import FrameMetrics, MonteCarloResult, empirical_cdf, frame_metrics
from .receiver import (
    coarse_resample,
    dfe_run,
    doppler_grid,
    front_end_filter,
    preamble_gain,
    synchronize,
)

__all__ = [
    "LinkResult",
    "TwoUserResult",
    "frame_symbols",
    "randomize_paths",
    "receive_frame",
    "run_single_link",
    "run_monte_carlo",
    "run_two_user",
    "emit_results",
]

RANDOMIZATION_MODEL = (
    "simulated channel variability: uniform random probe start time, random drift "
    "phases, log-normal path gain jitter, Gaussian drift-slope jitter and uniform "
    "angle jitter per realization"
)


@dataclass
class LinkResult:
    """Outcome of one link with its intermediate products."""

    metrics: FrameMetrics
    theta_true: float = None
    theta_est: float = None
    sync: object = None
    dfe: object = None
    symbols: np.ndarray = field(default=None, repr=False)
    phase_trace: np.ndarray = field(default=None, repr=False)
    received: ComplexBasebandSignal = field(default=None, repr=False)
    timings: dict = field(default_factory=dict)

    @property
    def mse_db(self):
        return self.metrics.mse_db


@dataclass
class TwoUserResult:
    users: list
    nulls: bool
    config: ExperimentConfig = None

    @property
    def pll_slopes(self):
        """Least-squares slope (rad/s) of each user's total phase over the second half."""
        out = []
        for u in self.users:
            ph = u.phase_trace
            T = u.timings.get("T")
            n = np.arange(ph.size)
            h = ph.size // 2
            out.append(float(np.polyfit(n[h:] * T, ph[h:], 1)[0]))
        return out


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except UwbeamError as exc:
        raise StageError(name, exc) from exc


def frame_symbols(cfg, constellation="BPSK", phase=0):
    """Frame of ``n_periods`` repeated m-sequence periods.

    BPSK uses the sequence directly; QPSK pairs it with a half-period
    rotated copy on the quadrature rail. ``phase`` cyclically rotates the
    sequence (distinct users get distinct sequences).
    """
    seq = generate_mseq(MSequenceSpec(cfg.protocol.mseq_degree)).astype(np.float64)
    seq = np.roll(seq, phase)
    if str(constellation).upper() == "QPSK":
        per = (seq + 1j * np.roll(seq, seq.size // 2)) / math.sqrt(2.0)
    else:
        per = seq.astype(np.complex128)
    return np.tile(per, cfg.protocol.n_periods), per.size


def randomize_paths(cfg, rng):
    """Perturbed copy of the configured paths and a random probe start time."""
    rz = cfg.channel.randomization
    t_probe = float(rng.uniform(0.0, rz.t_start_max_s)) if rz.t_start_max_s > 0 else 0.0
    out = []
    for p in cfg.channel.paths:
        d = p.drift
        slope = d.slope + (rng.normal(0.0, rz.slope_jitter) if rz.slope_jitter else 0.0)
        phase = float(rng.uniform(0, 2 * math.pi)) if rz.random_drift_phase else d.sin_phase
        gain = p.gain * 10.0 ** (rng.normal(0.0, rz.gain_jitter_db) / 20.0) if rz.gain_jitter_db else p.gain
        theta = p.theta_deg + (rng.uniform(-rz.angle_jitter_deg, rz.angle_jitter_deg)
                               if rz.angle_jitter_deg else 0.0)
        out.append(PathConfig(float(gain), p.tau0, float(np.clip(theta, -89.0, 89.0)),
                              DriftConfig(float(slope), d.sin_amplitude, d.sin_frequency, phase),
                              p.angle_rate_deg_s))
    return out, t_probe


def _acquire_angle(cfg, spec, t_probe, seed):
    """Principal angle from an uplink probe (or the true angle in oracle mode)."""
    if cfg.beam.angle_source == "oracle":
        return spec.paths[0].angle_at(t_probe)
    pulse = cfg.pulse_spec()
    s = cfg.system
    probe = generate_mseq(MSequenceSpec(cfg.beam.probe_degree))
    tx = probe_signal(probe, pulse, repeats=cfg.beam.probe_periods + 1)
    up = spec.replace(snr_db=cfg.beam.probe_snr_db, seed=seed, noise_reference_power=None)
    rx = propagate_uplink(tx, up, t_start=t_probe)
    est = PrincipalAngleEstimator(M=s.M, delta=s.delta, c=s.c, fc=s.fc, fs=s.fs, Ns=s.Ns,
                                  alpha_rc=cfg.pulse.alpha_rc, span_symbols=cfg.pulse.span_symbols,
                                  angle_min_deg=cfg.beam.angle_min_deg,
                                  angle_max_deg=cfg.beam.angle_max_deg,
                                  angle_step_deg=cfg.beam.angle_step_deg,
                                  periods=cfg.beam.probe_periods, skip=1)
    return est.fit(rx, probe).angle_


def _frame_power(sig, t_lo, t_hi):
    t = sig.times
    m = (t >= t_lo) & (t <= t_hi)
    return float(np.mean(np.abs(sig.samples[m]) ** 2)) if m.any() else sig.power


def _add(a, b):
    """Sum of two signals on a common sample grid (t0 differing by whole samples)."""
    fs = a.sample_rate
    off = int(round((b.t0 - a.t0) * fs))
    lo = min(0, off)
    hi = max(len(a), off + len(b))
    out = np.zeros(hi - lo, dtype=np.complex128)
    out[-lo: -lo + len(a)] += a.samples
    out[off - lo: off - lo + len(b)] += b.samples
    return ComplexBasebandSignal(out, fs, a.t0 + lo / fs)


def receive_frame(y, symbols, n_pre, cfg, eq=None):
    """Synchronize, resample and equalize one received frame.

    Returns ``(DFEResult, SyncResult, total_phase)``; the total phase adds
    the carrier ramp removed by the coarse Doppler step to the PLL phase.
    """
    pulse = cfg.pulse_spec()
    s = cfg.system
    pr = cfg.protocol
    eq = cfg.equalizer_config() if eq is None else eq
    v = front_end_filter(y, pulse) if pr.front_end_filter else y
    pre = symbols[:n_pre]
    grid = doppler_grid(pr.doppler_max, pr.doppler_step) if pr.doppler_max > 0 else None
    sr = _stage("sync", synchronize, v, pre, pulse, fc=s.fc, doppler=grid,
                threshold_db=pr.sync_threshold_db)
    a = sr.coarse_doppler
    u = coarse_resample(v, a, s.fc)
    t1 = v.t0 + (sr.t_first - v.t0) * (1.0 - a)
    g = preamble_gain(u, pre, pulse, t1)
    if not abs(g) > 0:
        raise StageError("sync", "zero preamble gain")
    u = u.scaled(1.0 / g)
    res = _stage("equalize", dfe_run, u, eq, symbols[: eq.Nt], symbols.size, t1, s.T, s.fc,
                 raise_on_error=False)
    n = np.arange(res.phi.size)
    total = res.phi + np.angle(g) - 2 * np.pi * s.fc * a / (1.0 - a) * (n * s.T)
    return res, sr, total


def _failed_metrics(symbols, eq, stage):
    from .receiver import symbols_to_bits

    Nt = min(eq.Nt, symbols.size - 1)
    bits = symbols_to_bits(symbols[Nt:], eq.constellation).size
    return FrameMetrics(0.0, bits, symbols.size - Nt, False, bits, None, None, stage)


def run_single_link(cfg, seed=None, paths=None, t_probe=0.0, keep_traces=True, fail_soft=False,
                    M=None):
    """Probe, design, transmit after the feedback delay, receive and score one frame.

    Parameters
    ----------
    cfg : ExperimentConfig
    seed : int or SeedSequence, optional
        Defaults to ``cfg.seed``.
    paths : list of PathConfig, optional
        Overrides the configured paths.
    t_probe : float
        Absolute time of the probe; the frame goes out ``feedback_delay_s``
        later.
    fail_soft : bool
        Record stage failures in the metrics instead of raising.
    M : int, optional
        Override of the element count (``1`` gives the single-element link).
    """
    t_all = time.perf_counter()
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(
        cfg.seed if seed is None else seed)
    s_probe, s_noise = ss.spawn(2)
    s = cfg.system
    pulse = cfg.pulse_spec()
    eq = cfg.equalizer_config()
    spec = cfg.channel_spec(paths=paths, M=M)
    geom = spec.geom
    symbols, n_pre = frame_symbols(cfg, eq.constellation)
    t_frame = t_probe + cfg.protocol.feedback_delay_s
    theta_true = spec.paths[0].angle_at(t_probe) if spec.P else None
    timings = {"T": s.T}
    try:
        t0 = time.perf_counter()
        theta = _stage("angle", _acquire_angle, cfg, spec, t_probe, s_probe) if geom.M > 1 else 0.0
        timings["angle"] = time.perf_counter() - t0
        w = _stage("design", design_single_beam, geom, theta, s.fc, s.fs, cfg.beam.L, s.Ns,
                   cfg.pulse.alpha_rc)
        F = synthesize_time_filters(w)
        x = pulse_shape(symbols, pulse)
        t0 = time.perf_counter()
        y = _stage("channel", propagate_beamformed, x, F, spec, t_frame, noiseless=True)
        tau_min = min(p.tau0 for p in spec.paths)
        span = (tau_min, tau_min + symbols.size * s.T)
        if cfg.channel.snr_reference == "transmit":
            ref = _frame_power(x, 0.0, symbols.size * s.T) * sum(p.gain ** 2 for p in spec.paths)
        else:
            ref = _frame_power(y, *span)
        y = add_awgn(y, cfg.channel.snr_db, s_noise, reference_power=ref)
        timings["channel"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        res, sr, total = receive_frame(y, symbols, n_pre, cfg, eq)
        timings["receive"] = time.perf_counter() - t0
    except StageError as exc:
        if not fail_soft:
            raise
        m = _failed_metrics(symbols, eq, exc.stage)
        return LinkResult(m, theta_true, None, symbols=symbols, timings=timings)
    met = frame_metrics(symbols, res, cfg.protocol.mse_floor_db, pll_trace=total, keep_traces=keep_traces)
    timings["total"] = time.perf_counter() - t_all
    return LinkResult(met, theta_true, float(theta), sr, res if keep_traces else None,
                      symbols if keep_traces else None, total if keep_traces else None,
                      y if keep_traces else None, timings)


def run_monte_carlo(cfg, K=None, progress=None):
    """``K`` independent seeded realizations (default ``protocol.realizations``).

    Realization ``i`` uses the ``i``-th child of the master seed for its
    path perturbations, probe noise and frame noise; stage failures and
    divergence are recorded in the metrics, not raised.
    """
    K = cfg.protocol.realizations if K is None else int(K)
    if K < 1:
        raise InvalidArgumentError("K must be >= 1")
    t0 = time.perf_counter()
    children = np.random.SeedSequence(cfg.seed).spawn(K)
    metrics = []
    for i, child in enumerate(children):
        s_rand, s_link = child.spawn(2)
        paths, t_probe = randomize_paths(cfg, np.random.default_rng(s_rand))
        lr = run_single_link(cfg, s_link, paths=paths, t_probe=t_probe, keep_traces=(i == 0),
                             fail_soft=True)
        metrics.append(lr.metrics)
        if progress is not None:
            progress(i, lr)
    return MonteCarloResult(metrics, int(cfg.seed), cfg, time.perf_counter() - t0)


def _user_paths(theta_deg, j, speed, c, secondary_gain):
    a = speed / c
    base_tau = 0.020 + 0.003 * j
    d = DriftConfig(a, 0.0, 0.0, 0.0)
    return [
        PathConfig(1.0, base_tau, theta_deg, d),
        PathConfig(secondary_gain, base_tau + 0.0017, 25.0, d),
        PathConfig(0.8 * secondary_gain, base_tau + 0.0031, -30.0, d),
    ]


def run_two_user(cfg, seed=None, nulls=None):
    """Two users served at once by separate beams with independent payloads.

    User 1 carries BPSK, user 2 QPSK (per ``two_user.constellations``).
    With ``nulls`` each beam places an exact null toward the other user's
    angle. User 2's stream starts a random fraction of a symbol plus a
    random whole number of symbols after user 1's. Each receiver treats the
    other stream as interference.
    """
    tu = cfg.two_user
    nulls = tu.nulls if nulls is None else nulls
    ss = np.random.SeedSequence(cfg.seed if seed is None else seed)
    s_off, s_n1, s_n2 = ss.spawn(3)
    rng = np.random.default_rng(s_off)
    s = cfg.system
    geom = s.geometry
    pulse = cfg.pulse_spec()
    th = [math.radians(a) for a in tu.angles_deg]
    if len(th) != 2 or th[0] == th[1]:
        raise InvalidArgumentError("two distinct user angles are required")
    if nulls:
        W = [design_null_steering(geom, th[0], [th[1]], s.fc, s.fs, cfg.beam.L, s.Ns, cfg.pulse.alpha_rc),
             design_null_steering(geom, th[1], [th[0]], s.fc, s.fs, cfg.beam.L, s.Ns, cfg.pulse.alpha_rc)]
    else:
        W = [design_single_beam(geom, t, s.fc, s.fs, cfg.beam.L, s.Ns, cfg.pulse.alpha_rc) for t in th]
    F = [synthesize_time_filters(w) for w in W]
    frames = [frame_symbols(cfg, tu.constellations[k], phase=k * 101) for k in range(2)]
    offset = float(rng.uniform(0.0, s.T)) + int(rng.integers(0, tu.max_symbol_offset + 1)) * s.T
    amp2 = 10.0 ** (-tu.sir_db / 20.0)
    xs = [pulse_shape(frames[0][0], pulse), pulse_shape(frames[1][0], pulse, delay=offset).scaled(amp2)]
    t_frame = cfg.protocol.feedback_delay_s
    users = []
    noise_seeds = [s_n1, s_n2]
    for j in range(2):
        paths = _user_paths(tu.angles_deg[j], j, tu.speeds_mps[j], s.c, tu.secondary_gain)
        spec = cfg.channel_spec(paths=paths)
        own = propagate_beamformed(xs[j], F[j], spec, t_frame, noiseless=True)
        other = propagate_beamformed(xs[1 - j], F[1 - j], spec, t_frame, noiseless=True)
        sym, n_pre = frames[j]
        t_lo = paths[0].tau0 + (offset if j == 1 else 0.0)
        ref = _frame_power(own, t_lo, t_lo + sym.size * s.T)
        y = add_awgn(_add(own, other), tu.snr_db, noise_seeds[j], reference_power=ref)
        eq = cfg.equalizer_config(constellation=tu.constellations[j])
        try:
            res, sr, total = receive_frame(y, sym, n_pre, cfg, eq)
        except StageError as exc:
            users.append(LinkResult(_failed_metrics(sym, eq, exc.stage), th[j], th[j], symbols=sym,
                                    timings={"T": s.T}))
            continue
        met = frame_metrics(sym, res, cfg.protocol.mse_floor_db, pll_trace=total)
        users.append(LinkResult(met, th[j], th[j], sr, res, sym, total, y, {"T": s.T}))
    return TwoUserResult(users, bool(nulls), cfg)


# --- emission --------------------------------------------------------------------


def _version():
    try:
        from importlib.metadata import version

        return version("uwbeam")
    except Exception:  # pragma: no cover - not installed
        from . import __version__

        return __version__


def _open(path):
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _write_rows(path, header, rows):
    with _open(path) as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _r(x):
    return repr(float(x))


def emit_results(result, out_dir, config=None, command=None):
    """Write CSV outputs and a run manifest to ``out_dir``.

    Files: ``mse_cdf.csv``, ``metrics.csv``, ``constellation.csv``,
    ``pll_trace.csv`` and ``manifest.json``. Returns the list of paths.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    if isinstance(result, MonteCarloResult):
        cfg = config or result.config
        mets = list(result.metrics)
        labels = list(range(len(mets)))
        seed = result.master_seed
        first = mets[0] if mets else None
        traces = [(0, first)] if first is not None else []
        kind = "monte_carlo"
    elif isinstance(result, TwoUserResult):
        cfg = config or result.config
        mets = [u.metrics for u in result.users]
        labels = [1, 2]
        seed = cfg.seed if cfg is not None else None
        traces = list(zip(labels, mets))
        kind = "two_user"
    elif isinstance(result, LinkResult):
        cfg = config
        mets = [result.metrics]
        labels = [0]
        seed = cfg.seed if cfg is not None else None
        traces = [(0, result.metrics)]
        kind = "single_link"
    else:
        raise InvalidArgumentError(f"cannot emit {type(result).__name__}")
    if not mets:
        raise InvalidArgumentError("empty result")
    paths = []
    p = os.path.join(out_dir, "mse_cdf.csv")
    v, F = empirical_cdf([m.mse_db for m in mets])
    _write_rows(p, ["mse_db", "cdf"], [[_r(a), _r(b)] for a, b in zip(v, F)])
    paths.append(p)
    p = os.path.join(out_dir, "metrics.csv")
    _write_rows(p, ["realization", "mse_db", "bit_errors", "converged", "symbols", "bits"],
                [[i, _r(m.mse_db), m.bit_errors, int(m.converged), m.symbols, m.bits]
                 for i, m in zip(labels, mets)])
    paths.append(p)
    p = os.path.join(out_dir, "constellation.csv")
    rows = []
    for lab, m in traces:
        if m is None or m.d_hat is None:
            continue
        Nt = m.d_hat.size - m.symbols if m.d_hat.size >= m.symbols else 0
        for n in range(Nt, m.d_hat.size):
            rows.append([lab, n, _r(m.d_hat[n].real), _r(m.d_hat[n].imag)])
    _write_rows(p, ["realization", "n", "d_hat_re", "d_hat_im"], rows)
    paths.append(p)
    p = os.path.join(out_dir, "pll_trace.csv")
    rows = []
    for lab, m in traces:
        if m is None or m.pll_trace is None:
            continue
        rows.extend([lab, n, _r(ph)] for n, ph in enumerate(m.pll_trace))
    _write_rows(p, ["realization", "n", "phi_hat"], rows)
    paths.append(p)
    manifest = {
        "manifest_version": 1,
        "artifact_version": _version(),
        "kind": kind,
        "master_seed": seed,
        "config": cfg.to_dict() if cfg is not None else None,
        "randomization_model": RANDOMIZATION_MODEL,
        "command": command,
        "realizations": len(mets),
    }
    p = os.path.join(out_dir, "manifest.json")
    with _open(p) as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    paths.append(p)
    return paths
