"""
Time-varying multipath downlink between the array and a single-element user.

Each path has a real amplitude, a reference delay at element 0, a
departure/arrival angle and a Doppler drift law. Element ``m`` sees path
``p`` with delay ``tau_p + m dtau_p`` and baseband gain
``h_p exp(-j 2 pi fc tau_p) exp(-j 2 pi fc m dtau_p)``. The drift enters
both the waveform delay and the carrier phase and is evaluated at absolute
time ``t_start + t`` so that frames sent later see a different channel.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import signal as sps

from ._validation import check_positive, check_same_rate
from .beamformer import ArrayGeometry, BeamFilters
from .dsp import (
    INTERP_TAPS,
    ComplexBasebandSignal,
    add_awgn,
    delay_samples,
    interpolate_at,
)
from .exceptions import InvalidArgumentError

__all__ = [
    "DriftLaw",
    "PathSpec",
    "ChannelSpec",
    "Decomposition",
    "element_path_params",
    "propagate",
    "propagate_beamformed",
    "propagate_uplink",
    "path_composite",
    "interference_decomposition",
]

_MARGIN = INTERP_TAPS // 2 + 2


@dataclass(frozen=True)
class DriftLaw:
    """Path delay perturbation ``slope * t + amplitude * sin(2 pi f t + phase)``.

    ``slope`` is dimensionless (relative velocity over sound speed); a
    positive slope lengthens the path over time.
    """

    slope: float = 0.0
    sin_amplitude: float = 0.0
    sin_frequency: float = 0.0
    sin_phase: float = 0.0

    def __post_init__(self):
        if abs(self.slope) >= 0.01:
            raise InvalidArgumentError(f"|drift slope| must be < 0.01, got {self.slope}")

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = self.slope * t
        if self.sin_amplitude:
            out = out + self.sin_amplitude * np.sin(2 * np.pi * self.sin_frequency * t + self.sin_phase)
        return out

    @property
    def is_static(self):
        return self.slope == 0.0 and self.sin_amplitude == 0.0


@dataclass(frozen=True)
class PathSpec:
    """One propagation path.

    Parameters
    ----------
    gain : float
        Real amplitude.
    tau0 : float
        Delay at element 0 in seconds.
    theta : float
        Angle in radians from broadside.
    drift : DriftLaw
        Delay perturbation law.
    angle_rate : float
        Slow angle change in rad/s, frozen within a frame.
    """

    gain: float
    tau0: float
    theta: float
    drift: DriftLaw = field(default_factory=DriftLaw)
    angle_rate: float = 0.0

    def __post_init__(self):
        if self.tau0 < 0:
            raise InvalidArgumentError(f"tau0 must be >= 0, got {self.tau0}")
        if abs(self.theta) > math.pi / 2:
            raise InvalidArgumentError(f"|theta| must be <= pi/2, got {self.theta}")

    def angle_at(self, t):
        return float(np.clip(self.theta + self.angle_rate * t, -math.pi / 2, math.pi / 2))


@dataclass(frozen=True)
class ChannelSpec:
    """Multipath channel description.

    ``snr_db`` sets the noise level against the mean noiseless received
    power, or against ``noise_reference_power`` when that is given.
    """

    paths: tuple
    geom: ArrayGeometry
    fc: float
    snr_db: float = math.inf
    seed: object = None
    noise_reference_power: float = None

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        check_positive(self.fc, "fc")

    @property
    def P(self):
        return len(self.paths)

    def replace(self, **kw):
        from dataclasses import replace

        return replace(self, **kw)


def element_path_params(spec, p, m, t=0.0):
    """Delay (s) and complex baseband gain of path ``p`` at element ``m``.

    ``t`` is the absolute time at which the path angle is read.
    """
    if not 0 <= p < spec.P:
        raise IndexError(f"path index {p} out of range for {spec.P} paths")
    if not 0 <= m < spec.geom.M:
        raise IndexError(f"element index {m} out of range for {spec.geom.M} elements")
    path = spec.paths[p]
    dtau = spec.geom.delta * math.sin(path.angle_at(t)) / spec.geom.c
    delay = path.tau0 + m * dtau
    gain = path.gain * np.exp(-2j * np.pi * spec.fc * path.tau0) * np.exp(-2j * np.pi * spec.fc * m * dtau)
    return delay, complex(gain)


def _element_table(spec, p, t):
    """Per-element extra delays ``m dtau_p`` (s) and gains for path ``p``."""
    path = spec.paths[p]
    dtau = spec.geom.delta * math.sin(path.angle_at(t)) / spec.geom.c
    m = np.arange(spec.geom.M)
    gains = path.gain * np.exp(-2j * np.pi * spec.fc * path.tau0) * np.exp(-2j * np.pi * spec.fc * m * dtau)
    return m * dtau, gains


@dataclass(frozen=True)
class _Composite:
    """Sum over elements of one path, before the path's own delay."""

    samples: np.ndarray
    t0: float


def _stack(tx):
    if isinstance(tx, ComplexBasebandSignal):
        tx = [tx]
    tx = list(tx)
    if not tx:
        raise InvalidArgumentError("need at least one transmit signal")
    fs = check_same_rate(tx, "transmit signals")
    t0s = {s.t0 for s in tx}
    if max(t0s) - min(t0s) > 1e-12:
        raise InvalidArgumentError("transmit signals must share t0")
    n = max(len(s) for s in tx)
    X = np.zeros((len(tx), n), dtype=np.complex128)
    for i, s in enumerate(tx):
        X[i, : len(s)] = s.samples
    return X, fs, tx[0].t0


def path_composite(tx, spec, p, t_start=0.0):
    """``sum_m gain_{p,m} tx_m(t - m dtau_p)`` for path ``p``.

    The path's own delay ``tau_p`` and drift are not applied; with a
    single-beam transmission this is the composite pulse that the path
    carries to the user.
    """
    X, fs, t0 = _stack(tx)
    if X.shape[0] != spec.geom.M:
        raise InvalidArgumentError(f"expected {spec.geom.M} transmit signals, got {X.shape[0]}")
    c = _composite_from_stack(X, fs, t0, spec, p, t_start)
    return ComplexBasebandSignal(c.samples, fs, c.t0)


def _composite_from_stack(X, fs, t0, spec, p, t_start):
    delays, gains = _element_table(spec, p, t_start)
    d = delays * fs
    base = math.floor(d.min()) - _MARGIN
    n_out = X.shape[1] + int(math.ceil(d.max())) - base + _MARGIN
    acc = np.zeros(n_out, dtype=np.complex128)
    for m in range(X.shape[0]):
        acc += gains[m] * delay_samples(X[m], d[m] - base, out_len=n_out)
    return _Composite(acc, t0 + base / fs)


def _composite_from_filters(x, filters, spec, p, t_start):
    """Same as :func:`_composite_from_stack` for a beamformed transmission.

    The per-element delays are folded into the element filters so only one
    long convolution per path is needed.
    """
    delays, gains = _element_table(spec, p, t_start)
    fs = filters.fs
    d = delays * fs
    base = math.floor(d.min()) - _MARGIN
    kern = filters.centered()
    klen = filters.L + int(math.ceil(d.max())) - base + _MARGIN
    k = np.zeros(klen, dtype=np.complex128)
    for m in range(filters.M):
        k += gains[m] * delay_samples(kern[m], d[m] - base, out_len=klen)
    z = sps.oaconvolve(x.samples, k)
    return _Composite(z, x.t0 - (filters.L // 2) / fs + base / fs)


def _uniform_shift(x, p0, n):
    """``x`` evaluated at positions ``p0, p0 + 1, ..., p0 + n - 1``."""
    return delay_samples(x, -p0, out_len=n)


def _apply_paths(composites, spec, fs, t_start, t_lo, t_hi, which=None):
    """Apply path delays, drift and carrier phase; sum selected paths.

    Returns ``(samples, t0)`` on the grid ``t0 + k / fs``.
    """
    Ts = 1.0 / fs
    # drift range over the frame sets the output extent
    probe_t = np.linspace(t_lo, t_hi, 257)
    lo, hi = math.inf, -math.inf
    for p, path in enumerate(spec.paths):
        eps = path.drift(t_start + probe_t)
        c = composites[p]
        start = c.t0 + path.tau0 + eps.min()
        end = c.t0 + c.samples.size * Ts + path.tau0 + eps.max()
        lo, hi = min(lo, start), max(hi, end)
    k0 = math.floor((lo - t_lo) / Ts) - 1
    t0 = t_lo + k0 * Ts
    n = int(math.ceil((hi - t0) / Ts)) + 1
    t = t0 + np.arange(n) * Ts
    out = np.zeros(n, dtype=np.complex128)
    for p, path in enumerate(spec.paths):
        if which is not None and p not in which:
            continue
        c = composites[p]
        if path.drift.is_static:
            y = _uniform_shift(c.samples, (t0 - path.tau0 - c.t0) * fs, n)
        else:
            eps = path.drift(t_start + t)
            pos = (t - path.tau0 - eps - c.t0) * fs
            y = interpolate_at(c.samples, pos) * np.exp(-2j * np.pi * spec.fc * eps)
        out += y
    return out, t0


def _finish(samples, t0, fs, spec, rng):
    sig = ComplexBasebandSignal(samples, fs, t0)
    if spec.snr_db == math.inf:
        return sig
    ref = spec.noise_reference_power
    if ref is None and sig.power == 0:
        raise InvalidArgumentError("cannot set SNR against a zero received signal; give noise_reference_power")
    seed = spec.seed if rng is None else rng
    return add_awgn(sig, spec.snr_db, seed, reference_power=ref)


def _empty_output(t0, n, fs, spec, rng):
    if spec.snr_db == math.inf:
        return ComplexBasebandSignal(np.zeros(n), fs, t0)
    if spec.noise_reference_power is None:
        raise InvalidArgumentError("a channel without paths needs noise_reference_power for finite SNR")
    return add_awgn(ComplexBasebandSignal(np.zeros(n), fs, t0), spec.snr_db,
                    spec.seed if rng is None else rng, reference_power=spec.noise_reference_power)


def propagate(tx, spec, t_start=0.0, rng=None, noiseless=False):
    """Received baseband signal for per-element transmit signals.

    ``output(t) = sum_m sum_p gain_{p,m} tx_m(t - tau_p^m - eps_p(t_start + t))
    exp(-j 2 pi fc eps_p(t_start + t)) + noise``.

    Parameters
    ----------
    tx : list of ComplexBasebandSignal
        One signal per element, common rate and ``t0``.
    spec : ChannelSpec
    t_start : float
        Absolute time of the local time origin ``t = 0``.
    rng : optional
        Overrides ``spec.seed`` for the noise.
    noiseless : bool
        Skip the noise.
    """
    if t_start < 0:
        raise InvalidArgumentError("t_start must be >= 0")
    X, fs, t0 = _stack(tx)
    if X.shape[0] != spec.geom.M:
        raise InvalidArgumentError(f"expected {spec.geom.M} transmit signals, got {X.shape[0]}")
    if spec.P == 0:
        return _empty_output(t0, X.shape[1], fs, spec, rng) if not noiseless else \
            ComplexBasebandSignal(np.zeros(X.shape[1]), fs, t0)
    comps = [_composite_from_stack(X, fs, t0, spec, p, t_start) for p in range(spec.P)]
    t_hi = t0 + X.shape[1] / fs
    samples, out_t0 = _apply_paths(comps, spec, fs, t_start, t0, t_hi)
    if noiseless:
        return ComplexBasebandSignal(samples, fs, out_t0)
    return _finish(samples, out_t0, fs, spec, rng)


def propagate_beamformed(x, filters, spec, t_start=0.0, rng=None, noiseless=False, which=None):
    """:func:`propagate` for ``tx_m = x * psi_m`` without materializing ``tx``.

    ``x`` is the pulse-shaped signal and ``filters`` the element filters;
    the result equals ``propagate(apply_transmit_beamforming(...), spec)``.
    ``which`` restricts the sum to a subset of path indices.
    """
    if not isinstance(filters, BeamFilters):
        raise InvalidArgumentError("filters must be BeamFilters")
    if abs(filters.fs - x.sample_rate) > 1e-9 * filters.fs:
        raise InvalidArgumentError("filter and signal sample rates differ")
    if filters.M != spec.geom.M:
        raise InvalidArgumentError(f"expected {spec.geom.M} element filters, got {filters.M}")
    fs = x.sample_rate
    t0 = x.t0 - (filters.L // 2) / fs
    n = len(x) + filters.L - 1
    if spec.P == 0:
        return _empty_output(t0, n, fs, spec, rng) if not noiseless else \
            ComplexBasebandSignal(np.zeros(n), fs, t0)
    comps = [_composite_from_filters(x, filters, spec, p, t_start) for p in range(spec.P)]
    samples, out_t0 = _apply_paths(comps, spec, fs, t_start, t0, t0 + n / fs, which=which)
    if noiseless:
        return ComplexBasebandSignal(samples, fs, out_t0)
    return _finish(samples, out_t0, fs, spec, rng)


def propagate_uplink(tx, spec, t_start=0.0, rng=None, noiseless=False):
    """Per-element receptions of a single-element transmission (reciprocal channel).

    Element ``m`` receives ``sum_p gain_{p,m} tx(t - tau_p^m - eps_p) exp(-j 2 pi fc eps_p)``.
    Noise is independent across elements; its level is referenced to the
    mean received power over all elements.
    """
    if isinstance(tx, (list, tuple)):
        if len(tx) != 1:
            raise InvalidArgumentError("uplink takes a single transmit signal")
        tx = tx[0]
    fs = tx.sample_rate
    Ts = 1.0 / fs
    M = spec.geom.M
    if spec.P == 0:
        out_t0, n = tx.t0, len(tx)
        samples = np.zeros((M, n), dtype=np.complex128)
    else:
        t_lo, t_hi = tx.t0, tx.t0 + tx.duration
        lo, hi = math.inf, -math.inf
        probe_t = np.linspace(t_lo, t_hi, 257)
        tables = [_element_table(spec, p, t_start) for p in range(spec.P)]
        for p, path in enumerate(spec.paths):
            eps = path.drift(t_start + probe_t)
            dl = tables[p][0]
            lo = min(lo, t_lo + path.tau0 + dl.min() + eps.min())
            hi = max(hi, t_hi + path.tau0 + dl.max() + eps.max())
        k0 = math.floor((lo - t_lo) / Ts) - _MARGIN
        out_t0 = t_lo + k0 * Ts
        n = int(math.ceil((hi - out_t0) / Ts)) + _MARGIN
        t = out_t0 + np.arange(n) * Ts
        samples = np.zeros((M, n), dtype=np.complex128)
        for p, path in enumerate(spec.paths):
            dl, gains = tables[p]
            if path.drift.is_static:
                for m in range(M):
                    p0 = (out_t0 - path.tau0 - dl[m] - tx.t0) * fs
                    samples[m] += gains[m] * _uniform_shift(tx.samples, p0, n)
                continue
            eps = path.drift(t_start + t)
            rot = np.exp(-2j * np.pi * spec.fc * eps)
            for m in range(M):
                pos = (t - path.tau0 - dl[m] - eps - tx.t0) * fs
                samples[m] += gains[m] * rot * interpolate_at(tx.samples, pos)
    if noiseless or spec.snr_db == math.inf:
        return [ComplexBasebandSignal(samples[m], fs, out_t0) for m in range(M)]
    ref = spec.noise_reference_power
    if ref is None:
        ref = float(np.mean(np.abs(samples) ** 2))
    if not ref > 0:
        raise InvalidArgumentError("cannot set SNR against a zero received signal; give noise_reference_power")
    gen = np.random.default_rng(rng if rng is not None else spec.seed)
    out = []
    for m in range(M):
        out.append(add_awgn(ComplexBasebandSignal(samples[m], fs, out_t0), spec.snr_db, gen,
                            reference_power=ref))
    return out


@dataclass(frozen=True)
class Decomposition:
    """Received signal split into principal, interference and noise parts."""

    principal: ComplexBasebandSignal
    interference: ComplexBasebandSignal
    noise: ComplexBasebandSignal
    total: ComplexBasebandSignal


def interference_decomposition(tx, spec, t_start=0.0, rng=None):
    """Split :func:`propagate` output into the path-0 term, the other paths and noise.

    Path 0 is the principal path. ``principal + interference + noise``
    reproduces the propagated signal.
    """
    if spec.P == 0:
        raise InvalidArgumentError("decomposition needs at least one path")
    X, fs, t0 = _stack(tx)
    if X.shape[0] != spec.geom.M:
        raise InvalidArgumentError(f"expected {spec.geom.M} transmit signals, got {X.shape[0]}")
    comps = [_composite_from_stack(X, fs, t0, spec, p, t_start) for p in range(spec.P)]
    t_hi = t0 + X.shape[1] / fs
    principal, out_t0 = _apply_paths(comps, spec, fs, t_start, t0, t_hi, which={0})
    others, _ = _apply_paths(comps, spec, fs, t_start, t0, t_hi, which=set(range(1, spec.P)))
    clean = principal + others
    total = _finish(clean, out_t0, fs, spec, rng)
    noise = total.samples - clean
    mk = lambda s: ComplexBasebandSignal(s, fs, out_t0)  # noqa: E731
    return Decomposition(mk(principal), mk(others), mk(noise), total)
