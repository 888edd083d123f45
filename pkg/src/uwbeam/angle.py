"""
Principal-path angle estimation at the array from a periodic probe.

Each element's reception of a repeated m-sequence probe is averaged over
whole probe periods and circularly correlated with one period of the
pulse-shaped probe, giving an impulse-response estimate per element. A
delay-and-sum scan over angle then yields a delay-angle power map whose
maximum is the principal path.
"""

from dataclasses import dataclass
import csv

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_complex_1d, check_int, check_positive
from .beamformer import ArrayGeometry
from .dsp import ComplexBasebandSignal, PulseSpec, pulse_shape, raised_cosine_taps
from .exceptions import InvalidArgumentError

__all__ = [
    "ElementChannels",
    "DelayAngleMap",
    "probe_signal",
    "estimate_element_channels",
    "delay_angle_map",
    "principal_angle",
    "write_map_csv",
    "default_angle_grid",
    "PrincipalAngleEstimator",
]

MAP_FLOOR_DB = -300.0


def default_angle_grid(lo_deg=-60.0, hi_deg=60.0, step_deg=0.25):
    """Angle grid in radians, endpoints included."""
    n = int(round((hi_deg - lo_deg) / step_deg))
    return np.deg2rad(lo_deg + step_deg * np.arange(n + 1))


def probe_signal(probe, pulse, repeats=5):
    """Pulse-shaped transmission of ``repeats`` back-to-back probe periods."""
    probe = check_complex_1d(probe, "probe")
    check_int(repeats, "repeats", minimum=1)
    return pulse_shape(np.tile(probe, repeats), pulse)


@dataclass(frozen=True)
class ElementChannels:
    """Per-element impulse-response estimates over one probe period.

    ``h[m, k]`` is the estimate at delay ``k / sample_rate`` modulo
    ``period`` seconds.
    """

    h: np.ndarray
    sample_rate: float

    @property
    def M(self):
        return self.h.shape[0]

    @property
    def period(self):
        return self.h.shape[1] / self.sample_rate

    @property
    def delay_axis(self):
        return np.arange(self.h.shape[1]) / self.sample_rate


def _periodic_replica(probe, pulse):
    """One period of the pulse-shaped periodic probe."""
    Ns = pulse.Ns
    n = probe.size * Ns
    up = np.zeros(n, dtype=np.complex128)
    up[::Ns] = probe
    g = raised_cosine_taps(pulse)
    half = pulse.half_length
    # circular convolution with the centered pulse
    G = np.zeros(n)
    idx = (np.arange(-half, half + 1)) % n
    np.add.at(G, idx, g)
    return np.fft.ifft(np.fft.fft(up) * np.fft.fft(G))


def estimate_element_channels(rx, probe, pulse, periods=4, skip=1, t_probe=0.0, delay_spread=None):
    """Impulse-response estimate per element by circular correlation.

    Parameters
    ----------
    rx : list of ComplexBasebandSignal
        Element receptions of :func:`probe_signal` transmitted with symbol 0
        at ``t_probe``.
    probe : array_like
        One probe period of symbols.
    pulse : PulseSpec
    periods : int
        Number of probe periods averaged.
    skip : int
        Leading periods discarded so the averaged window only sees the
        steady-state periodic response.
    delay_spread : float, optional
        Expected channel delay spread; a warning is issued when it exceeds
        the probe period (the estimate then aliases).

    Returns
    -------
    ElementChannels
    """
    import warnings

    probe = check_complex_1d(probe, "probe")
    if isinstance(rx, ComplexBasebandSignal):
        rx = [rx]
    rx = list(rx)
    if not rx:
        raise InvalidArgumentError("need at least one element reception")
    check_int(periods, "periods", minimum=1)
    check_int(skip, "skip", minimum=0)
    fs = pulse.sample_rate
    K = probe.size * pulse.Ns
    period = probe.size * pulse.T
    if delay_spread is not None and delay_spread > period:
        warnings.warn(f"delay spread {delay_spread:.4g} s exceeds probe period {period:.4g} s; "
                      "channel estimate is aliased", RuntimeWarning, stacklevel=2)
    rep = _periodic_replica(probe, pulse)
    R = np.conj(np.fft.fft(rep))
    energy = float(np.vdot(rep, rep).real)
    H = np.zeros((len(rx), K), dtype=np.complex128)
    for m, s in enumerate(rx):
        if abs(s.sample_rate - fs) > 1e-9 * fs:
            raise InvalidArgumentError("reception and pulse sample rates differ")
        start = int(round((t_probe + skip * period - s.t0) * fs))
        stop = start + periods * K
        if start < 0 or stop > len(s):
            raise InvalidArgumentError(
                f"element {m} reception does not cover {periods} probe periods after skipping {skip}")
        seg = s.samples[start:stop].reshape(periods, K).mean(axis=0)
        H[m] = np.fft.ifft(np.fft.fft(seg) * R) / energy
    return ElementChannels(H, fs)


@dataclass(frozen=True)
class DelayAngleMap:
    """Delay-angle power in dB relative to the map maximum.

    ``power[i, j]`` belongs to ``delay_axis[i]`` (s) and ``angle_axis[j]``
    (rad).
    """

    power: np.ndarray
    delay_axis: np.ndarray
    angle_axis: np.ndarray

    @property
    def linear(self):
        return 10.0 ** (self.power / 10.0)


def delay_angle_map(channels, geom, fc, angle_grid=None, band=None, wideband=True,
                    chunk=64):
    """Delay-and-sum power over delay and angle.

    ``power(tau, theta) = |sum_m h_m(tau + m dtau) exp(j 2 pi fc m dtau)|^2 / M``
    with ``dtau = delta sin(theta) / c``. The per-element delay alignment
    ``h_m(tau + m dtau)`` is applied in the frequency domain; with
    ``wideband=False`` it is skipped, leaving the phase-only (narrowband)
    form, which suffers grating-lobe ties once ``delta`` exceeds half a
    wavelength.

    Parameters
    ----------
    channels : ElementChannels
    geom : ArrayGeometry
    fc : float
    angle_grid : array_like, optional
        Radians, strictly increasing; default -60 to 60 degrees in 0.25
        degree steps.
    band : float, optional
        Only baseband frequencies with ``|f| <= band`` are kept in the
        delay alignment (noise outside the signal band is discarded).
    """
    if not isinstance(channels, ElementChannels):
        raise InvalidArgumentError("channels must be ElementChannels")
    if channels.M != geom.M:
        raise InvalidArgumentError(f"{channels.M} channel estimates for a {geom.M}-element array")
    if geom.M < 2:
        raise InvalidArgumentError("a delay-angle map needs at least two elements")
    theta = default_angle_grid() if angle_grid is None else np.asarray(angle_grid, dtype=np.float64)
    if theta.ndim != 1 or theta.size == 0 or np.any(np.diff(theta) <= 0):
        raise InvalidArgumentError("angle grid must be nonempty and strictly increasing")
    M, K = channels.h.shape
    fs = channels.sample_rate
    f = np.fft.fftfreq(K, 1.0 / fs)
    Hf = np.fft.fft(channels.h, axis=1)
    keep = np.ones(K, dtype=bool) if band is None else np.abs(f) <= band
    Hk = Hf[:, keep]
    fk = f[keep]
    power = np.empty((K, theta.size))
    for j0 in range(0, theta.size, chunk):
        th = theta[j0: j0 + chunk]
        dtau = geom.delta * np.sin(th) / geom.c  # (A,)
        # Horner evaluation of sum_m H_m z^m with z the per-element phase step
        if wideband:
            z = np.exp(2j * np.pi * (fc + fk)[None, :] * dtau[:, None])
        else:
            z = np.broadcast_to(np.exp(2j * np.pi * fc * dtau)[:, None], (th.size, fk.size))
        S = np.broadcast_to(Hk[M - 1], z.shape).copy()
        for mm in range(M - 2, -1, -1):
            S *= z
            S += Hk[mm]
        full = np.zeros((th.size, K), dtype=np.complex128)
        full[:, keep] = S
        s = np.fft.ifft(full, axis=1)
        power[:, j0: j0 + th.size] = (np.abs(s) ** 2 / M).T
    pmax = power.max()
    if pmax > 0:
        with np.errstate(divide="ignore"):
            db = 10.0 * np.log10(power / pmax)
        db = np.maximum(db, MAP_FLOOR_DB)
    else:
        db = np.full(power.shape, MAP_FLOOR_DB)
    return DelayAngleMap(db, channels.delay_axis, theta.copy())


def principal_angle(dmap):
    """Angle of the map maximum.

    Ties are resolved toward the smaller ``|theta|``; remaining ties (for
    example ``+theta`` against ``-theta``) take the lower angle index.
    """
    p = np.asarray(dmap.power)
    if p.size == 0:
        raise InvalidArgumentError("empty map")
    best = p.max()
    _, cols = np.nonzero(p == best)
    cols = np.unique(cols)
    mag = np.abs(dmap.angle_axis[cols])
    pick = cols[np.lexsort((cols, mag))[0]]
    return float(dmap.angle_axis[pick])


def write_map_csv(path, dmap):
    """Columns delay_s, angle_deg, power_db."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delay_s", "angle_deg", "power_db"])
        deg = np.rad2deg(dmap.angle_axis)
        for i, tau in enumerate(dmap.delay_axis):
            for j, a in enumerate(deg):
                w.writerow([repr(float(tau)), repr(float(a)), repr(float(dmap.power[i, j]))])


class PrincipalAngleEstimator(BaseEstimator):
    """Estimator form of the probe -> channels -> map -> angle chain.

    ``fit(X, y)`` takes the element receptions ``X`` and one probe period
    ``y``; the estimate is in ``angle_`` (radians) and ``predict`` returns it.
    """

    def __init__(self, M=24, delta=0.05, c=1500.0, fc=12500.0, fs=1e7 / 256, Ns=6, alpha_rc=0.25,
                 span_symbols=16, angle_min_deg=-60.0, angle_max_deg=60.0, angle_step_deg=0.25,
                 periods=4, skip=1, wideband=True, t_probe=0.0):
        self.M = M
        self.delta = delta
        self.c = c
        self.fc = fc
        self.fs = fs
        self.Ns = Ns
        self.alpha_rc = alpha_rc
        self.span_symbols = span_symbols
        self.angle_min_deg = angle_min_deg
        self.angle_max_deg = angle_max_deg
        self.angle_step_deg = angle_step_deg
        self.periods = periods
        self.skip = skip
        self.wideband = wideband
        self.t_probe = t_probe

    @property
    def pulse(self):
        check_positive(self.fs, "fs")
        return PulseSpec(self.Ns / self.fs, self.Ns, self.alpha_rc, self.span_symbols)

    def fit(self, X, y):
        pulse = self.pulse
        geom = ArrayGeometry(self.M, self.delta, self.c)
        self.channels_ = estimate_element_channels(X, y, pulse, self.periods, self.skip, self.t_probe)
        grid = default_angle_grid(self.angle_min_deg, self.angle_max_deg, self.angle_step_deg)
        self.map_ = delay_angle_map(self.channels_, geom, self.fc, grid, band=pulse.bandwidth,
                                    wideband=self.wideband)
        self.angle_ = principal_angle(self.map_)
        return self

    def predict(self, X=None, y=None):
        if X is not None:
            self.fit(X, y)
        if not hasattr(self, "angle_"):
            raise InvalidArgumentError("call fit before predict")
        return self.angle_
