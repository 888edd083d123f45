"""
User-side receive chain: front-end filtering, preamble synchronization with a
Doppler replica bank, coarse time-scale correction and the fractionally
spaced decision-feedback equalizer with an embedded second-order PLL.

The equalizer works on two samples per symbol taken by linear interpolation
at ``t = nT + iT/2 - phi/(2 pi fc)`` so the PLL phase also steers the
sampling instants. Coefficients are adapted by RLS or LMS on the joint
vector ``u = [y exp(-j phi), d_tilde]`` with ``d_hat = c^H u``.
"""

from dataclasses import dataclass, field
import csv
import math

import numba
import numpy as np
from scipy import signal as sps
from sklearn.base import BaseEstimator

from ._validation import check_complex_1d, check_in_range, check_int, check_positive
from .dsp import ComplexBasebandSignal, interpolate_at, linear_interpolate, pulse_shape
from .exceptions import (
    DivergenceError,
    InvalidArgumentError,
    OutOfBoundsError,
    SyncFailureError,
    TruncatedFrameError,
)

__all__ = [
    "BPSK",
    "QPSK",
    "CONSTELLATIONS",
    "EqualizerConfig",
    "EqualizerState",
    "SyncResult",
    "DFEResult",
    "decision",
    "symbols_to_bits",
    "adapt",
    "pll_update",
    "front_end_filter",
    "synchronize",
    "coarse_resample",
    "dfe_run",
    "dfe_run_reference",
    "write_trace_csv",
    "preamble_gain",
    "doppler_grid",
    "DecisionFeedbackEqualizer",
]

BPSK = np.array([1.0 + 0j, -1.0 + 0j])
# Gray order: bits (b_re, b_im) = (re < 0, im < 0)
QPSK = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / math.sqrt(2.0)
CONSTELLATIONS = {"BPSK": BPSK, "QPSK": QPSK}

DIVERGENCE_LEVEL = 10.0
DIVERGENCE_RUN = 50


def _constellation(name):
    try:
        return CONSTELLATIONS[str(name).upper()]
    except KeyError:
        raise InvalidArgumentError(f"unknown constellation {name!r}; use BPSK or QPSK") from None


@dataclass(frozen=True)
class EqualizerConfig:
    """DFE dimensions, adaptation and PLL constants.

    Parameters
    ----------
    Nf : int
        Feedforward length in T/2-spaced taps.
    Nb : int
        Feedback length in symbols.
    N1 : int, optional
        Anticausal offset: the newest sample is taken ``N1 T/2`` after the
        current symbol. Defaults to ``Nf // 2``.
    algorithm : {"RLS", "LMS"}
    lam : float
        RLS forgetting factor.
    mu : float
        LMS step size.
    Kf1, Kf2 : float
        PLL proportional and integral gains; ``Kf2`` defaults to ``Kf1 / 10``.
    constellation : {"BPSK", "QPSK"}
    Nt : int, optional
        Training length, default ``4 (Nf + Nb)``.
    rls_init : float
        Initial inverse correlation matrix is ``rls_init * I``.
    """

    Nf: int = 20
    Nb: int = 20
    N1: int = None
    algorithm: str = "RLS"
    lam: float = 0.995
    mu: float = 0.01
    Kf1: float = 1e-4
    Kf2: float = None
    constellation: str = "BPSK"
    Nt: int = None
    rls_init: float = 100.0

    def __post_init__(self):
        check_int(self.Nf, "Nf", minimum=2)
        check_int(self.Nb, "Nb", minimum=0)
        if self.N1 is None:
            object.__setattr__(self, "N1", self.Nf // 2)
        check_int(self.N1, "N1", minimum=1)
        if self.N1 > self.Nf - 1:
            raise InvalidArgumentError(f"N1 must be <= Nf - 1, got {self.N1}")
        alg = str(self.algorithm).upper()
        if alg not in ("RLS", "LMS"):
            raise InvalidArgumentError(f"algorithm must be RLS or LMS, got {self.algorithm!r}")
        object.__setattr__(self, "algorithm", alg)
        check_in_range(self.lam, "lam", 1e-6, 1.0)
        if not self.lam > 0:
            raise InvalidArgumentError("lam must be > 0")
        check_positive(self.mu, "mu")
        if self.Kf1 < 0:
            raise InvalidArgumentError("Kf1 must be >= 0")
        if self.Kf2 is None:
            object.__setattr__(self, "Kf2", self.Kf1 / 10.0)
        if self.Kf2 < 0:
            raise InvalidArgumentError("Kf2 must be >= 0")
        object.__setattr__(self, "constellation", str(self.constellation).upper())
        _constellation(self.constellation)
        if self.Nt is None:
            object.__setattr__(self, "Nt", 4 * (self.Nf + self.Nb))
        check_int(self.Nt, "Nt", minimum=0)
        check_positive(self.rls_init, "rls_init")

    @property
    def n_coef(self):
        return self.Nf + self.Nb

    @property
    def points(self):
        return _constellation(self.constellation)


@dataclass
class EqualizerState:
    """Mutable equalizer state for one frame.

    ``c`` stacks the feedforward coefficients and the negated feedback
    coefficients, ``c = [a, -b]``.
    """

    c: np.ndarray
    y: np.ndarray
    d_hist: np.ndarray
    phi_hat: float = 0.0
    phi_integrator: float = 0.0
    P: np.ndarray = None
    reinit_count: int = 0

    @classmethod
    def initial(cls, config):
        n = config.n_coef
        c = np.zeros(n, dtype=np.complex128)
        c[config.N1] = 1.0
        P = config.rls_init * np.eye(n, dtype=np.complex128) if config.algorithm == "RLS" else None
        return cls(c, np.zeros(config.Nf, dtype=np.complex128),
                   np.zeros(config.Nb, dtype=np.complex128), 0.0, 0.0, P)

    @property
    def a(self):
        return self.c[: self.y.size]

    @property
    def b(self):
        return -self.c[self.y.size:]


def decision(d_hat, constellation="BPSK"):
    """Nearest constellation point; ties go to the earlier point in the list.

    For BPSK a zero input therefore maps to +1. Accepts scalars or arrays.
    """
    pts = _constellation(constellation) if isinstance(constellation, str) else np.asarray(constellation)
    z = np.asarray(d_hat, dtype=np.complex128)
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("d_hat must be finite")
    dist = np.abs(z[..., None] - pts) ** 2
    out = pts[np.argmin(dist, axis=-1)]
    return out[()] if out.ndim == 0 else out


def symbols_to_bits(symbols, constellation="BPSK"):
    """Gray bit labels: BPSK ``re < 0``; QPSK ``(re < 0, im < 0)``."""
    s = np.asarray(symbols, dtype=np.complex128).ravel()
    if str(constellation).upper() == "BPSK":
        return (s.real < 0).astype(np.uint8)
    return np.column_stack([s.real < 0, s.imag < 0]).astype(np.uint8).ravel()


def adapt(state, u, e, config):
    """One coefficient update on regressor ``u`` with a priori error ``e``.

    LMS: ``c += mu u conj(e)``. RLS: ``k = P u / (lam + u^H P u)``,
    ``c += k conj(e)``, ``P = (P - k u^H P) / lam``. A non positive
    definite ``P`` is reset to ``rls_init * I`` and counted in
    ``state.reinit_count``. The state is modified in place and returned.
    """
    u = np.asarray(u, dtype=np.complex128)
    if u.shape != state.c.shape:
        raise InvalidArgumentError(f"regressor length {u.size} != coefficient length {state.c.size}")
    if config.algorithm == "LMS":
        state.c = state.c + config.mu * u * np.conj(e)
        return state
    P = state.P
    Pu = P @ u
    denom = config.lam + np.real(np.vdot(u, Pu))
    k = Pu / denom
    state.c = state.c + k * np.conj(e)
    P = (P - np.outer(k, np.conj(u) @ P)) / config.lam
    P = 0.5 * (P + P.conj().T)
    d = np.real(np.diag(P))
    if not (np.all(np.isfinite(P)) and np.all(d > 0)):
        P = config.rls_init * np.eye(u.size, dtype=np.complex128)
        state.reinit_count += 1
    state.P = P
    return state


def pll_update(state, d_hat, d_ref, config):
    """Second-order PLL step driven by ``Im{d_hat conj(d_ref)} / (|d_hat||d_ref|)``.

    For small phase errors the loop acting alone is a second-order system
    with natural frequency ``sqrt(Kf2)`` rad/symbol and damping
    ``Kf1 / (2 sqrt(Kf2))``; a phase step decays roughly as
    ``exp(-Kf1 n / 2)``, so settling to a fraction ``r`` of the step takes
    about ``2 ln(1/r) / Kf1`` symbols. Inside the equalizer the adaptive
    coefficients absorb fast phase changes and the loop follows the slow
    Doppler-induced drift.
    """
    den = abs(d_hat) * abs(d_ref)
    err = (d_hat * np.conj(d_ref)).imag / den if den > 0 else 0.0
    state.phi_integrator += err
    state.phi_hat += config.Kf1 * err + config.Kf2 * state.phi_integrator
    return state


# --- front end and synchronization -------------------------------------------


def front_end_filter(v, pulse, transition=0.6, atten_db=100.0):
    """Zero-phase low-pass keeping the occupied band ``(1 + alpha) / (2T)``.

    The passband edge is the signal band edge and the stopband starts
    ``transition / T`` above it, so in-band samples pass unchanged up to the
    filter ripple (about ``10^(-atten_db / 20)``).
    """
    fs = v.sample_rate
    edge = pulse.bandwidth
    stop = min(edge + transition / pulse.T, 0.5 * fs * 0.999)
    width = (stop - edge) / (0.5 * fs)
    numtaps, beta = sps.kaiserord(atten_db, width)
    numtaps |= 1
    h = sps.firwin(numtaps, 0.5 * (edge + stop), window=("kaiser", beta), fs=fs)
    y = sps.oaconvolve(v.samples, h)
    half = numtaps // 2
    return ComplexBasebandSignal(y[half: half + len(v)], fs, v.t0)


def doppler_grid(a_max=1.5e-3, step=2.5e-5):
    """Symmetric Doppler search grid ``-a_max .. a_max``."""
    n = int(round(a_max / step))
    return np.arange(-n, n + 1) * step


@dataclass(frozen=True)
class SyncResult:
    """Preamble detection result.

    ``frame_start`` is the sample of ``v`` where the preamble replica (which
    begins ``span`` symbols before preamble symbol 0) aligns; ``t_first`` is
    the refined time of preamble symbol 0 on ``v``'s time axis. ``gain`` is
    the complex amplitude of the matched replica; ``peak_value`` the raw
    correlation at the peak.
    """

    frame_start: int
    coarse_doppler: float
    peak_quality: float
    t_first: float
    gain: complex
    peak_value: complex


def _replica(preamble, pulse, a, fc):
    x = pulse_shape(preamble, pulse)
    n = int(math.ceil(len(x) / (1.0 - a)))
    i = np.arange(n)
    if a == 0.0:
        return x.samples.copy()
    rep = interpolate_at(x.samples, i * (1.0 - a))
    if fc is not None:
        rep = rep * np.exp(-2j * np.pi * fc * a * i / pulse.sample_rate)
    return rep


def _xcorr(v, rep):
    # c[k] = sum_i v[k + i] conj(rep[i]), k = 0 .. len(v) - len(rep)
    return sps.fftconvolve(v, np.conj(rep[::-1]), mode="valid")


def _first_peak(c, ratio, guard):
    mag = np.abs(c)
    k = int(np.argmax(mag >= ratio * mag.max()))
    hi = min(mag.size, k + guard + 1)
    return k + int(np.argmax(mag[k:hi]))


def _psr_db(c, k, guard):
    p = np.abs(c) ** 2
    mask = np.ones(p.size, dtype=bool)
    mask[max(0, k - guard): k + guard + 1] = False
    if not mask.any():
        return math.inf
    side = p[mask].mean()
    return math.inf if side == 0 else 10.0 * math.log10(p[k] / side)


def _parabola(ym, y0, yp):
    den = ym - 2.0 * y0 + yp
    return 0.0 if den == 0 else float(np.clip(0.5 * (ym - yp) / den, -0.5, 0.5))


def synchronize(v, preamble, pulse, fc=None, doppler=None, threshold_db=15.0, max_lag=None,
                refine_window=None, first_peak_ratio=0.5):
    """Locate the pulse-shaped preamble in ``v`` and estimate its Doppler scale.

    A plain correlation locates the frame when ``doppler`` is None or only
    contains 0. Otherwise each candidate ``a`` builds a time-compressed,
    carrier-rotated replica (``fc`` needed for the rotation) and the one
    with the strongest peak wins; peak position and Doppler are refined by
    parabolic fits.

    Parameters
    ----------
    v : ComplexBasebandSignal
    preamble : array_like
        Preamble symbols.
    pulse : PulseSpec
    fc : float, optional
        Carrier frequency used to rotate the Doppler replicas.
    doppler : array_like or float, optional
        Candidate compression factors; a scalar is an oracle value.
    threshold_db : float
        Minimum peak-to-sidelobe ratio.
    max_lag : int, optional
        Only lags ``0 .. max_lag`` are searched.
    first_peak_ratio : float
        The earliest correlation peak reaching this fraction of the largest
        magnitude is taken, so a frame built from repeated preamble periods
        locks onto its first period.
    refine_window : int, optional
        Half-width in samples of the lag window examined by the Doppler
        bank around the zero-Doppler peak. Default: the drift the largest
        candidate accumulates over the preamble plus 4 symbols.

    Raises
    ------
    SyncFailureError
        Peak-to-sidelobe ratio below ``threshold_db`` or signal too short.
    """
    pre = check_complex_1d(preamble, "preamble")
    if abs(v.sample_rate - pulse.sample_rate) > 1e-9 * v.sample_rate:
        raise InvalidArgumentError("signal and pulse sample rates differ")
    grid = np.atleast_1d(np.asarray([0.0] if doppler is None else doppler, dtype=np.float64))
    if np.any(np.abs(grid) >= 0.01):
        raise InvalidArgumentError("Doppler candidates must satisfy |a| < 0.01")
    x = v.samples
    span = pulse.span_symbols
    Ns = pulse.Ns
    guard = 2 * Ns

    rep0 = _replica(pre, pulse, 0.0, fc)
    seg = x if max_lag is None else x[: max_lag + int(math.ceil(rep0.size * 1.02)) + 1]
    if seg.size < rep0.size:
        raise SyncFailureError("received signal shorter than the preamble")
    best = None
    if grid.size == 1:
        a = float(grid[0])
        rep = rep0 if a == 0.0 else _replica(pre, pulse, a, fc)
        if seg.size < rep.size:
            raise SyncFailureError("received signal shorter than the preamble")
        c = _xcorr(seg, rep)
        k = _first_peak(c, first_peak_ratio, guard)
        best = (a, k, c, rep, None)
        psr = _psr_db(c, k, guard)
    else:
        # coarse location from a short head of the preamble (Doppler tolerant)
        n_head = min(pre.size, 127)
        head = _replica(pre[:n_head], pulse, 0.0, fc)
        ch = _xcorr(seg, head)
        k0 = int(np.argmax(np.abs(ch)))
        if refine_window is None:
            refine_window = int(math.ceil(np.max(np.abs(grid)) * rep0.size)) + 4 * Ns
        lo = max(0, k0 - refine_window)
        grid = np.sort(grid)

        def bank(idx, symbols):
            out = {}
            for i in idx:
                rep = _replica(symbols, pulse, float(grid[i]), fc)
                hi = min(seg.size, k0 + refine_window + rep.size)
                if hi - lo < rep.size:
                    continue
                c = _xcorr(seg[lo:hi], rep)
                kk = int(np.argmax(np.abs(c)))
                out[i] = (abs(c[kk]), rep)
            return out

        # every 4th candidate on a short section, then the neighbours of the
        # winner on the whole preamble
        stride = 4
        coarse_idx = sorted(set(range(0, grid.size, stride)) | {grid.size - 1})
        coarse = bank(coarse_idx, pre[: min(pre.size, 511)])
        if not coarse:
            raise SyncFailureError("received signal shorter than the preamble")
        ic = max(coarse, key=lambda i: coarse[i][0])
        fine_idx = range(max(0, ic - stride), min(grid.size, ic + stride + 1))
        fine = bank(fine_idx, pre)
        if not fine:
            raise SyncFailureError("received signal shorter than the preamble")
        ib = max(fine, key=lambda i: fine[i][0])
        a = float(grid[ib])
        rep = fine[ib][1]
        if ib - 1 in fine and ib + 1 in fine:
            step = grid[ib + 1] - grid[ib]
            a = a + step * _parabola(fine[ib - 1][0] ** 2, fine[ib][0] ** 2, fine[ib + 1][0] ** 2)
        # quality from the full-range correlation with the winning replica
        c = _xcorr(seg, rep)
        k = _first_peak(c, first_peak_ratio, guard)
        psr = _psr_db(c, k, guard)
        best = (a, k, c, rep, None)
    a, k, c, rep, _ = best
    if not psr >= threshold_db:
        raise SyncFailureError(f"preamble peak-to-sidelobe ratio {psr:.1f} dB below {threshold_db} dB")
    p = np.abs(c) ** 2
    frac = _parabola(p[k - 1], p[k], p[k + 1]) if 0 < k < p.size - 1 else 0.0
    energy = float(np.vdot(rep, rep).real)
    Ts = 1.0 / v.sample_rate
    t_first = v.t0 + (k + frac) * Ts + span * pulse.T / (1.0 - a)
    return SyncResult(int(k), float(a), float(psr), float(t_first), complex(c[k] / energy), complex(c[k]))


def coarse_resample(v, a_hat, fc=None):
    """Undo a Doppler time compression ``a_hat``.

    Output sample ``k`` is ``v(t0 + k Ts / (1 - a_hat))`` (band-limited
    interpolation) and the output keeps ``t0``, so a time ``t`` on the input
    axis maps to ``t0 + (t - t0)(1 - a_hat)``. With ``fc`` the carrier
    offset of a baseband signal is removed as well, multiplying by
    ``exp(j 2 pi fc a_hat k Ts / (1 - a_hat))``.
    """
    if abs(a_hat) >= 0.01:
        raise InvalidArgumentError(f"|a_hat| must be < 0.01, got {a_hat}")
    if a_hat == 0.0:
        return v
    n = int(round(len(v) * (1.0 - a_hat)))
    k = np.arange(n)
    pos = k / (1.0 - a_hat)
    y = interpolate_at(v.samples, pos)
    if fc is not None:
        y = y * np.exp(2j * np.pi * fc * a_hat * k / (v.sample_rate * (1.0 - a_hat)))
    return ComplexBasebandSignal(y, v.sample_rate, v.t0)


# --- equalizer -----------------------------------------------------------------


@dataclass
class DFEResult:
    """Per-symbol traces of one equalized frame.

    ``status`` is 0 on success, ``"truncated"`` or ``"diverged"`` when
    ``raise_on_error`` was False and the frame ended early at
    ``stop_index``.
    """

    d_hat: np.ndarray
    d_tilde: np.ndarray
    e: np.ndarray
    phi: np.ndarray
    config: EqualizerConfig
    status: str = "ok"
    stop_index: int = -1
    reinit_count: int = 0
    state: EqualizerState = None
    y_trace: np.ndarray = field(default=None, repr=False)

    @property
    def converged(self):
        return self.status == "ok"

    def to_metrics(self, symbols, mse_floor_db=-60.0):
        from .metrics import frame_metrics

        return frame_metrics(symbols, self, mse_floor_db)


_ALG_RLS = 1
_ALG_LMS = 0
_ST_OK = 0
_ST_TRUNC = 1
_ST_DIVERGED = 2
_ST_NONFINITE = 3


@numba.njit(cache=True)
def _lerp(x, pos):
    n = x.size
    if pos < -1e-9 or pos > n - 1 + 1e-9:
        return 0.0j, False
    if pos < 0.0:
        pos = 0.0
    i = int(math.floor(pos))
    if i >= n - 1:
        i = n - 2
    al = pos - i
    return (1.0 - al) * x[i] + al * x[i + 1], True


@numba.njit(cache=True)
def _dfe_kernel(x, t0, fs, t_first, T, fc, Nf, Nb, N1, alg, lam, mu, kappa, Kf1, Kf2, points,
                training, Nt, n_sym, d_hat, d_tilde, err, phi_out, c, P):
    n_coef = Nf + Nb
    y = np.zeros(Nf, dtype=np.complex128)
    dh = np.zeros(Nb, dtype=np.complex128)
    u = np.zeros(n_coef, dtype=np.complex128)
    Pu = np.zeros(n_coef, dtype=np.complex128)
    phi = 0.0
    integ = 0.0
    run = 0
    reinit = 0
    # register content as if symbol -1 had been processed
    for j in range(Nf):
        s, ok = _lerp(x, (t_first - T + (N1 - j) * T / 2.0 - t0) * fs)
        y[j] = s if ok else 0.0j
    for n in range(n_sym):
        # two new samples, newest first
        for j in range(Nf - 1, 1, -1):
            y[j] = y[j - 2]
        base = t_first + n * T - phi / (2.0 * math.pi * fc)
        for q in range(2):
            i = N1 - q
            s, ok = _lerp(x, (base + i * T / 2.0 - t0) * fs)
            if not ok:
                return _ST_TRUNC, n, reinit
            y[q] = s
        rot = complex(math.cos(phi), -math.sin(phi))
        for j in range(Nf):
            u[j] = y[j] * rot
        for j in range(Nb):
            u[Nf + j] = dh[j]
        acc = 0.0j
        for j in range(n_coef):
            acc += c[j].conjugate() * u[j]
        dhat = acc
        if not (math.isfinite(dhat.real) and math.isfinite(dhat.imag)):
            return _ST_NONFINITE, n, reinit
        best = 0
        bd = abs(dhat - points[0]) ** 2
        for k in range(1, points.size):
            dd = abs(dhat - points[k]) ** 2
            if dd < bd:
                bd = dd
                best = k
        dt = points[best]
        ref = training[n] if n < Nt else dt
        e = ref - dhat
        d_hat[n] = dhat
        d_tilde[n] = dt
        err[n] = e
        if abs(e) > 10.0:
            run += 1
            if run >= 50:
                return _ST_DIVERGED, n, reinit
        else:
            run = 0
        # coefficient update
        ec = e.conjugate()
        if alg == 0:
            for j in range(n_coef):
                c[j] += mu * u[j] * ec
        else:
            for r in range(n_coef):
                a = 0.0j
                for s2 in range(n_coef):
                    a += P[r, s2] * u[s2]
                Pu[r] = a
            den = lam
            for r in range(n_coef):
                den += (u[r].conjugate() * Pu[r]).real
            for r in range(n_coef):
                c[r] += Pu[r] / den * ec
            # P is kept Hermitian, so u^H P = (P u)^H and only the upper
            # triangle needs computing
            inv_lam = 1.0 / lam
            inv_den = 1.0 / den
            bad = False
            for r in range(n_coef):
                g = Pu[r] * inv_den
                for s2 in range(r + 1, n_coef):
                    h = (P[r, s2] - g * Pu[s2].conjugate()) * inv_lam
                    P[r, s2] = h
                    P[s2, r] = h.conjugate()
                d = (P[r, r].real - (g * Pu[r].conjugate()).real) * inv_lam
                P[r, r] = d
                if not (d > 0.0 and math.isfinite(d)):
                    bad = True
            if bad:
                for r in range(n_coef):
                    for s2 in range(n_coef):
                        P[r, s2] = 0.0j
                    P[r, r] = kappa
                reinit += 1
        # PLL
        den = abs(dhat) * abs(ref)
        pe = 0.0
        if den > 0.0:
            pe = (dhat * ref.conjugate()).imag / den
        integ += pe
        phi += Kf1 * pe + Kf2 * integ
        phi_out[n] = phi
        for j in range(Nb - 1, 0, -1):
            dh[j] = dh[j - 1]
        if Nb > 0:
            dh[0] = ref if n < Nt else dt
    for j in range(n_coef):
        if not (math.isfinite(c[j].real) and math.isfinite(c[j].imag)):
            return _ST_NONFINITE, n_sym - 1, reinit
    return _ST_OK, n_sym, reinit


def _check_run_args(v, config, training, n_symbols):
    if not isinstance(config, EqualizerConfig):
        raise InvalidArgumentError("config must be an EqualizerConfig")
    tr = check_complex_1d(training, "training", allow_empty=True)
    n_symbols = check_int(n_symbols, "n_symbols", minimum=1)
    if tr.size < min(config.Nt, n_symbols):
        raise InvalidArgumentError(f"training length {tr.size} shorter than Nt = {config.Nt}")
    if len(v) < 2:
        raise TruncatedFrameError("received signal has fewer than two samples")
    return tr, n_symbols


def _finish(status, stop, reinit, d_hat, d_tilde, err, phi, config, raise_on_error, state=None,
            y_trace=None):
    names = {_ST_OK: "ok", _ST_TRUNC: "truncated", _ST_DIVERGED: "diverged", _ST_NONFINITE: "diverged"}
    if status != _ST_OK and raise_on_error:
        if status == _ST_TRUNC:
            raise TruncatedFrameError(f"received signal ends before symbol {stop}")
        if status == _ST_DIVERGED:
            raise DivergenceError(
                f"|e| above {DIVERGENCE_LEVEL} for {DIVERGENCE_RUN} consecutive symbols at symbol {stop}", stop)
        raise DivergenceError(f"non-finite equalizer state at symbol {stop}", stop)
    n = stop if status != _ST_OK else d_hat.size
    return DFEResult(d_hat[:n], d_tilde[:n], err[:n], phi[:n], config, names[status],
                     -1 if status == _ST_OK else stop, reinit, state,
                     None if y_trace is None else y_trace[:n])


def _prefill(v, config, t_first, T):
    """Feedforward register as if symbol -1 had been processed (zero outside ``v``)."""
    y = np.zeros(config.Nf, dtype=np.complex128)
    for j in range(config.Nf):
        try:
            y[j] = linear_interpolate(v, t_first - T + (config.N1 - j) * T / 2)
        except OutOfBoundsError:
            pass
    return y


def dfe_run(v, config, training, n_symbols, t_first, T, fc, raise_on_error=True):
    """Equalize ``n_symbols`` symbols of a synchronized, resampled signal.

    Parameters
    ----------
    v : ComplexBasebandSignal
        Received signal on the simulator grid.
    config : EqualizerConfig
    training : array_like
        Known symbols; the first ``config.Nt`` drive the training mode.
    n_symbols : int
        Number of symbols to process.
    t_first : float
        Time of symbol 0 on ``v``'s axis.
    T : float
        Symbol period.
    fc : float
        Carrier frequency; converts the PLL phase to a timing correction.
    raise_on_error : bool
        When False, truncation and divergence are reported in the result.

    Returns
    -------
    DFEResult
    """
    tr, n_symbols = _check_run_args(v, config, training, n_symbols)
    check_positive(T, "T")
    check_positive(fc, "fc")
    Nt = min(config.Nt, n_symbols)
    train = np.zeros(n_symbols, dtype=np.complex128)
    train[: min(tr.size, n_symbols)] = tr[:n_symbols]
    d_hat = np.zeros(n_symbols, dtype=np.complex128)
    d_tilde = np.zeros(n_symbols, dtype=np.complex128)
    err = np.zeros(n_symbols, dtype=np.complex128)
    phi = np.zeros(n_symbols)
    st = EqualizerState.initial(config)
    P = st.P if st.P is not None else np.zeros((1, 1), dtype=np.complex128)
    alg = _ALG_RLS if config.algorithm == "RLS" else _ALG_LMS
    status, stop, reinit = _dfe_kernel(
        np.ascontiguousarray(v.samples), float(v.t0), float(v.sample_rate), float(t_first), float(T),
        float(fc), config.Nf, config.Nb, config.N1, alg, float(config.lam), float(config.mu),
        float(config.rls_init), float(config.Kf1), float(config.Kf2), config.points, train, Nt,
        n_symbols, d_hat, d_tilde, err, phi, st.c, P)
    st.reinit_count = reinit
    return _finish(status, stop, reinit, d_hat, d_tilde, err, phi, config, raise_on_error, st)


def dfe_run_reference(v, config, training, n_symbols, t_first, T, fc, raise_on_error=True,
                      record_inputs=False):
    """Plain-Python equalizer built from :func:`adapt`, :func:`pll_update` and
    :func:`decision`; slow but instrumented.

    With ``record_inputs`` the feedforward vector ``y`` of every symbol is
    kept in ``DFEResult.y_trace``.
    """
    tr, n_symbols = _check_run_args(v, config, training, n_symbols)
    Nt = min(config.Nt, n_symbols)
    pts = config.points
    st = EqualizerState.initial(config)
    st.y = _prefill(v, config, t_first, T)
    d_hat = np.zeros(n_symbols, dtype=np.complex128)
    d_tilde = np.zeros(n_symbols, dtype=np.complex128)
    err = np.zeros(n_symbols, dtype=np.complex128)
    phi = np.zeros(n_symbols)
    ytr = np.zeros((n_symbols, config.Nf), dtype=np.complex128) if record_inputs else None
    run = 0
    Nf = config.Nf
    for n in range(n_symbols):
        base = t_first + n * T - st.phi_hat / (2 * math.pi * fc)
        times = base + np.array([config.N1, config.N1 - 1]) * T / 2
        try:
            new = linear_interpolate(v, times)
        except OutOfBoundsError:
            return _finish(_ST_TRUNC, n, st.reinit_count, d_hat, d_tilde, err, phi, config,
                           raise_on_error, st, ytr)
        st.y = np.concatenate([new, st.y[: Nf - 2]])
        if record_inputs:
            ytr[n] = st.y
        u = np.concatenate([st.y * np.exp(-1j * st.phi_hat), st.d_hist])
        dh = np.vdot(st.c, u)
        if not np.isfinite(dh):
            return _finish(_ST_NONFINITE, n, st.reinit_count, d_hat, d_tilde, err, phi, config,
                           raise_on_error, st, ytr)
        dt = decision(dh, pts)
        ref = tr[n] if n < Nt else dt
        e = ref - dh
        d_hat[n], d_tilde[n], err[n] = dh, dt, e
        run = run + 1 if abs(e) > DIVERGENCE_LEVEL else 0
        if run >= DIVERGENCE_RUN:
            return _finish(_ST_DIVERGED, n, st.reinit_count, d_hat, d_tilde, err, phi, config,
                           raise_on_error, st, ytr)
        adapt(st, u, e, config)
        pll_update(st, dh, ref, config)
        phi[n] = st.phi_hat
        if config.Nb:
            st.d_hist = np.concatenate([[ref], st.d_hist[:-1]])
    return _finish(_ST_OK, n_symbols, st.reinit_count, d_hat, d_tilde, err, phi, config,
                   raise_on_error, st, ytr)


def write_trace_csv(path, result):
    """Per-symbol trace: n, d_hat, d_tilde, |e| and the PLL phase."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "d_hat_re", "d_hat_im", "d_tilde_re", "d_tilde_im", "e_abs", "phi_hat"])
        for n in range(result.d_hat.size):
            w.writerow([n, repr(float(result.d_hat[n].real)), repr(float(result.d_hat[n].imag)),
                        repr(float(result.d_tilde[n].real)), repr(float(result.d_tilde[n].imag)),
                        repr(float(abs(result.e[n]))), repr(float(result.phi[n]))])


class DecisionFeedbackEqualizer(BaseEstimator):
    """Estimator wrapper around :func:`dfe_run`.

    ``fit(X, y)`` equalizes the frame in ``X`` (a synchronized
    :class:`ComplexBasebandSignal`) using ``y`` as training symbols and
    stores the traces in ``result_``; ``predict`` returns the decisions.
    """

    def __init__(self, Nf=20, Nb=20, N1=None, algorithm="RLS", lam=0.995, mu=0.01, Kf1=1e-4,
                 Kf2=None, constellation="BPSK", Nt=None, rls_init=100.0, fc=12500.0, T=6 / (1e7 / 256)):
        self.Nf = Nf
        self.Nb = Nb
        self.N1 = N1
        self.algorithm = algorithm
        self.lam = lam
        self.mu = mu
        self.Kf1 = Kf1
        self.Kf2 = Kf2
        self.constellation = constellation
        self.Nt = Nt
        self.rls_init = rls_init
        self.fc = fc
        self.T = T

    def config(self):
        return EqualizerConfig(self.Nf, self.Nb, self.N1, self.algorithm, self.lam, self.mu, self.Kf1,
                               self.Kf2, self.constellation, self.Nt, self.rls_init)

    def fit(self, X, y, t_first=0.0, n_symbols=None):
        y = check_complex_1d(y, "y")
        n = y.size if n_symbols is None else n_symbols
        self.result_ = dfe_run(X, self.config(), y, n, t_first, self.T, self.fc)
        return self

    def predict(self, X=None, y=None, t_first=0.0, n_symbols=None):
        if X is not None:
            self.fit(X, y, t_first, n_symbols)
        if not hasattr(self, "result_"):
            raise InvalidArgumentError("call fit before predict")
        return self.result_.d_tilde

    def fit_predict(self, X, y, t_first=0.0, n_symbols=None):
        return self.fit(X, y, t_first, n_symbols).result_.d_tilde


def preamble_gain(v, preamble, pulse, t_first):
    """Least-squares complex amplitude of the pulse-shaped preamble at ``t_first``.

    ``v`` is evaluated (band-limited) on the replica grid whose symbol 0
    falls on ``t_first``.
    """
    rep = pulse_shape(check_complex_1d(preamble, "preamble"), pulse)
    pos = (t_first + rep.t0 - v.t0) * v.sample_rate + np.arange(len(rep))
    seg = interpolate_at(v.samples, pos)
    return complex(np.vdot(rep.samples, seg) / np.vdot(rep.samples, rep.samples).real)
