"""
Signal primitives: baseband containers, pulses, m-sequences, transforms,
interpolation and noise.

Every other module builds on these. Functions are pure; randomness only
enters through an explicit seed or :class:`numpy.random.Generator`.
"""

from dataclasses import dataclass
import math

import numba
import numpy as np
from scipy import signal as sps

from ._validation import (
    check_complex_1d,
    check_in_range,
    check_int,
    check_positive,
)
from .exceptions import InvalidArgumentError, InvalidPolynomialError, OutOfBoundsError

__all__ = [
    "ComplexBasebandSignal",
    "PulseSpec",
    "MSequenceSpec",
    "DEFAULT_MSEQ_TAPS",
    "generate_mseq",
    "raised_cosine",
    "raised_cosine_taps",
    "pulse_shape",
    "dft",
    "idft",
    "linear_interpolate",
    "add_awgn",
    "windowed_sinc",
    "fractional_delay_taps",
    "delay_samples",
    "interpolate_at",
    "INTERP_TAPS",
    "INTERP_BETA",
]


@dataclass(frozen=True)
class ComplexBasebandSignal:
    """Uniformly sampled complex baseband waveform.

    Parameters
    ----------
    samples : array_like of complex
        Sample values; stored as a read-only ``complex128`` array.
    sample_rate : float
        Sampling frequency in Hz.
    t0 : float
        Time in seconds of ``samples[0]``.
    """

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        arr = check_complex_1d(self.samples, "samples", allow_empty=True).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", check_positive(self.sample_rate, "sample_rate"))
        if not math.isfinite(self.t0):
            raise InvalidArgumentError("t0 must be finite")
        object.__setattr__(self, "t0", float(self.t0))

    def __len__(self):
        return self.samples.size

    @property
    def Ts(self):
        return 1.0 / self.sample_rate

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    @property
    def times(self):
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    @property
    def power(self):
        """Mean power, zero for an empty signal."""
        if self.samples.size == 0:
            return 0.0
        return float(np.mean(np.abs(self.samples) ** 2))

    def with_samples(self, samples, t0=None):
        return ComplexBasebandSignal(samples, self.sample_rate, self.t0 if t0 is None else t0)

    def scaled(self, factor):
        return self.with_samples(self.samples * factor)


@dataclass(frozen=True)
class PulseSpec:
    """Raised-cosine pulse description.

    ``T`` is the symbol period, ``samples_per_symbol`` the oversampling
    factor of the simulator grid and ``span_symbols`` the half-support of
    the truncated pulse.
    """

    T: float
    samples_per_symbol: int = 6
    alpha_rc: float = 0.25
    span_symbols: int = 16

    def __post_init__(self):
        check_positive(self.T, "T")
        check_int(self.samples_per_symbol, "samples_per_symbol", minimum=2)
        check_in_range(self.alpha_rc, "alpha_rc", 0.0, 1.0)
        check_int(self.span_symbols, "span_symbols", minimum=4)

    @property
    def Ns(self):
        return self.samples_per_symbol

    @property
    def sample_rate(self):
        return self.samples_per_symbol / self.T

    @property
    def Ts(self):
        return self.T / self.samples_per_symbol

    @property
    def half_length(self):
        """Number of taps on each side of the center tap."""
        return self.span_symbols * self.samples_per_symbol

    @property
    def bandwidth(self):
        """One-sided occupied bandwidth (1 + alpha) / (2 T) in Hz."""
        return (1.0 + self.alpha_rc) / (2.0 * self.T)


# Exponents of the nonzero terms below x^degree + ... + 1.
DEFAULT_MSEQ_TAPS = {
    2: (2, 1),
    3: (3, 1),
    4: (4, 1),
    5: (5, 2),
    6: (6, 1),
    7: (7, 3),
    8: (8, 6, 5, 4),
    9: (9, 4),
    10: (10, 3),
    11: (11, 2),
    12: (12, 6, 4, 1),
    13: (13, 4, 3, 1),
    14: (14, 10, 6, 1),
    15: (15, 1),
    16: (16, 15, 13, 4),
}


@dataclass(frozen=True)
class MSequenceSpec:
    degree: int
    taps: tuple = None
    initial_state: tuple = None

    def __post_init__(self):
        check_int(self.degree, "degree", minimum=2)
        taps = self.taps
        if taps is None:
            if self.degree not in DEFAULT_MSEQ_TAPS:
                raise InvalidArgumentError(f"no default polynomial for degree {self.degree}")
            taps = DEFAULT_MSEQ_TAPS[self.degree]
        taps = tuple(sorted({int(t) for t in taps}, reverse=True))
        if taps[0] != self.degree or any(t < 1 for t in taps):
            raise InvalidArgumentError(
                f"taps must include the degree {self.degree} and lie in [1, degree], got {taps}"
            )
        object.__setattr__(self, "taps", taps)
        state = self.initial_state
        if state is None:
            state = (1,) * self.degree
        state = tuple(int(b) & 1 for b in state)
        if len(state) != self.degree:
            raise InvalidArgumentError(f"initial_state needs {self.degree} bits, got {len(state)}")
        object.__setattr__(self, "initial_state", state)

    @property
    def length(self):
        return 2**self.degree - 1


def generate_mseq(spec):
    """Generate one period of a maximal-length sequence mapped to +/-1.

    The register runs the recurrence ``s[j] = XOR_t s[j - t]`` over the tap
    exponents; bit 0 maps to +1 and bit 1 to -1.

    Raises
    ------
    InvalidArgumentError
        If the initial register fill is all zero.
    InvalidPolynomialError
        If the register returns to its initial state before ``2**degree - 1``
        steps, i.e. the taps are not primitive.
    """
    if not isinstance(spec, MSequenceSpec):
        spec = MSequenceSpec(int(spec))
    if not any(spec.initial_state):
        raise InvalidArgumentError("initial_state must not be all zero")
    n = spec.degree
    period = spec.length
    # state bit k holds s[j - 1 - k]; taps t read s[j - t] -> bit t - 1
    mask = 0
    for t in spec.taps:
        mask |= 1 << (t - 1)
    full = (1 << n) - 1
    state0 = 0
    for k, b in enumerate(spec.initial_state):
        state0 |= b << k
    state = state0
    bits = np.empty(period, dtype=np.int8)
    for j in range(period):
        bits[j] = (state >> (n - 1)) & 1
        fb = bin(state & mask).count("1") & 1
        state = ((state << 1) | fb) & full
        if state == state0 and j < period - 1:
            raise InvalidPolynomialError(
                f"taps {spec.taps} give period {j + 1}, expected {period}"
            )
    if state != state0:
        raise InvalidPolynomialError(f"taps {spec.taps} do not return to the initial state")
    return 1.0 - 2.0 * bits.astype(np.float64)


def raised_cosine(t, T, alpha):
    """Raised-cosine impulse response evaluated at arbitrary times.

    At ``t = +/- T / (2 alpha)`` the removable singularity is replaced by its
    limit ``pi/4 * sinc(1 / (2 alpha))``.
    """
    x = np.asarray(t, dtype=np.float64) / T
    out = np.sinc(x)
    if alpha == 0:
        return out
    den = 1.0 - (2.0 * alpha * x) ** 2
    sing = np.abs(den) < 1e-10
    safe = np.where(sing, 1.0, den)
    out = out * np.cos(np.pi * alpha * x) / safe
    return np.where(sing, np.pi / 4.0 * np.sinc(1.0 / (2.0 * alpha)), out)


def raised_cosine_taps(spec, offset=0.0):
    """Raised-cosine taps on the simulator grid.

    Returns ``2 * span * Ns + 1`` real taps centered on the middle one. A
    nonzero ``offset`` (seconds) samples ``g(k Ts - offset)`` instead.
    """
    k = np.arange(-spec.half_length, spec.half_length + 1)
    return raised_cosine(k * spec.Ts - offset, spec.T, spec.alpha_rc)


def pulse_shape(symbols, pulse, delay=0.0):
    """Build ``sum_n d[n] g(t - n T - delay)`` on the ``Ns / T`` grid.

    The returned signal's ``t0`` is chosen so that symbol 0 peaks at
    ``t = delay``.
    """
    d = check_complex_1d(symbols, "symbols")
    Ns = pulse.samples_per_symbol
    whole = math.floor(delay / pulse.Ts + 1e-12)
    frac = delay - whole * pulse.Ts
    taps = raised_cosine_taps(pulse, frac)
    if frac > 0:
        # one more tap so the shifted pulse keeps its full right-hand support
        taps = np.append(taps, raised_cosine((pulse.half_length + 1) * pulse.Ts - frac, pulse.T, pulse.alpha_rc))
    y = sps.upfirdn(taps, d, up=Ns)
    # upfirdn pads Ns - 1 trailing zeros after the last symbol
    y = y[: (d.size - 1) * Ns + taps.size]
    t0 = -pulse.span_symbols * pulse.T + whole * pulse.Ts
    return ComplexBasebandSignal(y, pulse.sample_rate, t0)


def dft(x, L=None):
    """Forward DFT ``X[l] = sum_n x[n] exp(-j 2 pi l n / L)``, zero padded to L."""
    x = np.asarray(x, dtype=np.complex128)
    if L is None:
        L = x.shape[0]
    if L < x.shape[0]:
        raise InvalidArgumentError(f"L={L} shorter than input length {x.shape[0]}")
    return np.fft.fft(x, n=L, axis=0)


def idft(X, L=None):
    """Inverse DFT with the ``1/L`` normalization."""
    X = np.asarray(X, dtype=np.complex128)
    if L is None:
        L = X.shape[0]
    if L < X.shape[0]:
        raise InvalidArgumentError(f"L={L} shorter than input length {X.shape[0]}")
    return np.fft.ifft(X, n=L, axis=0)


def linear_interpolate(v, t):
    """Two-point linear interpolation of a sampled signal.

    Computes ``(1 - alpha) v(t_L) + alpha v(t_R)`` with ``t_L``/``t_R`` the
    bracketing grid instants. ``t`` may be scalar or array.

    Raises
    ------
    OutOfBoundsError
        If any ``t`` lies before the first or after the last sample.
    """
    tt = np.asarray(t, dtype=np.float64)
    pos = (tt - v.t0) * v.sample_rate
    n = len(v)
    eps = 1e-9
    if np.any(pos < -eps) or np.any(pos > n - 1 + eps) or n == 0:
        raise OutOfBoundsError(
            f"interpolation time outside [{v.t0}, {v.t0 + (n - 1) / v.sample_rate}]"
        )
    pos = np.clip(pos, 0.0, n - 1)
    i = np.minimum(np.floor(pos).astype(np.int64), max(n - 2, 0))
    alpha = pos - i
    x = v.samples
    if n == 1:
        out = np.full(pos.shape, x[0])
    else:
        out = (1.0 - alpha) * x[i] + alpha * x[i + 1]
    return out[()] if np.ndim(out) == 0 else out


def add_awgn(v, snr_db, rng_seed=None, reference_power=None):
    """Add circularly symmetric complex Gaussian noise.

    The noise variance is ``P / 10**(snr_db / 10)`` where ``P`` is the mean
    power of ``v`` unless ``reference_power`` is given. ``rng_seed`` may be an
    int, a :class:`numpy.random.SeedSequence` or a ``Generator``.
    """
    if snr_db == math.inf:
        return v
    P = v.power if reference_power is None else float(reference_power)
    if not (P > 0 and math.isfinite(P)):
        raise InvalidArgumentError("signal power must be finite and positive for finite SNR")
    var = P / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(rng_seed)
    n = len(v)
    noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    noise *= math.sqrt(var / 2.0)
    return v.with_samples(v.samples + noise)


# --- band-limited fractional delay -------------------------------------------

INTERP_TAPS = 64
INTERP_BETA = 24.0
_HALF = INTERP_TAPS // 2
_PHASES = 16384  # fractional-delay table rows per sample


def windowed_sinc(x):
    """Kaiser-windowed sinc kernel used for every band-limited delay."""
    x = np.asarray(x, dtype=np.float64)
    w = np.i0(INTERP_BETA * np.sqrt(np.clip(1.0 - (x / _HALF) ** 2, 0.0, None))) / np.i0(INTERP_BETA)
    return np.where(np.abs(x) <= _HALF, np.sinc(x) * w, 0.0)


def fractional_delay_taps(delay):
    """FIR taps delaying by ``delay`` samples.

    Returns ``(start, taps)`` such that ``y[n] = sum_k taps[k] x[n - start - k]``.
    Integer delays reduce to a single unit tap.
    """
    whole = math.floor(delay)
    frac = delay - whole
    if frac < 1e-13:
        return whole, np.ones(1)
    if frac > 1 - 1e-13:
        return whole + 1, np.ones(1)
    k = np.arange(-_HALF + 1, _HALF + 1)
    # y[n] = sum_k x[n - whole - k] h(k - frac) ... reorder so start is the smallest shift
    taps = windowed_sinc(k - frac)
    return whole + k[0], taps


def delay_samples(x, delay, out_len=None):
    """Delay a sample array by a (fractional) number of samples.

    Output index ``n`` holds ``x`` evaluated at position ``n - delay``; the
    result has ``out_len`` samples (default ``len(x)``), zero outside the
    support of ``x``.
    """
    x = np.asarray(x, dtype=np.complex128)
    if out_len is None:
        out_len = x.size
    start, taps = fractional_delay_taps(delay)
    full = sps.oaconvolve(x, taps) if taps.size > 1 else x.copy()
    out = np.zeros(out_len, dtype=np.complex128)
    lo = max(start, 0)
    hi = min(out_len, start + full.size)
    if hi > lo:
        out[lo:hi] = full[lo - start : hi - start]
    return out


def _phase_table():
    # row r holds the taps for fractional offset r / _PHASES; rows are
    # linearly blended for offsets in between
    k = np.arange(-_HALF + 1, _HALF + 1)
    d = np.arange(_PHASES + 1) / _PHASES
    return np.ascontiguousarray(windowed_sinc(k[None, :] - d[:, None]))


@numba.njit(cache=True)
def _interp_kernel(x, positions, table, half, res, out):
    n = x.size
    ntap = 2 * half
    for q in range(positions.size):
        p = positions[q]
        i = math.floor(p)
        d = p - i
        if d < 1e-13:
            out[q] = x[i] if 0 <= i < n else 0.0
            continue
        if i + half < 0 or i - half + 1 >= n:
            out[q] = 0.0
            continue
        fr = d * res
        r = int(fr)
        f = fr - r
        first = i - half + 1
        acc = 0.0 + 0.0j
        if first >= 0 and first + ntap <= n:
            for k in range(ntap):
                w = table[r, k] + f * (table[r + 1, k] - table[r, k])
                acc += x[first + k] * w
        else:
            for k in range(ntap):
                idx = first + k
                if idx < 0 or idx >= n:
                    continue
                w = table[r, k] + f * (table[r + 1, k] - table[r, k])
                acc += x[idx] * w
        out[q] = acc


_TABLE = _phase_table()


def interpolate_at(x, positions):
    """Band-limited evaluation of a sample array at fractional positions.

    ``positions`` are in samples (0 is ``x[0]``). Outside the support the
    signal is treated as zero.
    """
    x = np.ascontiguousarray(x, dtype=np.complex128)
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    out = np.empty(positions.size, dtype=np.complex128)
    _interp_kernel(x, positions.ravel(), _TABLE, _HALF, float(_PHASES), out)
    return out.reshape(positions.shape)
