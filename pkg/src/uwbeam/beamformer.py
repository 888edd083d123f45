"""
Frequency-domain transmit beamforming for a uniform linear array.

Weights are built per DFT bin on the two-sided grid around the carrier,
masked to the occupied band, and turned into per-element FIR filters by an
inverse DFT. Angles are radians from broadside; positive angles advance
toward increasing element index.
"""

import csv
from dataclasses import dataclass
import math

import numpy as np
from scipy import signal as sps
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_angle, check_int, check_positive, check_in_range
from .dsp import ComplexBasebandSignal, PulseSpec, idft, pulse_shape
from .exceptions import InvalidArgumentError, SingularDesignError

__all__ = [
    "ArrayGeometry",
    "BeamWeights",
    "BeamFilters",
    "incremental_delay",
    "steering_vector",
    "band_edge_bins",
    "band_bins",
    "frequency_grid",
    "design_single_beam",
    "design_null_steering",
    "synthesize_time_filters",
    "apply_transmit_beamforming",
    "beam_pattern",
    "write_weights_csv",
    "write_filters_csv",
    "TransmitBeamformer",
]


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array: ``M`` elements spaced ``delta`` metres apart."""

    M: int
    delta: float
    c: float = 1500.0

    def __post_init__(self):
        check_int(self.M, "M", minimum=1)
        check_positive(self.delta, "delta")
        check_positive(self.c, "c")


def incremental_delay(geom, theta0):
    """Inter-element delay ``delta * sin(theta0) / c`` in seconds."""
    check_angle(theta0, "theta0")
    return geom.delta * math.sin(theta0) / geom.c


def steering_vector(M, chi):
    """``[1, exp(-j chi), ..., exp(-j (M-1) chi)]``; ``chi`` may be an array.

    For array ``chi`` the element axis is last.
    """
    check_int(M, "M", minimum=1)
    chi = np.asarray(chi, dtype=np.float64)
    m = np.arange(M)
    return np.exp(-1j * chi[..., None] * m)


def band_edge_bins(L, Ns, alpha_rc):
    """Number of bins covering one half of the occupied band."""
    return math.ceil(L * (1.0 + alpha_rc) / (2.0 * Ns))


def band_bins(L, Ns, alpha_rc):
    """Sorted indices of the nonzero-weight bins."""
    Lbar = band_edge_bins(L, Ns, alpha_rc)
    low = np.arange(0, Lbar + 1)
    high = np.arange(L - Lbar, L)
    return np.union1d(low, high)


def frequency_grid(fc, fs, L):
    """Passband frequency of each DFT bin: ``fc + l df`` folded at ``L/2``."""
    l = np.arange(L)
    signed = np.where(l <= L // 2, l, l - L)
    return fc + signed * (fs / L)


@dataclass(frozen=True)
class BeamWeights:
    """Per-bin, per-element complex weights.

    ``weights[l, m]`` is the weight of element ``m`` at bin ``l``;
    ``band`` lists the bins that carry nonzero weights.
    """

    weights: np.ndarray
    band: np.ndarray
    geom: ArrayGeometry
    fc: float
    fs: float
    L: int
    Ns: int
    alpha_rc: float
    targets: tuple = ()
    nulls: tuple = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.complex128)
        w.flags.writeable = False
        b = np.array(self.band, dtype=np.int64)
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "band", b)

    @property
    def M(self):
        return self.weights.shape[1]

    @property
    def Lbar(self):
        return band_edge_bins(self.L, self.Ns, self.alpha_rc)

    @property
    def frequencies(self):
        return frequency_grid(self.fc, self.fs, self.L)

    @property
    def bin_spacing(self):
        return self.fs / self.L

    def bin_of(self, f):
        """Bin index nearest to passband frequency ``f``."""
        return int(round((f - self.fc) / self.bin_spacing)) % self.L


@dataclass(frozen=True)
class BeamFilters:
    """Time-domain beamforming filters, one row of ``L`` taps per element."""

    taps: np.ndarray
    fs: float

    @property
    def M(self):
        return self.taps.shape[0]

    @property
    def L(self):
        return self.taps.shape[1]

    def centered(self):
        """Taps circularly shifted so that lag zero sits at index ``L // 2``."""
        return np.roll(self.taps, self.L // 2, axis=1)


def _check_design(geom, fc, fs, L, Ns, alpha_rc):
    check_positive(fc, "fc")
    check_positive(fs, "fs")
    L = check_int(L, "L", minimum=2)
    Ns = check_int(Ns, "Ns", minimum=2)
    check_in_range(alpha_rc, "alpha_rc", 0.0, 1.0)
    if L % 2:
        raise InvalidArgumentError(f"L must be even, got {L}")
    Lbar = band_edge_bins(L, Ns, alpha_rc)
    need = 2 * Lbar + 2
    if L < need:
        raise InvalidArgumentError(
            f"L={L} cannot cover the occupied band; need L >= {need} (bar-L={Lbar})"
        )
    return L, Ns


def design_single_beam(geom, theta0, fc, fs, L=4096, Ns=6, alpha_rc=0.25):
    """Single beam toward ``theta0`` with unit-norm weights on every band bin."""
    L, Ns = _check_design(geom, fc, fs, L, Ns, alpha_rc)
    dtau = incremental_delay(geom, theta0)
    band = band_bins(L, Ns, alpha_rc)
    f = frequency_grid(fc, fs, L)
    W = np.zeros((L, geom.M), dtype=np.complex128)
    W[band] = np.conj(steering_vector(geom.M, 2 * np.pi * f[band] * dtau)) / math.sqrt(geom.M)
    return BeamWeights(W, band, geom, fc, fs, L, Ns, alpha_rc, targets=(float(theta0),))


def design_null_steering(geom, theta_target, theta_nulls, fc, fs, L=4096, Ns=6, alpha_rc=0.25,
                         rcond=1e-10):
    """Beam toward ``theta_target`` with exact nulls toward ``theta_nulls``.

    Per band bin the minimum-norm vector meeting the constraints is scaled to
    unit norm with a real positive response at the target angle.

    Raises
    ------
    InvalidArgumentError
        Duplicate angles or more constraints than elements.
    SingularDesignError
        The steering vectors are linearly dependent at some bin (aliasing).
    """
    L, Ns = _check_design(geom, fc, fs, L, Ns, alpha_rc)
    check_angle(theta_target, "theta_target")
    nulls = [check_angle(t, "theta_null") for t in theta_nulls]
    angles = [float(theta_target)] + nulls
    if len(set(angles)) != len(angles):
        raise InvalidArgumentError("target and null angles must be distinct")
    if len(angles) > geom.M:
        raise InvalidArgumentError(
            f"{len(angles)} constraints exceed the {geom.M} available degrees of freedom"
        )
    band = band_bins(L, Ns, alpha_rc)
    f = frequency_grid(fc, fs, L)
    dtaus = np.array([incremental_delay(geom, a) for a in angles])
    W = np.zeros((L, geom.M), dtype=np.complex128)
    rhs = np.zeros(len(angles))
    rhs[0] = 1.0
    for l in band:
        # rows: array response s^T(angle); constraint A w = [1, 0, ...]
        A = steering_vector(geom.M, 2 * np.pi * f[l] * dtaus)
        G = A @ A.conj().T
        sv = np.linalg.svd(G, compute_uv=False)
        if sv[-1] <= rcond * sv[0]:
            raise SingularDesignError(
                f"null-steering constraints are singular at bin {l} ({f[l]:.1f} Hz)", bin_index=int(l)
            )
        w = A.conj().T @ np.linalg.solve(G, rhs)
        W[l] = w / np.linalg.norm(w)
    return BeamWeights(W, band, geom, fc, fs, L, Ns, alpha_rc,
                       targets=(float(theta_target),), nulls=tuple(nulls))


def synthesize_time_filters(w):
    """Inverse DFT of each element's weight column (1/L normalization)."""
    taps = idft(w.weights, w.L).T.copy()
    return BeamFilters(taps, w.fs)


def apply_transmit_beamforming(symbols, pulse, filters):
    """Pulse-shape ``symbols`` and pass the result through every element filter.

    Filters are applied by linear convolution of one kernel period whose lag
    zero sits at ``L // 2``; the resulting ``L/2`` sample group delay is
    removed from each output's ``t0``.

    Returns
    -------
    list of ComplexBasebandSignal
        One transmit signal per element.
    """
    if isinstance(filters, BeamWeights):
        filters = synthesize_time_filters(filters)
    if abs(filters.fs - pulse.sample_rate) > 1e-9 * filters.fs:
        raise InvalidArgumentError(
            f"filter rate {filters.fs} Hz differs from pulse-shaping rate {pulse.sample_rate} Hz"
        )
    x = pulse_shape(symbols, pulse)
    kern = filters.centered()
    t0 = x.t0 - (filters.L // 2) / filters.fs
    out = []
    for m in range(filters.M):
        u = sps.oaconvolve(x.samples, kern[m])
        out.append(ComplexBasebandSignal(u, x.sample_rate, t0))
    return out


def beam_pattern(w, theta_grid, f):
    """Array response magnitude ``|s^T(2 pi f dtau(theta)) Phi(f)|`` per angle.

    The weights of the bin nearest ``f`` are used; ``f`` must fall in the
    occupied band.
    """
    l = w.bin_of(f)
    if l not in set(w.band.tolist()):
        raise InvalidArgumentError(f"frequency {f} Hz lies outside the occupied band")
    theta = np.atleast_1d(np.asarray(theta_grid, dtype=np.float64))
    dtau = w.geom.delta * np.sin(theta) / w.geom.c
    S = steering_vector(w.M, 2 * np.pi * f * dtau)
    return np.abs(S @ w.weights[l])


def _header(meta):
    return "# " + " ".join(f"{k}={v}" for k, v in meta.items())


def write_weights_csv(path, w):
    """Write weights as ``bin_index, element_index, real, imag`` rows."""
    meta = {"fc": w.fc, "fs": w.fs, "L": w.L, "Ns": w.Ns, "alpha_rc": w.alpha_rc}
    with open(path, "w", newline="") as fh:
        fh.write(_header(meta) + "\n")
        wr = csv.writer(fh)
        wr.writerow(["bin_index", "element_index", "real", "imag"])
        for l in range(w.L):
            for m in range(w.M):
                v = w.weights[l, m]
                wr.writerow([l, m, repr(float(v.real)), repr(float(v.imag))])


def write_filters_csv(path, filters, w=None):
    """Write filter taps as ``sample_index, element_index, real, imag`` rows."""
    meta = {"fs": filters.fs, "L": filters.L}
    if w is not None:
        meta = {"fc": w.fc, "fs": w.fs, "L": w.L, "Ns": w.Ns, "alpha_rc": w.alpha_rc}
    with open(path, "w", newline="") as fh:
        fh.write(_header(meta) + "\n")
        wr = csv.writer(fh)
        wr.writerow(["sample_index", "element_index", "real", "imag"])
        for n in range(filters.L):
            for m in range(filters.M):
                v = filters.taps[m, n]
                wr.writerow([n, m, repr(float(v.real)), repr(float(v.imag))])


def read_weights_csv(path):
    """Inverse of :func:`write_weights_csv`; returns ``(meta, weights)``."""
    with open(path) as fh:
        header = fh.readline().lstrip("# ").split()
        meta = {}
        for item in header:
            k, v = item.split("=")
            meta[k] = float(v)
        rows = list(csv.DictReader(fh))
    L = int(meta["L"])
    M = max(int(r["element_index"]) for r in rows) + 1
    W = np.zeros((L, M), dtype=np.complex128)
    for r in rows:
        W[int(r["bin_index"]), int(r["element_index"])] = complex(float(r["real"]), float(r["imag"]))
    return meta, W


class TransmitBeamformer(BaseEstimator, TransformerMixin):
    """Transmit beamformer with a scikit-learn style interface.

    ``fit`` designs the weights and filters; ``transform`` maps a symbol
    sequence to one transmit signal per element. When ``theta`` is None the
    steering angle is estimated from probe receptions passed to ``fit``.

    Parameters
    ----------
    M, delta, c : array geometry.
    fc, fs : carrier and simulator sampling frequency in Hz.
    L : number of frequency bins / filter taps.
    Ns : samples per symbol.
    alpha_rc : raised-cosine roll-off.
    theta : steering angle in radians, or None to estimate it.
    null_angles : angles (radians) that receive exact nulls.
    span_symbols : raised-cosine half-support.
    """

    def __init__(self, M=24, delta=0.05, c=1500.0, fc=12500.0, fs=1e7 / 256, L=4096, Ns=6,
                 alpha_rc=0.25, theta=0.0, null_angles=(), span_symbols=16):
        self.M = M
        self.delta = delta
        self.c = c
        self.fc = fc
        self.fs = fs
        self.L = L
        self.Ns = Ns
        self.alpha_rc = alpha_rc
        self.theta = theta
        self.null_angles = null_angles
        self.span_symbols = span_symbols

    @property
    def geometry(self):
        return ArrayGeometry(self.M, self.delta, self.c)

    @property
    def pulse(self):
        return PulseSpec(self.Ns / self.fs, self.Ns, self.alpha_rc, self.span_symbols)

    def fit(self, X=None, y=None):
        """Design weights.

        Parameters
        ----------
        X : list of ComplexBasebandSignal, optional
            Per-element probe receptions, used only when ``theta`` is None.
        y : array_like, optional
            One period of the probe symbol sequence that produced ``X``.
        """
        theta = self.theta
        if theta is None:
            if X is None or y is None:
                raise InvalidArgumentError("theta=None requires probe receptions X and probe symbols y")
            from .angle import PrincipalAngleEstimator

            est = PrincipalAngleEstimator(M=self.M, delta=self.delta, c=self.c, fc=self.fc, fs=self.fs,
                                          Ns=self.Ns, alpha_rc=self.alpha_rc,
                                          span_symbols=self.span_symbols)
            theta = est.fit(X, y).angle_
        geom = self.geometry
        if len(self.null_angles):
            w = design_null_steering(geom, theta, list(self.null_angles), self.fc, self.fs, self.L,
                                     self.Ns, self.alpha_rc)
        else:
            w = design_single_beam(geom, theta, self.fc, self.fs, self.L, self.Ns, self.alpha_rc)
        self.theta_ = float(theta)
        self.weights_ = w
        self.filters_ = synthesize_time_filters(w)
        return self

    def transform(self, X):
        """Beamform a symbol sequence into ``M`` transmit signals."""
        check_is_fitted(self, "filters_")
        return apply_transmit_beamforming(X, self.pulse, self.filters_)

    def pattern(self, theta_grid, f=None):
        check_is_fitted(self, "weights_")
        return beam_pattern(self.weights_, theta_grid, self.fc if f is None else f)
