"""Frame and Monte Carlo performance metrics."""

from dataclasses import dataclass, field
import math

import numpy as np

from .exceptions import InvalidArgumentError

__all__ = [
    "MSE_FLOOR_DB",
    "compute_frame_mse",
    "FrameMetrics",
    "frame_metrics",
    "MonteCarloResult",
    "empirical_cdf",
]

MSE_FLOOR_DB = -60.0


def compute_frame_mse(d, d_hat, Nt, floor_db=MSE_FLOOR_DB):
    """Mean squared symbol error over ``n >= Nt`` in dB, floored at ``floor_db``.

    The squared errors are accumulated in index order, so the result is
    reproducible bit for bit by a plain loop.
    """
    d = np.asarray(d, dtype=np.complex128)
    d_hat = np.asarray(d_hat, dtype=np.complex128)
    if d.shape != d_hat.shape or d.ndim != 1:
        raise InvalidArgumentError(f"length mismatch: {d.shape} vs {d_hat.shape}")
    if not 0 <= Nt < d.size:
        raise InvalidArgumentError(f"need len(d) > Nt >= 0, got len {d.size}, Nt {Nt}")
    e = d[Nt:] - d_hat[Nt:]
    sq = e.real * e.real + e.imag * e.imag
    mse = np.cumsum(sq)[-1] / sq.size
    if not mse > 0:
        return float(floor_db)
    return max(10.0 * math.log10(mse), float(floor_db))


@dataclass
class FrameMetrics:
    """Per-frame outcome.

    ``pll_trace`` and ``d_hat`` are optional dumps for export.
    """

    mse_db: float
    bit_errors: int
    symbols: int
    converged: bool
    bits: int = 0
    pll_trace: np.ndarray = field(default=None, repr=False)
    d_hat: np.ndarray = field(default=None, repr=False)
    stage_error: str = None

    @property
    def ber(self):
        return self.bit_errors / self.bits if self.bits else 0.0


def frame_metrics(symbols, result, floor_db=MSE_FLOOR_DB, pll_trace=None, keep_traces=True):
    """Metrics of an equalized frame against the transmitted ``symbols``.

    Bits are counted on the payload ``n >= Nt``. A frame cut short by
    divergence or truncation counts every missing payload bit as an error
    and is flagged not converged.
    """
    from .receiver import symbols_to_bits

    cfg = result.config
    symbols = np.asarray(symbols, dtype=np.complex128)
    N = symbols.size
    Nt = min(cfg.Nt, N - 1)
    n_done = result.d_hat.size
    d_hat = np.zeros(N, dtype=np.complex128)
    d_hat[:n_done] = result.d_hat
    mse = compute_frame_mse(symbols, d_hat, Nt, floor_db)
    tx_bits = symbols_to_bits(symbols[Nt:], cfg.constellation)
    det = np.zeros(N, dtype=np.complex128)
    det[:n_done] = result.d_tilde
    rx_bits = symbols_to_bits(det[Nt:], cfg.constellation)
    errors = int(np.count_nonzero(tx_bits != rx_bits))
    if n_done < N:
        k = tx_bits.size // (N - Nt)
        missing = max(0, (N - max(n_done, Nt)) * k)
        errors = int(np.count_nonzero(tx_bits[: tx_bits.size - missing] != rx_bits[: rx_bits.size - missing])
                     + missing)
    trace = result.phi if pll_trace is None else pll_trace
    return FrameMetrics(mse, errors, N - Nt, bool(result.converged), int(tx_bits.size),
                        trace if keep_traces else None, result.d_hat if keep_traces else None)


def empirical_cdf(values):
    """Sorted values and CDF levels ``1/K .. 1``."""
    v = np.sort(np.asarray(values, dtype=np.float64), kind="stable")
    return v, np.arange(1, v.size + 1) / v.size


@dataclass
class MonteCarloResult:
    """Outcome of a Monte Carlo run, ordered by realization index."""

    metrics: list
    master_seed: int
    config: object = None
    elapsed_s: float = None

    @property
    def K(self):
        return len(self.metrics)

    @property
    def mse_db(self):
        return np.array([m.mse_db for m in self.metrics])

    @property
    def cdf(self):
        return empirical_cdf(self.mse_db)

    @property
    def ber(self):
        bits = sum(m.bits for m in self.metrics)
        return sum(m.bit_errors for m in self.metrics) / bits if bits else 0.0

    @property
    def diverged(self):
        return sum(not m.converged for m in self.metrics)
