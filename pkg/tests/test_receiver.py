import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from uwbeam.beamformer import ArrayGeometry
from uwbeam.channel import ChannelSpec, DriftLaw, PathSpec, propagate
from uwbeam.dsp import ComplexBasebandSignal, MSequenceSpec, PulseSpec, generate_mseq, linear_interpolate, pulse_shape
from uwbeam.exceptions import DivergenceError, InvalidArgumentError, SyncFailureError, TruncatedFrameError
from uwbeam.receiver import (
    QPSK,
    DecisionFeedbackEqualizer,
    EqualizerConfig,
    EqualizerState,
    adapt,
    coarse_resample,
    decision,
    dfe_run,
    dfe_run_reference,
    doppler_grid,
    front_end_filter,
    pll_update,
    preamble_gain,
    symbols_to_bits,
    synchronize,
    write_trace_csv,
)

from conftest import FS, random_bpsk

NS = 6
T = NS / FS
FC = 12500.0
PULSE = PulseSpec(T, NS)


def scalar_state(c0=0.0, kappa=100.0):
    return EqualizerState(np.array([c0], dtype=complex), np.zeros(2, dtype=complex), np.zeros(0, dtype=complex),
                          P=kappa * np.eye(1, dtype=complex))


def three_path_frame(n, seed=3, snr_db=20.0, drift=None):
    rng = np.random.default_rng(seed)
    sym = random_bpsk(rng, n)
    x = pulse_shape(sym, PULSE)
    paths = [PathSpec(1.0, 0.0, 0.0, drift or DriftLaw()), PathSpec(0.5, 3.3 * T, 0.0), PathSpec(0.3, 7.1 * T, 0.0)]
    spec = ChannelSpec(paths, ArrayGeometry(1, 0.05), FC, snr_db=snr_db, seed=seed)
    y = front_end_filter(propagate([x], spec), PULSE)
    return sym, y


class TestConfig:
    def test_defaults(self):
        c = EqualizerConfig()
        assert (c.Nf, c.Nb, c.N1, c.Nt) == (20, 20, 10, 160)
        assert c.Kf2 == pytest.approx(c.Kf1 / 10)

    @pytest.mark.parametrize("kw", [dict(algorithm="CMA"), dict(lam=0.0), dict(lam=1.5), dict(Nf=1),
                                    dict(constellation="8PSK"), dict(N1=25), dict(Kf1=-1.0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgumentError):
            EqualizerConfig(**kw)


class TestDecision:
    def test_bpsk(self):
        assert decision(0.3) == 1
        assert decision(-0.01 + 5j) == -1

    def test_bpsk_tie(self):
        assert decision(0.0) == 1

    def test_qpsk(self):
        assert decision(-0.2 + 0.9j, "QPSK") == pytest.approx((-1 + 1j) / math.sqrt(2))

    @given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
    def test_nearest(self, z):
        d = decision(z, "QPSK")
        assert abs(z - d) <= np.min(np.abs(z - QPSK)) + 1e-12

    def test_nonfinite(self):
        with pytest.raises(InvalidArgumentError):
            decision(np.inf)

    def test_gray_bits(self):
        bits = symbols_to_bits(QPSK, "QPSK").reshape(-1, 2)
        # neighbours on the circle differ in one bit
        for i in range(4):
            assert np.sum(bits[i] != bits[(i + 1) % 4]) == 1


class TestAdapt:
    def test_lms_hand_recursion(self):
        cfg = EqualizerConfig(Nf=2, Nb=0, algorithm="LMS", mu=0.5)
        s = scalar_state()
        out = []
        for _ in range(2):
            e = 1.0 - np.vdot(s.c, [1.0])
            adapt(s, [1.0], e, cfg)
            out.append(s.c[0])
        assert out == [0.5, 0.75]

    def test_rls_matches_batch_ls(self):
        rng = np.random.default_rng(4)
        # weak enough regularization that plain least squares applies, small
        # enough that the first inverse update keeps full precision
        cfg = EqualizerConfig(Nf=2, Nb=0, lam=1.0, rls_init=1e8)
        s = scalar_state(kappa=1e8)
        u = rng.standard_normal(100) + 1j * rng.standard_normal(100)
        d = (0.7 - 0.2j) * u + 0.1 * (rng.standard_normal(100) + 1j * rng.standard_normal(100))
        for k in range(100):
            adapt(s, [u[k]], d[k] - np.conj(s.c[0]) * u[k], cfg)
        # d_hat = conj(c) u, so conj(c) = sum conj(u) d / sum |u|^2
        w = np.sum(np.conj(u) * d) / np.sum(np.abs(u) ** 2)
        assert abs(np.conj(s.c[0]) - w) < 1e-9

    @given(st.integers(2, 6), st.floats(0.9, 1.0), st.integers(0, 2 ** 31))
    def test_rls_regularized_oracle(self, n, lam, seed):
        rng = np.random.default_rng(seed)
        kappa = 100.0
        cfg = EqualizerConfig(Nf=n, Nb=0, lam=lam, rls_init=kappa, N1=1)
        s = EqualizerState.initial(cfg)
        c0 = s.c.copy()
        K = 40
        U = rng.standard_normal((K, n)) + 1j * rng.standard_normal((K, n))
        d = rng.standard_normal(K) + 1j * rng.standard_normal(K)
        for k in range(K):
            adapt(s, U[k], d[k] - np.vdot(s.c, U[k]), cfg)
        wts = lam ** (K - 1 - np.arange(K))
        reg = lam ** K / kappa
        R = (U.T * wts) @ U.conj() + reg * np.eye(n)
        rhs = (U.T * wts) @ np.conj(d) + reg * c0
        c = np.linalg.solve(R, rhs)
        assert np.max(np.abs(s.c - c)) < 1e-8 * max(1.0, np.max(np.abs(c)))

    @pytest.mark.parametrize("alg", ["LMS", "RLS"])
    def test_zero_error_no_change(self, alg):
        cfg = EqualizerConfig(Nf=4, Nb=2, algorithm=alg)
        s = EqualizerState.initial(cfg)
        c = s.c.copy()
        adapt(s, np.arange(6) + 1j, 0.0, cfg)
        assert np.array_equal(s.c, c)

    @pytest.mark.parametrize("alg", ["LMS", "RLS"])
    @given(seed=st.integers(0, 2 ** 31))
    def test_repeat_presentation_reduces_error(self, alg, seed):
        rng = np.random.default_rng(seed)
        cfg = EqualizerConfig(Nf=4, Nb=2, algorithm=alg, mu=0.01)
        s = EqualizerState.initial(cfg)
        u = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        d = complex(rng.standard_normal() + 1j * rng.standard_normal())
        e0 = d - np.vdot(s.c, u)
        adapt(s, u, e0, cfg)
        e1 = d - np.vdot(s.c, u)
        assert abs(e1) < abs(e0) or abs(e0) == 0

    def test_rls_reinitializes(self):
        cfg = EqualizerConfig(Nf=2, Nb=0)
        s = EqualizerState.initial(cfg)
        s.P = -np.eye(2, dtype=complex)
        adapt(s, [1.0, 0.5], 0.1, cfg)
        assert s.reinit_count == 1
        assert np.array_equal(s.P, 100.0 * np.eye(2))

    def test_dimension_mismatch(self):
        cfg = EqualizerConfig(Nf=2, Nb=0)
        with pytest.raises(InvalidArgumentError):
            adapt(EqualizerState.initial(cfg), [1.0, 2.0, 3.0], 0.1, cfg)


class TestPll:
    def test_no_error_no_change(self):
        cfg = EqualizerConfig()
        s = EqualizerState.initial(cfg)
        pll_update(s, 0.7 - 0.7j, 0.7 - 0.7j, cfg)
        assert s.phi_hat == 0.0 and s.phi_integrator == 0.0

    def test_zero_magnitude(self):
        cfg = EqualizerConfig()
        s = EqualizerState.initial(cfg)
        pll_update(s, 0.0, 1.0, cfg)
        assert s.phi_hat == 0.0

    def test_second_order_update(self):
        cfg = EqualizerConfig(Kf1=0.1, Kf2=0.02)
        s = EqualizerState.initial(cfg)
        pll_update(s, np.exp(0.3j), 1.0, cfg)
        e = math.sin(0.3)
        assert s.phi_integrator == pytest.approx(e)
        assert s.phi_hat == pytest.approx(0.1 * e + 0.02 * e)

    @pytest.mark.parametrize("Kf1", [0.2, 0.05])
    def test_phase_step_settling(self, Kf1):
        # documented settling: about 2 ln(step / tol) / Kf1 symbols
        cfg = EqualizerConfig(Kf1=Kf1)
        s = EqualizerState.initial(cfg)
        step, tol = math.pi / 8, 0.01
        n_settle = int(math.ceil(2 * math.log(step / tol) / Kf1))
        trace = []
        for _ in range(3 * n_settle):
            pll_update(s, np.exp(1j * (step - s.phi_hat)), 1.0, cfg)
            trace.append(s.phi_hat)
        assert np.max(np.abs(np.array(trace[n_settle:]) - step)) < tol


class TestSync:
    def test_known_offset(self):
        pre = generate_mseq(MSequenceSpec(9))
        x = pulse_shape(pre, PULSE)
        k = 1234
        v = ComplexBasebandSignal(np.r_[np.zeros(k), x.samples, np.zeros(500)], FS, 0.0)
        sr = synchronize(v, pre, PULSE)
        assert sr.frame_start == k
        assert sr.t_first == pytest.approx(k / FS + PULSE.span_symbols * T, abs=1e-12)
        energy = np.sum(np.abs(x.samples) ** 2)
        assert sr.peak_value == pytest.approx(energy, rel=1e-12)
        assert sr.gain == pytest.approx(1.0, rel=1e-12)

    def test_low_snr(self):
        pre = generate_mseq(MSequenceSpec(11))
        x = pulse_shape(pre, PULSE)
        k = 777
        clean = ComplexBasebandSignal(np.r_[np.zeros(k), x.samples, np.zeros(k)], FS, 0.0)
        rng = np.random.default_rng(5)
        P = x.power
        noise = math.sqrt(P / 2) * (rng.standard_normal(len(clean)) + 1j * rng.standard_normal(len(clean)))
        v = clean.with_samples(clean.samples + noise)
        sr = synchronize(v, pre, PULSE, threshold_db=10.0)
        assert sr.frame_start == k
        assert sr.peak_quality > 10.0

    def test_noise_only_fails(self):
        pre = generate_mseq(MSequenceSpec(9))
        rng = np.random.default_rng(2)
        n = 20000
        v = ComplexBasebandSignal(rng.standard_normal(n) + 1j * rng.standard_normal(n), FS)
        with pytest.raises(SyncFailureError):
            synchronize(v, pre, PULSE)

    def test_short_signal(self):
        pre = generate_mseq(MSequenceSpec(9))
        with pytest.raises(SyncFailureError):
            synchronize(ComplexBasebandSignal(np.ones(100), FS), pre, PULSE)

    def test_first_period_of_repeated_preamble(self):
        pre = generate_mseq(MSequenceSpec(7))
        x = pulse_shape(np.tile(pre, 6), PULSE)
        v = ComplexBasebandSignal(np.r_[np.zeros(300), x.samples], FS)
        sr = synchronize(v, pre, PULSE)
        assert sr.frame_start == 300

    def test_doppler_bank(self):
        a = 3.1e-4
        pre = generate_mseq(MSequenceSpec(12))
        x = pulse_shape(pre, PULSE)
        spec = ChannelSpec([PathSpec(1.0, 0.01, 0.0, DriftLaw(a))], ArrayGeometry(1, 0.05), FC)
        y = propagate([x], spec)
        sr = synchronize(y, pre, PULSE, fc=FC, doppler=doppler_grid())
        assert sr.coarse_doppler == pytest.approx(a, abs=5e-6)
        assert sr.t_first == pytest.approx(0.01 + 16 * T * a, abs=T / 8)

    def test_doppler_grid(self):
        g = doppler_grid()
        assert g.size == 121 and g[0] == pytest.approx(-1.5e-3) and g[60] == 0.0
        assert np.allclose(np.diff(g), 2.5e-5)


class TestCoarseResample:
    def test_identity(self):
        v = ComplexBasebandSignal(np.arange(10.0) + 0j, FS)
        assert coarse_resample(v, 0.0) is v

    @pytest.mark.parametrize("a", [1e-3, -7e-4])
    def test_length(self, a):
        v = ComplexBasebandSignal(np.ones(10001, dtype=complex), FS)
        assert len(coarse_resample(v, a)) == round(10001 * (1 - a))

    @pytest.mark.parametrize("a", [1e-3, -1.3e-3])
    def test_tone(self, a):
        n = 1 << 15
        f0 = 1500.0
        t = np.arange(n) / FS
        v = ComplexBasebandSignal(np.exp(2j * np.pi * f0 * (1 - a) * t), FS)
        u = coarse_resample(v, a)
        assert measured_frequency(u) == pytest.approx(f0, abs=1e-3 * f0)
        # compressed passband tone carries the carrier offset too
        w = ComplexBasebandSignal(np.exp(2j * np.pi * (f0 * (1 - a) - FC * a) * t), FS)
        assert measured_frequency(coarse_resample(w, a, fc=FC)) == pytest.approx(f0, abs=1e-3 * f0)

    def test_bound(self):
        with pytest.raises(InvalidArgumentError):
            coarse_resample(ComplexBasebandSignal(np.ones(4), FS), 0.02)


def measured_frequency(u):
    x = u.samples[200:-200] * np.hanning(len(u) - 400)
    N = 1 << 20
    X = np.abs(np.fft.fft(x, N))
    k = int(np.argmax(X))
    return np.fft.fftfreq(N, 1 / FS)[k]


@pytest.fixture(scope="module")
def ideal():
    rng = np.random.default_rng(0)
    sym = random_bpsk(rng, 3000)
    return sym, pulse_shape(sym, PULSE)


class TestDfe:
    def test_ideal_channel(self, ideal):
        sym, x = ideal
        cfg = EqualizerConfig()
        r = dfe_run(x, cfg, sym, sym.size, 0.0, T, FC)
        assert np.max(np.abs(r.e[cfg.Nt:])) < 1e-3
        assert np.array_equal(r.d_tilde, sym)
        assert r.converged

    def test_ideal_error_non_increasing(self, ideal):
        sym, x = ideal
        cfg = EqualizerConfig()
        r = dfe_run(x, cfg, sym, sym.size, 0.0, T, FC)
        ea = np.abs(r.e[cfg.Nf + cfg.Nb:])
        assert np.all(np.diff(ea) <= 1e-9)

    @pytest.mark.parametrize("kw", [dict(), dict(algorithm="LMS", mu=0.02), dict(Nb=0), dict(constellation="QPSK")])
    def test_kernel_matches_reference(self, kw):
        rng = np.random.default_rng(1)
        cfg = EqualizerConfig(**kw)
        if cfg.constellation == "QPSK":
            sym = QPSK[rng.integers(0, 4, 600)]
        else:
            sym = random_bpsk(rng, 600)
        paths = [PathSpec(1.0, 0.0, 0.0, DriftLaw(2e-5)), PathSpec(0.4, 2.2 * T, 0.0)]
        y = propagate([pulse_shape(sym, PULSE)], ChannelSpec(paths, ArrayGeometry(1, 0.05), FC, 25.0, seed=2))
        a = dfe_run(y, cfg, sym, 400, 0.0, T, FC)
        b = dfe_run_reference(y, cfg, sym, 400, 0.0, T, FC)
        for f in ("d_hat", "d_tilde", "e", "phi"):
            assert np.max(np.abs(getattr(a, f) - getattr(b, f))) < 1e-9

    def test_shift_register_discipline(self):
        sym, y = three_path_frame(400, snr_db=25.0)
        cfg = EqualizerConfig()
        r = dfe_run_reference(y, cfg, sym, 300, 0.0, T, FC, record_inputs=True)
        Y = r.y_trace
        for n in range(1, 300):
            assert np.array_equal(Y[n, 2:], Y[n - 1, : cfg.Nf - 2])
            base = n * T - r.phi[n - 1] / (2 * math.pi * FC)
            new = linear_interpolate(y, base + np.array([cfg.N1, cfg.N1 - 1]) * T / 2)
            assert np.array_equal(Y[n, :2], new)

    def test_training_switch(self):
        sym, y = three_path_frame(1000)
        cfg = EqualizerConfig()
        wrong = sym.copy()
        wrong[cfg.Nt:] *= -1  # training symbols past Nt must be ignored
        a = dfe_run(y, cfg, sym, 1000, 0.0, T, FC)
        b = dfe_run(y, cfg, wrong, 1000, 0.0, T, FC)
        assert np.array_equal(a.d_hat, b.d_hat)
        Nt = cfg.Nt
        assert np.array_equal(a.e[:Nt], sym[:Nt] - a.d_hat[:Nt])
        assert np.array_equal(a.e[Nt:], a.d_tilde[Nt:] - a.d_hat[Nt:])

    def test_three_path_static(self):
        sym, y = three_path_frame(10000)
        sr = synchronize(y, sym[:4095], PULSE)
        cfg = EqualizerConfig()
        r = dfe_run(y.scaled(1 / sr.gain), cfg, sym, sym.size, sr.t_first, T, FC)
        Nt = cfg.Nt
        mse = 10 * np.log10(np.mean(np.abs(sym[Nt:] - r.d_hat[Nt:]) ** 2))
        assert mse <= -10.0
        assert np.count_nonzero(r.d_tilde[Nt:] != sym[Nt:]) == 0

    @pytest.mark.parametrize("theta", [math.pi / 7, math.pi / 3])
    def test_phase_rotation_invariance(self, theta):
        sym, y = three_path_frame(6000)
        sr = synchronize(y, sym[:4095], PULSE)
        cfg = EqualizerConfig()
        base = dfe_run(y.scaled(1 / sr.gain), cfg, sym, sym.size, sr.t_first, T, FC)
        rot = dfe_run(y.scaled(np.exp(1j * theta) / sr.gain), cfg, sym, sym.size, sr.t_first, T, FC)
        assert np.array_equal(base.d_tilde[cfg.Nt:], rot.d_tilde[cfg.Nt:])

    @pytest.mark.parametrize("a", [1e-5, 5e-5])
    def test_pll_slope(self, a):
        rng = np.random.default_rng(7)
        n = 40950
        sym = random_bpsk(rng, n)
        spec = ChannelSpec([PathSpec(1.0, 0.001, 0.0, DriftLaw(a))], ArrayGeometry(1, 0.05), FC, 30.0, seed=4)
        y = front_end_filter(propagate([pulse_shape(sym, PULSE)], spec), PULSE)
        sr = synchronize(y, sym[:4095], PULSE)
        r = dfe_run(y.scaled(1 / sr.gain), EqualizerConfig(), sym, n, sr.t_first, T, FC)
        half = n // 2
        slope = np.polyfit(np.arange(half, n) * T, r.phi[half:], 1)[0]
        assert slope == pytest.approx(-2 * np.pi * FC * a / (1 - a), rel=0.05)
        # type-2 loop: no standing phase error once locked
        err = np.angle(r.d_hat[half:] * np.conj(sym[half:]))
        assert abs(np.mean(err)) < 0.01

    def test_determinism(self):
        sym, y = three_path_frame(2000)
        cfg = EqualizerConfig()
        a = dfe_run(y, cfg, sym, 2000, 0.0, T, FC)
        b = dfe_run(y, cfg, sym, 2000, 0.0, T, FC)
        for f in ("d_hat", "d_tilde", "e", "phi"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_truncation(self):
        sym, y = three_path_frame(500)
        cfg = EqualizerConfig()
        with pytest.raises(TruncatedFrameError):
            dfe_run(y, cfg, sym, 5000, 0.0, T, FC)
        r = dfe_run(y, cfg, sym, 5000, 0.0, T, FC, raise_on_error=False)
        assert r.status == "truncated" and not r.converged
        assert 500 <= r.stop_index < 5000

    def test_divergence(self):
        sym, y = three_path_frame(3000)
        cfg = EqualizerConfig(algorithm="LMS", mu=50.0)
        with pytest.raises(DivergenceError) as ei:
            dfe_run(y, cfg, sym, 3000, 0.0, T, FC)
        assert ei.value.symbol_index is not None
        r = dfe_run(y, cfg, sym, 3000, 0.0, T, FC, raise_on_error=False)
        assert r.status == "diverged"

    def test_trace_csv(self, tmp_path, ideal):
        sym, x = ideal
        r = dfe_run(x, EqualizerConfig(), sym, 50, 0.0, T, FC)
        path = tmp_path / "trace.csv"
        write_trace_csv(path, r)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["n", "d_hat_re", "d_hat_im", "d_tilde_re", "d_tilde_im", "e_abs", "phi_hat"]
        assert len(rows) == 51
        assert float(rows[10][1]) == r.d_hat[9].real


class TestFrontEnd:
    def test_passes_band(self):
        # strictly band-limited input: tones inside the occupied band
        rng = np.random.default_rng(0)
        n = 6000
        t = np.arange(n) / FS
        f = rng.uniform(-0.95, 0.95, 12) * PULSE.bandwidth
        a = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        x = ComplexBasebandSignal(np.exp(2j * np.pi * np.outer(t, f)) @ a, FS, 0.0)
        y = front_end_filter(x, PULSE)
        err = np.abs(y.samples - x.samples)[1000:-1000]
        assert np.max(err) < 1e-4 * np.sum(np.abs(a))
        assert y.t0 == x.t0 and len(y) == len(x)

    def test_removes_out_of_band(self):
        t = np.arange(6000) / FS
        f = PULSE.bandwidth + 1.0 / PULSE.T
        x = ComplexBasebandSignal(np.exp(2j * np.pi * f * t), FS, 0.0)
        y = front_end_filter(x, PULSE)
        assert np.max(np.abs(y.samples[1000:-1000])) < 1e-4

    def test_preamble_gain(self):
        pre = generate_mseq(MSequenceSpec(9))
        x = pulse_shape(pre, PULSE)
        v = x.scaled(0.3 - 0.4j)
        assert preamble_gain(v, pre, PULSE, 0.0) == pytest.approx(0.3 - 0.4j, abs=1e-9)


class TestEstimator:
    def test_params_and_clone(self):
        eq = DecisionFeedbackEqualizer(Nf=10, Nb=5)
        assert clone(eq).get_params()["Nf"] == 10
        assert eq.config().Nt == 60

    def test_fit_predict(self):
        rng = np.random.default_rng(0)
        sym = random_bpsk(rng, 600)
        x = pulse_shape(sym, PULSE)
        eq = DecisionFeedbackEqualizer(fc=FC, T=T)
        assert np.array_equal(eq.fit_predict(x, sym), sym)
        assert np.array_equal(eq.predict(), sym)

    def test_predict_before_fit(self):
        with pytest.raises(InvalidArgumentError):
            DecisionFeedbackEqualizer().predict()
