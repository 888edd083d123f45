import csv
import json
import math

import numpy as np
import pytest

from uwbeam.config import ExperimentConfig, load_config
from uwbeam.exceptions import InvalidArgumentError, StageError
from uwbeam.experiment import (
    RANDOMIZATION_MODEL,
    LinkResult,
    emit_results,
    frame_symbols,
    randomize_paths,
    run_monte_carlo,
    run_single_link,
    run_two_user,
)
from uwbeam.metrics import MonteCarloResult


def three_paths(slope=0.0, angle_rate=0.0):
    d = {"slope": slope}
    return [
        {"gain": 1.0, "tau0": 0.020, "theta_deg": 5.0, "drift": d, "angle_rate_deg_s": angle_rate},
        {"gain": 0.5, "tau0": 0.0221, "theta_deg": 22.0, "drift": d, "angle_rate_deg_s": angle_rate},
        {"gain": 0.35, "tau0": 0.0246, "theta_deg": -27.0, "drift": d, "angle_rate_deg_s": angle_rate},
    ]


def space(**kw):
    return ExperimentConfig.from_profile("space", seed=11, **kw)


@pytest.fixture(scope="module")
def small_cfg():
    return space(protocol={"n_periods": 2, "realizations": 3})


class TestFrame:
    def test_bpsk_frame(self):
        cfg = space()
        sym, n_pre = frame_symbols(cfg)
        assert sym.size == cfg.protocol.N_d == 40950 and n_pre == 4095
        assert np.array_equal(sym[:n_pre], sym[n_pre: 2 * n_pre])
        assert set(np.unique(sym.real)) == {-1.0, 1.0}

    def test_qpsk_frame(self):
        sym, n_pre = frame_symbols(space(), "QPSK", phase=101)
        assert np.allclose(np.abs(sym), 1.0)
        assert np.allclose(np.abs(sym.real), 1 / math.sqrt(2))

    def test_randomize_paths(self):
        cfg = space()
        a, ta = randomize_paths(cfg, np.random.default_rng(1))
        b, tb = randomize_paths(cfg, np.random.default_rng(1))
        assert a == b and ta == tb
        assert 0.0 <= ta <= cfg.channel.randomization.t_start_max_s
        for p, q in zip(a, cfg.channel.paths):
            assert abs(p.theta_deg - q.theta_deg) <= cfg.channel.randomization.angle_jitter_deg
            assert p.tau0 == q.tau0


class TestSingleLink:
    def test_oracle_static_single_path(self):
        cfg = space(beam={"angle_source": "oracle"},
                    channel={"paths": [{"gain": 1.0, "tau0": 0.02, "theta_deg": -13.0}], "snr_db": 20.0})
        r = run_single_link(cfg)
        assert r.metrics.mse_db <= -25.0
        assert r.metrics.bit_errors == 0 and r.metrics.converged
        assert r.theta_est == pytest.approx(math.radians(-13.0))

    def test_mild_drift_three_paths(self):
        r = run_single_link(space(channel={"paths": three_paths(slope=1e-5)}))
        assert r.metrics.mse_db <= -10.0
        assert r.metrics.bit_errors == 0
        assert abs(r.theta_est - math.radians(5.0)) <= math.radians(0.25)
        # intermediate products are exposed
        assert r.received is not None and r.dfe is not None and r.sync is not None
        assert r.phase_trace.size == r.symbols.size

    def test_feedback_delay_harmless_when_static(self):
        c0 = space(channel={"paths": three_paths()}, protocol={"feedback_delay_s": 0.0, "n_periods": 3})
        c3 = c0.with_updates(protocol={"feedback_delay_s": 3.0})
        assert run_single_link(c0).metrics.mse_db == run_single_link(c3).metrics.mse_db

    def test_stage_annotation(self):
        cfg = space(protocol={"n_periods": 2, "sync_threshold_db": 300.0})
        with pytest.raises(StageError) as info:
            run_single_link(cfg)
        assert info.value.stage == "sync"
        soft = run_single_link(cfg, fail_soft=True)
        assert soft.metrics.stage_error == "sync" and not soft.metrics.converged
        assert soft.metrics.bit_errors == soft.metrics.bits

    def test_beamforming_benefit(self):
        # transmit-referenced SNR so array gain appears as SNR gain
        cfg = space(channel={"paths": three_paths(slope=1e-5), "snr_db": 10.0, "snr_reference": "transmit"})
        m24 = run_single_link(cfg).metrics.mse_db
        m1 = run_single_link(cfg, M=1).metrics.mse_db
        assert m24 <= m1 - 8.0

    def test_staleness_monotone(self):
        # shorter frames keep 100 links affordable; the angle error is the same
        paths = three_paths(angle_rate=0.2)
        c0 = space(channel={"paths": paths, "snr_reference": "transmit"},
                   protocol={"feedback_delay_s": 0.0, "n_periods": 3})
        c3 = c0.with_updates(protocol={"feedback_delay_s": 3.0})
        fresh = [run_single_link(c0, seed=s, keep_traces=False).metrics.mse_db for s in range(50)]
        stale = [run_single_link(c3, seed=s, keep_traces=False).metrics.mse_db for s in range(50)]
        assert np.median(stale) >= np.median(fresh)


class TestMonteCarlo:
    def test_deterministic(self, small_cfg):
        a = run_monte_carlo(small_cfg)
        b = run_monte_carlo(small_cfg)
        assert a.K == 3
        assert [m.mse_db for m in a.metrics] == [m.mse_db for m in b.metrics]
        assert [m.bit_errors for m in a.metrics] == [m.bit_errors for m in b.metrics]

    def test_seed_changes_outcome(self, small_cfg):
        a = run_monte_carlo(small_cfg, K=1)
        b = run_monte_carlo(small_cfg.with_updates(seed=12), K=1)
        assert a.metrics[0].mse_db != b.metrics[0].mse_db

    def test_single_realization_cdf(self, small_cfg):
        r = run_monte_carlo(small_cfg, K=1)
        v, F = r.cdf
        assert list(F) == [1.0] and v[0] == r.metrics[0].mse_db

    def test_k_zero_rejected(self, small_cfg):
        with pytest.raises(InvalidArgumentError):
            run_monte_carlo(small_cfg, K=0)


class TestEmission:
    def test_files_and_manifest_round_trip(self, small_cfg, tmp_path):
        r = run_monte_carlo(small_cfg)
        paths = emit_results(r, tmp_path / "a", small_cfg, ["uwbeam", "mc"])
        names = sorted(p.split("/")[-1] for p in paths)
        assert names == ["constellation.csv", "manifest.json", "metrics.csv", "mse_cdf.csv", "pll_trace.csv"]
        rows = list(csv.reader(open(tmp_path / "a" / "mse_cdf.csv")))
        assert rows[0] == ["mse_db", "cdf"]
        F = [float(x[1]) for x in rows[1:]]
        assert F == sorted(F) and F[0] == pytest.approx(1 / 3) and F[-1] == 1.0
        mrows = list(csv.DictReader(open(tmp_path / "a" / "metrics.csv")))
        assert [int(x["realization"]) for x in mrows] == [0, 1, 2]
        man = json.load(open(tmp_path / "a" / "manifest.json"))
        assert man["master_seed"] == 11 and man["randomization_model"] == RANDOMIZATION_MODEL
        assert man["realizations"] == 3 and man["kind"] == "monte_carlo"
        # rerun from the manifest reproduces every output byte for byte
        cfg2 = load_config(tmp_path / "a" / "manifest.json")
        emit_results(run_monte_carlo(cfg2), tmp_path / "b", cfg2, ["uwbeam", "mc"])
        for name in ("mse_cdf.csv", "metrics.csv", "constellation.csv", "pll_trace.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_single_link_emission(self, small_cfg, tmp_path):
        r = run_single_link(small_cfg)
        emit_results(r, tmp_path, small_cfg)
        rows = list(csv.reader(open(tmp_path / "constellation.csv")))
        assert rows[0] == ["realization", "n", "d_hat_re", "d_hat_im"]
        assert len(rows) - 1 == r.metrics.symbols
        assert int(rows[1][1]) == small_cfg.equalizer_config().Nt

    def test_rejects_unknown_and_empty(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            emit_results(object(), tmp_path)
        with pytest.raises(InvalidArgumentError, match="empty"):
            emit_results(MonteCarloResult([], 0), tmp_path)

    def test_unwritable_directory(self, small_cfg, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        r = LinkResult(run_single_link(small_cfg, keep_traces=False).metrics)
        with pytest.raises(OSError, match="file"):
            emit_results(r, blocker / "sub", small_cfg)


class TestTwoUser:
    def test_identical_angles_rejected(self):
        cfg = space(two_user={"angles_deg": [5.0, 5.0]})
        with pytest.raises(InvalidArgumentError, match="distinct"):
            run_two_user(cfg)
