"""
Experiment configuration: named system profiles, JSON loading with strict key
checking, and conversion to the library's domain objects.

Angles are degrees in configuration files and radians everywhere else.
"""

from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
import json
import math

import numpy as np

from .beamformer import ArrayGeometry
from .channel import ChannelSpec, DriftLaw, PathSpec
from .dsp import PulseSpec
from .exceptions import InvalidArgumentError
from .receiver import EqualizerConfig

__all__ = [
    "FS_DEFAULT",
    "PROFILES",
    "SystemConfig",
    "PulseConfig",
    "DriftConfig",
    "PathConfig",
    "RandomizationConfig",
    "ChannelConfig",
    "EqualizerSection",
    "BeamConfig",
    "ProtocolConfig",
    "TwoUserConfig",
    "ExperimentConfig",
    "default_paths",
    "load_config",
]

FS_DEFAULT = 1e7 / 256


@dataclass
class SystemConfig:
    """Carrier, simulator rate, samples per symbol and array geometry."""

    fc: float = 12500.0
    fs: float = FS_DEFAULT
    Ns: int = 6
    M: int = 24
    delta: float = 0.05
    c: float = 1500.0

    @property
    def T(self):
        return self.Ns / self.fs

    @property
    def R(self):
        return self.fs / self.Ns

    @property
    def geometry(self):
        return ArrayGeometry(self.M, self.delta, self.c)


@dataclass
class PulseConfig:
    alpha_rc: float = 0.25
    span_symbols: int = 16


@dataclass
class DriftConfig:
    """Delay drift law; ``sin_amplitude`` in seconds, frequency in Hz."""

    slope: float = 0.0
    sin_amplitude: float = 0.0
    sin_frequency: float = 0.0
    sin_phase: float = 0.0


@dataclass
class PathConfig:
    gain: float = 1.0
    tau0: float = 0.0
    theta_deg: float = 0.0
    drift: DriftConfig = field(default_factory=DriftConfig)
    angle_rate_deg_s: float = 0.0


@dataclass
class RandomizationConfig:
    """Per-realization perturbations standing in for a random start time.

    ``t_start_max_s`` draws the absolute start of the probe uniformly in
    ``[0, t_start_max_s]``; drift phases are redrawn when
    ``random_drift_phase``; every path gain is scaled by a log-normal factor
    with ``gain_jitter_db`` spread; slopes get Gaussian jitter and angles a
    uniform offset of up to ``angle_jitter_deg``.
    """

    t_start_max_s: float = 60.0
    random_drift_phase: bool = True
    gain_jitter_db: float = 1.0
    slope_jitter: float = 2e-6
    angle_jitter_deg: float = 1.0


@dataclass
class ChannelConfig:
    """Paths (default: the profile's 3-path geometry) and noise level.

    ``snr_reference`` is ``"received"`` (noise against the measured received
    power) or ``"transmit"`` (noise against the power a single element
    would deliver through all paths, so array gain shows up as SNR gain).
    """

    paths: list = None
    snr_db: float = 20.0
    snr_reference: str = "received"
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)


@dataclass
class EqualizerSection:
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


@dataclass
class BeamConfig:
    """Beam design and angle acquisition.

    ``angle_source`` is ``"oracle"`` (true principal angle at probe time)
    or ``"estimated"`` (uplink probe and delay-angle map).
    """

    L: int = 4096
    angle_source: str = "estimated"
    probe_degree: int = 9
    probe_periods: int = 4
    angle_step_deg: float = 0.25
    angle_min_deg: float = -60.0
    angle_max_deg: float = 60.0
    probe_snr_db: float = 10.0


@dataclass
class ProtocolConfig:
    """Frame layout and run control.

    A frame is ``n_periods`` back-to-back copies of a degree
    ``mseq_degree`` m-sequence; the first copy doubles as the preamble.
    """

    mseq_degree: int = 12
    n_periods: int = 10
    feedback_delay_s: float = 3.0
    realizations: int = 1000
    mse_floor_db: float = -60.0
    doppler_max: float = 1.5e-3
    doppler_step: float = 2.5e-5
    sync_threshold_db: float = 15.0
    front_end_filter: bool = True

    @property
    def N_d(self):
        return self.n_periods * (2 ** self.mseq_degree - 1)


@dataclass
class TwoUserConfig:
    """Two simultaneous users served by null-steered beams.

    ``speeds_mps`` are range rates (positive = receding); ``sir_db`` is the
    transmit power ratio of user 1's stream over user 2's.
    """

    angles_deg: list = field(default_factory=lambda: [-8.7, 8.0])
    sir_db: float = 0.0
    speeds_mps: list = field(default_factory=lambda: [1.0, -1.0])
    constellations: list = field(default_factory=lambda: ["BPSK", "QPSK"])
    nulls: bool = True
    snr_db: float = 30.0
    max_symbol_offset: int = 64
    secondary_gain: float = 0.2


PROFILES = {
    "space": {
        "system": {"fc": 12500.0, "fs": FS_DEFAULT, "Ns": 6, "M": 24, "delta": 0.05, "c": 1500.0},
        "equalizer": {"Nf": 20, "Nb": 20, "Kf1": 1e-4, "lam": 0.995},
        "protocol": {"mseq_degree": 12, "n_periods": 10},
    },
    "mace": {
        "system": {"fc": 13000.0, "fs": FS_DEFAULT, "Ns": 8, "M": 12, "delta": 0.12, "c": 1500.0},
        "equalizer": {"Nf": 15, "Nb": 8, "Kf1": 0.01, "lam": 0.995},
        "protocol": {"mseq_degree": 11, "n_periods": 10},
    },
}


def default_paths(profile):
    """Three-path geometry: direct path plus weaker surface and bottom bounces."""
    base = [
        PathConfig(1.0, 0.020, 5.0, DriftConfig(1e-5, 0.0, 0.0, 0.0)),
        PathConfig(0.5, 0.0221, 22.0, DriftConfig(1e-5, 1e-5, 0.3, 0.0)),
        PathConfig(0.35, 0.0246, -27.0, DriftConfig(1e-5, 0.0, 0.0, 0.0)),
    ]
    return base


_NESTED = {
    "system": SystemConfig,
    "pulse": PulseConfig,
    "channel": ChannelConfig,
    "equalizer": EqualizerSection,
    "beam": BeamConfig,
    "protocol": ProtocolConfig,
    "two_user": TwoUserConfig,
}


@dataclass
class ExperimentConfig:
    """Complete description of an experiment.

    Build one with :meth:`from_profile` or :meth:`from_dict`; every section
    mirrors the JSON layout key for key.
    """

    profile: str = "space"
    seed: int = 0
    system: SystemConfig = field(default_factory=SystemConfig)
    pulse: PulseConfig = field(default_factory=PulseConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    equalizer: EqualizerSection = field(default_factory=EqualizerSection)
    beam: BeamConfig = field(default_factory=BeamConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    two_user: TwoUserConfig = field(default_factory=TwoUserConfig)

    def __post_init__(self):
        if self.channel.paths is None:
            self.channel.paths = default_paths(self.profile)
        self.validate()

    # --- construction ---------------------------------------------------

    @classmethod
    def from_profile(cls, name="space", **overrides):
        """Named profile with optional nested overrides, e.g. ``equalizer={"Nf": 10}``."""
        return cls.from_dict({"profile": name, **overrides})

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise InvalidArgumentError("configuration must be a JSON object")
        _reject_unknown(d, cls, "config")
        profile = str(d.get("profile", "space")).lower()
        if profile not in ("space", "mace", "custom"):
            raise InvalidArgumentError(f"profile must be space, mace or custom, got {profile!r}")
        merged = {}
        if profile in PROFILES:
            for k, v in PROFILES[profile].items():
                merged[k] = dict(v)
        kwargs = {"profile": profile, "seed": int(d.get("seed", 0))}
        for key, klass in _NESTED.items():
            sec = dict(merged.get(key, {}))
            user = d.get(key, {})
            if user is None:
                user = {}
            if not isinstance(user, dict):
                raise InvalidArgumentError(f"section {key!r} must be an object")
            _reject_unknown(user, klass, key)
            sec.update(user)
            kwargs[key] = _build(klass, sec, key)
        if profile == "custom" and "system" not in d:
            raise InvalidArgumentError("profile 'custom' needs an explicit system section")
        return cls(**kwargs)

    def to_dict(self):
        return _plain(asdict(self))

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, **kw)

    def replace(self, **sections):
        """Copy with whole sections or top-level fields replaced."""
        return replace(self, **sections)

    def with_updates(self, **updates):
        """Copy with per-section field updates: ``with_updates(channel={"snr_db": 10})``."""
        d = self.to_dict()
        for k, v in updates.items():
            if isinstance(v, dict) and isinstance(d.get(k), dict):
                d[k].update(v)
            else:
                d[k] = v
        return ExperimentConfig.from_dict(d)

    # --- validation -----------------------------------------------------

    def validate(self):
        s = self.system
        for name in ("fc", "fs", "delta", "c"):
            if not getattr(s, name) > 0:
                raise InvalidArgumentError(f"system.{name} must be positive")
        if self.profile in PROFILES:
            ref = PROFILES[self.profile]["system"]
            for k, v in ref.items():
                if not math.isclose(getattr(s, k), v, rel_tol=1e-12):
                    raise InvalidArgumentError(
                        f"profile {self.profile!r} fixes system.{k} = {v}; use profile 'custom' to change it")
        if self.channel.snr_reference not in ("received", "transmit"):
            raise InvalidArgumentError("channel.snr_reference must be 'received' or 'transmit'")
        if self.beam.angle_source not in ("oracle", "estimated"):
            raise InvalidArgumentError("beam.angle_source must be 'oracle' or 'estimated'")
        if self.protocol.realizations < 1:
            raise InvalidArgumentError("protocol.realizations must be >= 1")
        if self.protocol.feedback_delay_s < 0:
            raise InvalidArgumentError("protocol.feedback_delay_s must be >= 0")
        self.equalizer_config()
        self.pulse_spec()
        return self

    # --- domain objects -------------------------------------------------

    def pulse_spec(self):
        return PulseSpec(self.system.T, self.system.Ns, self.pulse.alpha_rc, self.pulse.span_symbols)

    def equalizer_config(self, **overrides):
        e = asdict(self.equalizer)
        e.update(overrides)
        return EqualizerConfig(**e)

    def channel_spec(self, paths=None, snr_db=None, seed=None, noise_reference_power=None, M=None):
        """ChannelSpec from path configs (radians inside)."""
        paths = self.channel.paths if paths is None else paths
        geom = self.system.geometry if M is None else ArrayGeometry(M, self.system.delta, self.system.c)
        specs = tuple(path_spec(p) for p in paths)
        return ChannelSpec(specs, geom, self.system.fc,
                           self.channel.snr_db if snr_db is None else snr_db, seed,
                           noise_reference_power)


def path_spec(p):
    d = p.drift
    return PathSpec(float(p.gain), float(p.tau0), math.radians(p.theta_deg),
                    DriftLaw(d.slope, d.sin_amplitude, d.sin_frequency, d.sin_phase),
                    math.radians(p.angle_rate_deg_s))


def _reject_unknown(d, klass, where):
    names = {f.name for f in fields(klass)}
    extra = sorted(set(d) - names)
    if extra:
        raise InvalidArgumentError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _build(klass, d, where):
    _reject_unknown(d, klass, where)
    kw = {}
    for f in fields(klass):
        if f.name not in d:
            continue
        v = d[f.name]
        if klass is ChannelConfig and f.name == "paths" and v is not None:
            v = [p if isinstance(p, PathConfig) else _build_path(p, f"{where}.paths[{i}]")
                 for i, p in enumerate(v)]
        elif klass is ChannelConfig and f.name == "randomization" and isinstance(v, dict):
            v = _build(RandomizationConfig, v, f"{where}.randomization")
        kw[f.name] = v
    return klass(**kw)


def _build_path(d, where):
    if not isinstance(d, dict):
        raise InvalidArgumentError(f"{where} must be an object")
    _reject_unknown(d, PathConfig, where)
    d = dict(d)
    if isinstance(d.get("drift"), dict):
        d["drift"] = _build(DriftConfig, d["drift"], where + ".drift")
    return PathConfig(**d)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if is_dataclass(obj):
        return _plain(asdict(obj))
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def load_config(path):
    """Read a JSON config, or the config embedded in a run manifest."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path} is not valid JSON: {exc}") from exc
    if isinstance(d, dict) and "manifest_version" in d:
        d = d["config"]
    return ExperimentConfig.from_dict(d)
