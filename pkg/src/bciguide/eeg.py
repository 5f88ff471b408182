"""Seedable 16-channel synthetic EEG with workload-modulated alpha/theta power.

Source model: one alpha and one theta oscillator with slowly wandering
envelopes, projected onto fixed scalp topographies (alpha posterior, theta
frontal), plus 16 independent pink-noise sources mixed spatially and white
sensor noise on every channel.  Raising the workload input suppresses the
alpha amplitude and boosts the theta amplitude, which is the pattern the
classification pipeline has to learn.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import ConfigurationError

DEFAULT_CHANNEL_NAMES = (
    "Fp1", "Fp2", "F7", "F8", "T7", "T8", "F3", "F4",
    "C3", "C4", "P3", "P4", "O1", "O2", "Pz", "Cz",
)
N_CHANNELS = 16

# Relative projection weight of each rhythm onto the scalp channels.
_ALPHA_TOPO = {"P3": 1.0, "P4": 1.0, "O1": 1.0, "O2": 1.0, "Pz": 1.0, "C3": 0.3, "C4": 0.3}
_THETA_TOPO = {"Fp1": 1.0, "Fp2": 1.0, "F3": 1.0, "F4": 1.0, "Cz": 1.0, "F7": 0.3, "F8": 0.3}
_TOPO_FLOOR = 0.05

# 3rd-order recursive 1/f ("pinking") approximation, driven by white noise.
_PINK_B = np.array([0.049922035, -0.095993537, 0.050612699, -0.004408786])
_PINK_A = np.array([1.0, -2.494956002, 2.017265875, -0.522189400])

# Oscillator envelope wander: OU process around 1.0, clamped at 0.
_ENV_SD = 0.25
_ENV_TAU = 0.4


@dataclass(frozen=True)
class ChannelLayout:
    """Ordered channel names and the sampling rate they are recorded at."""

    names: tuple = DEFAULT_CHANNEL_NAMES
    sample_rate: float = 512.0

    def __post_init__(self):
        if len(self.names) != N_CHANNELS or len(set(self.names)) != N_CHANNELS:
            raise ConfigurationError("layout requires exactly 16 distinct channel names")
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"unknown channel {name!r}; expected one of {self.names}") from None


DEFAULT_LAYOUT = ChannelLayout()


@dataclass
class SynthConfig:
    """Generator parameters.  Amplitudes in microvolts."""

    seed: int = 0
    alpha_center: float = 10.0
    theta_center: float = 6.0
    alpha_base_amp: float = 10.0
    theta_base_amp: float = 6.0
    alpha_suppression_gain: float = 0.5
    theta_boost_gain: float = 0.8
    pink_noise_amp: float = 4.0
    white_noise_amp: float = 1.0
    mixing: np.ndarray | None = field(default=None, repr=False)

    def validate(self, layout: ChannelLayout = DEFAULT_LAYOUT) -> None:
        amps = (self.alpha_base_amp, self.theta_base_amp, self.pink_noise_amp, self.white_noise_amp)
        if not all(np.isfinite(a) and a >= 0 for a in amps):
            raise ConfigurationError("amplitudes must be finite and >= 0")
        if not 0.0 <= self.alpha_suppression_gain <= 1.0:
            raise ConfigurationError("alpha_suppression_gain must be in [0, 1]")
        if not 0.0 <= self.theta_boost_gain <= 2.0:
            raise ConfigurationError("theta_boost_gain must be in [0, 2]")
        nyq = layout.sample_rate / 2.0
        if not (0.0 < self.theta_center < nyq and 0.0 < self.alpha_center < nyq):
            raise ConfigurationError("oscillator centers must lie inside (0, Nyquist)")
        if self.mixing is not None:
            m = np.asarray(self.mixing, dtype=float)
            if m.shape != (N_CHANNELS, N_CHANNELS) or not np.all(np.isfinite(m)):
                raise ConfigurationError("mixing must be a finite 16x16 matrix")
            if np.linalg.matrix_rank(m) < N_CHANNELS:
                raise ConfigurationError("mixing matrix must be full rank")

    def mixing_matrix(self) -> np.ndarray:
        if self.mixing is None:
            return np.eye(N_CHANNELS)
        return np.asarray(self.mixing, dtype=float)

    def to_dict(self) -> dict:
        d = {
            "seed": int(self.seed),
            "alpha_center": self.alpha_center,
            "theta_center": self.theta_center,
            "alpha_base_amp": self.alpha_base_amp,
            "theta_base_amp": self.theta_base_amp,
            "alpha_suppression_gain": self.alpha_suppression_gain,
            "theta_boost_gain": self.theta_boost_gain,
            "pink_noise_amp": self.pink_noise_amp,
            "white_noise_amp": self.white_noise_amp,
            "mixing": None if self.mixing is None else np.asarray(self.mixing).tolist(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if d.get("mixing") is not None:
            d["mixing"] = np.asarray(d["mixing"], dtype=float)
        return cls(**d)


@dataclass
class EegBlock:
    """A contiguous chunk of multichannel samples, in microvolts."""

    start_time: float
    samples: np.ndarray  # channels x n
    layout: ChannelLayout = DEFAULT_LAYOUT

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[0] != len(self.layout.names):
            raise ValueError("samples must be a channels x n matrix matching the layout")
        if self.samples.shape[1] < 1:
            raise ValueError("block must contain at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("block contains non-finite samples")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.layout.sample_rate

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration


def _topo_vector(layout: ChannelLayout, weights: dict) -> np.ndarray:
    return np.array([weights.get(name, _TOPO_FLOOR) for name in layout.names])


def _ar1_stream(rng, n, a, gain, state):
    """Advance a first-order autoregressive process by n samples.

    state is a length-1 array holding the previous output; updated in place.
    """
    xi = rng.standard_normal(n)
    zi = np.array([a * state[0]])
    y, zf = signal.lfilter([gain], [1.0, -a], xi, zi=zi)
    state[0] = y[-1]
    return y


class EegSynthesizer:
    """Streaming generator; single-owner state advanced by step()."""

    def __init__(self, config: SynthConfig, layout: ChannelLayout = DEFAULT_LAYOUT):
        config.validate(layout)
        self.config = config
        self.layout = layout
        self.fs = layout.sample_rate
        self._mixing = config.mixing_matrix()
        self._alpha_topo = _topo_vector(layout, _ALPHA_TOPO)
        self._theta_topo = _topo_vector(layout, _THETA_TOPO)

        ss = np.random.SeedSequence(int(config.seed) & (2**63 - 1))
        kids = ss.spawn(5)
        init_rng = np.random.default_rng(kids[0])
        self._env_alpha_rng = np.random.default_rng(kids[1])
        self._env_theta_rng = np.random.default_rng(kids[2])
        self._pink_rng = np.random.default_rng(kids[3])
        self._white_rng = np.random.default_rng(kids[4])

        self._phase = init_rng.uniform(0.0, 2.0 * np.pi, size=2)  # alpha, theta
        self._env_a = np.exp(-1.0 / (self.fs * _ENV_TAU))
        self._env_gain = _ENV_SD * np.sqrt(1.0 - self._env_a**2)
        self._env_state = np.zeros(2)  # deviation from 1.0
        self._pink_zi = np.zeros((N_CHANNELS, len(_PINK_A) - 1))
        # Scale so a unit-variance white input yields unit output RMS.
        h = signal.lfilter(_PINK_B, _PINK_A, np.r_[1.0, np.zeros(8191)])
        self._pink_norm = 1.0 / np.sqrt(np.sum(h**2))
        self._samples_emitted = 0
        self._prev_workload: float | None = None

    def step(self, workload: float, n_samples: int) -> EegBlock:
        """Generate the next n_samples with the given workload level in [0, 1].

        The modulation depth ramps per-sample from the previous call's
        workload to the new one, so block boundaries are smooth.
        """
        if not np.isfinite(workload) or not 0.0 <= workload <= 1.0:
            raise ValueError(f"workload must be in [0, 1], got {workload}")
        n = int(n_samples)
        if n < 1:
            raise ValueError("n_samples must be >= 1")
        cfg = self.config

        prev = workload if self._prev_workload is None else self._prev_workload
        w = prev + (workload - prev) * (np.arange(1, n + 1) / n)
        self._prev_workload = float(workload)

        t_idx = np.arange(1, n + 1)
        out = np.zeros((N_CHANNELS, n))
        for osc, (center, topo) in enumerate(
            ((cfg.alpha_center, self._alpha_topo), (cfg.theta_center, self._theta_topo))
        ):
            phase = self._phase[osc] + 2.0 * np.pi * center * t_idx / self.fs
            rng = self._env_alpha_rng if osc == 0 else self._env_theta_rng
            env = 1.0 + _ar1_stream(rng, n, self._env_a, self._env_gain,
                                    self._env_state[osc:osc + 1])
            env = np.maximum(env, 0.0)
            if osc == 0:
                amp = cfg.alpha_base_amp * (1.0 - cfg.alpha_suppression_gain * w)
            else:
                amp = cfg.theta_base_amp * (1.0 + cfg.theta_boost_gain * w)
            out += np.outer(topo, amp * env * np.sin(phase))
            self._phase[osc] = np.fmod(phase[-1], 2.0 * np.pi)

        if cfg.pink_noise_amp > 0:
            white = self._pink_rng.standard_normal((n, N_CHANNELS)).T
            pink, self._pink_zi = signal.lfilter(
                _PINK_B, _PINK_A, white, axis=1, zi=self._pink_zi)
            out += cfg.pink_noise_amp * self._pink_norm * (self._mixing @ pink)
        if cfg.white_noise_amp > 0:
            out += cfg.white_noise_amp * self._white_rng.standard_normal((n, N_CHANNELS)).T

        start = self._samples_emitted / self.fs
        self._samples_emitted += n
        return EegBlock(start_time=start, samples=out, layout=self.layout)

    def run(self, workloads, block_samples) -> EegBlock:
        """Generate successive blocks and return them concatenated."""
        chunks = [self.step(w, n) for w, n in zip(workloads, block_samples)]
        samples = np.concatenate([c.samples for c in chunks], axis=1)
        return EegBlock(chunks[0].start_time, samples, self.layout)


def band_power(block: EegBlock, band, channel: str) -> float:
    """Average power (uV^2) of one channel inside [low, high] Hz.

    Integrates the periodogram over the band; a pure sine of amplitude a
    inside the band yields approximately a^2 / 2.
    """
    low, high = float(band[0]), float(band[1])
    fs = block.layout.sample_rate
    if not (0.0 < low < high < fs / 2.0):
        raise ValueError(f"band must lie inside (0, {fs / 2}), got {band}")
    row = block.layout.index(channel)
    freqs, psd = signal.periodogram(block.samples[row], fs=fs, detrend=False)
    mask = (freqs >= low) & (freqs <= high)
    if not np.any(mask):
        return 0.0
    df = freqs[1] - freqs[0]
    return float(np.sum(psd[mask]) * df)
