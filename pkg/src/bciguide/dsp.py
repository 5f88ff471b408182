"""Streaming band-pass filter bank and sliding-window segmentation.

Eight 4 Hz-wide recursive band-pass filters centered on the integer
frequencies 5..12 Hz, applied causally with per-channel state so that
chunked streaming equals whole-signal filtering exactly.  Windows of 1 s
slide by 0.1 s; at 512 Hz the hop alternates between 51 and 52 samples on
a fixed pattern that realigns with the sample grid every second.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal

from .errors import ConfigurationError
from .eeg import EegBlock

DEFAULT_BAND_CENTERS = tuple(range(5, 13))


class DesignError(ConfigurationError):
    """Requested filter band cannot be realized at this sample rate."""


@dataclass(frozen=True)
class BandSpec:
    center: float
    bandwidth: float = 4.0

    @property
    def low(self) -> float:
        return self.center - self.bandwidth / 2.0

    @property
    def high(self) -> float:
        return self.center + self.bandwidth / 2.0


def design_bandpass(center: float, bandwidth: float = 4.0, order: int = 4, fs: float = 512.0):
    """Butterworth band-pass coefficients (b, a) for the given band.

    The -3 dB points fall on the band edges by construction; all poles lie
    inside the unit circle.
    """
    band = BandSpec(center, bandwidth)
    if band.low <= 0 or band.high >= fs / 2.0:
        raise DesignError(
            f"band [{band.low}, {band.high}] Hz outside (0, {fs / 2}) at fs={fs}")
    b, a = signal.butter(order, [band.low, band.high], btype="bandpass", fs=fs)
    if np.max(np.abs(np.roots(a))) >= 1.0:
        raise DesignError(f"unstable design for center={center}, order={order}")
    return b, a


def design_bandpass_sos(center: float, bandwidth: float = 4.0, order: int = 4,
                        fs: float = 512.0) -> np.ndarray:
    """Same band as design_bandpass, in cascaded-biquad form.

    Second-order sections keep rounding error orders of magnitude below the
    transfer-function form for these narrow low-frequency bands.
    """
    band = BandSpec(center, bandwidth)
    if band.low <= 0 or band.high >= fs / 2.0:
        raise DesignError(
            f"band [{band.low}, {band.high}] Hz outside (0, {fs / 2}) at fs={fs}")
    return signal.butter(order, [band.low, band.high], btype="bandpass", fs=fs, output="sos")


@dataclass(frozen=True)
class WindowSpec:
    length: float = 1.0
    overlap: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.overlap < self.length:
            raise ConfigurationError("require 0 <= overlap < length")

    @property
    def hop(self) -> float:
        return self.length - self.overlap

    def grid(self, fs: float) -> tuple[int, Fraction]:
        """(window length in samples, hop in samples as an exact fraction).

        The hop fraction must realign with the sample grid within at most
        16 hops so the emission pattern is periodic and exact.
        """
        win = round(self.length * fs)
        hop = Fraction(round(self.hop * fs * 720720), 720720)  # 720720 = lcm(1..16)
        hop = hop.limit_denominator(16)
        if hop <= 0 or abs(float(hop) - self.hop * fs) > 1e-6:
            raise ConfigurationError(
                f"hop {self.hop}s does not align with the sample grid at fs={fs}")
        return win, hop


class FilterBank:
    """Per-band, per-channel causal filtering with persistent state."""

    def __init__(self, fs: float = 512.0, centers=DEFAULT_BAND_CENTERS,
                 bandwidth: float = 4.0, order: int = 4, n_channels: int = 16,
                 sos_list=None):
        self.fs = fs
        self.order = order
        self.bands = tuple(BandSpec(c, bandwidth) for c in centers)
        self.n_channels = n_channels
        if sos_list is None:
            sos_list = [design_bandpass_sos(c, bandwidth, order, fs) for c in centers]
        self.sos_list = [np.asarray(s, dtype=float) for s in sos_list]
        self._zi = None
        self.reset()

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    def reset(self) -> None:
        self._zi = [np.zeros((sos.shape[0], self.n_channels, 2)) for sos in self.sos_list]

    def apply(self, block) -> list:
        """Filter one chunk through every band; returns 8 channels x n arrays."""
        x = block.samples if isinstance(block, EegBlock) else np.asarray(block, dtype=float)
        if x.ndim != 2 or x.shape[0] != self.n_channels:
            raise ValueError(
                f"expected {self.n_channels} channels, got shape {x.shape}")
        out = []
        for i, sos in enumerate(self.sos_list):
            y, self._zi[i] = signal.sosfilt(sos, x, axis=1, zi=self._zi[i])
            out.append(y)
        return out


@dataclass
class Window:
    """One trailing-1 s view of the band-filtered stream."""

    ordinal: int                 # 0-based emission index
    end_sample: int              # absolute sample index just past the window
    bands: list                  # n_bands arrays of channels x win_samples
    end_time: float              # logical time = length + ordinal * hop


class SlidingWindower:
    """Emits fixed-length windows on the exact fractional-hop sample grid.

    Window k covers samples [round(k*hop), round(k*hop) + win); at the
    512 Hz default this is the 51/52-sample alternation that sums to 512
    samples per second.
    """

    def __init__(self, spec: WindowSpec = WindowSpec(), fs: float = 512.0, n_bands: int = 8):
        self.spec = spec
        self.fs = fs
        self.n_bands = n_bands
        self.win, self.hop = spec.grid(fs)
        self._bufs = [[] for _ in range(n_bands)]
        self._buffered = 0       # samples currently held per band
        self._base = 0           # absolute index of first buffered sample
        self._next_k = 0

    def start_of(self, k: int) -> int:
        # round(k * hop) with exact rational arithmetic, ties toward +inf
        num = 2 * k * self.hop.numerator + self.hop.denominator
        return num // (2 * self.hop.denominator)

    def count_for_length(self, n_samples: int) -> int:
        """How many windows a stream of n_samples yields in total."""
        if n_samples < self.win:
            return 0
        k = 0
        while self.start_of(k + 1) + self.win <= n_samples:
            k += 1
        return k + 1

    def push(self, bands: list) -> list:
        """Append one multi-band chunk; return all newly complete windows."""
        if len(bands) != self.n_bands:
            raise ValueError(f"expected {self.n_bands} band arrays")
        n = bands[0].shape[1]
        for i, arr in enumerate(bands):
            self._bufs[i].append(np.asarray(arr, dtype=float))
        self._buffered += n

        out = []
        while True:
            start = self.start_of(self._next_k)
            end = start + self.win
            if end > self._base + self._buffered:
                break
            self._compact(start)
            joined = [np.concatenate(buf, axis=1) if len(buf) > 1 else buf[0]
                      for buf in self._bufs]
            self._bufs = [[j] for j in joined]
            lo = start - self._base
            views = [j[:, lo:lo + self.win].copy() for j in joined]
            k = self._next_k
            out.append(Window(
                ordinal=k,
                end_sample=end,
                bands=views,
                end_time=self.spec.length + k * self.spec.hop,
            ))
            self._next_k += 1
        return out

    def _compact(self, keep_from: int) -> None:
        drop = keep_from - self._base
        if drop <= 0:
            return
        for i in range(self.n_bands):
            joined = np.concatenate(self._bufs[i], axis=1) if len(self._bufs[i]) > 1 else self._bufs[i][0]
            self._bufs[i] = [joined[:, drop:]]
        self._base += drop
        self._buffered -= drop


def window_stream(bands_chunks, spec: WindowSpec = WindowSpec(), fs: float = 512.0):
    """Run a sequence of multi-band chunks through a fresh windower."""
    windower = None
    for chunk in bands_chunks:
        if windower is None:
            windower = SlidingWindower(spec, fs, n_bands=len(chunk))
        yield from windower.push(chunk)
