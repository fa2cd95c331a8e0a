"""Signal conditioning: band-pass filtering, scout projection, annotation
epoching and Morlet time-frequency maps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import signal

from .edf import Recording, canonical_channel
from .errors import EpochTooShort, InvalidSpec, ParseError, ShapeMismatch, TooShort, UnknownChannel

log = logging.getLogger(__name__)

FWHM_TO_SIGMA = 2.355


@dataclass(frozen=True)
class FilterSpec:
    """Butterworth band-pass design.

    ``order`` is the order of the low-pass prototype handed to the
    Butterworth design, so each pass realises a band-pass of order
    ``2 * order``; forward-backward application squares the magnitude
    response.
    """

    low_hz: float = 5.0
    high_hz: float = 50.0
    order: int = 4

    def validate(self, sample_rate_hz: float):
        if not (0 < self.low_hz < self.high_hz < sample_rate_hz / 2):
            raise InvalidSpec(
                f"need 0 < low_hz < high_hz < {sample_rate_hz / 2} (Nyquist), "
                f"got {self.low_hz}..{self.high_hz}")
        if self.order < 2 or self.order % 2:
            raise InvalidSpec(f"order must be even and >= 2, got {self.order}")


@dataclass(frozen=True)
class ScoutSpec:
    name: str
    weights: Mapping[str, float]

    def __post_init__(self):
        if not self.weights:
            raise InvalidSpec(f"scout {self.name}: no channels")
        if any(w < 0 or not math.isfinite(w) for w in self.weights.values()):
            raise InvalidSpec(f"scout {self.name}: weights must be finite and non-negative")
        total = math.fsum(self.weights.values())
        if abs(total - 1.0) > 1e-6:
            raise InvalidSpec(f"scout {self.name}: weights sum to {total}, not 1")


@dataclass
class Epoch:
    samples: np.ndarray
    sample_rate_hz: float
    label: str
    source: tuple[str, str, float]  # (subject, run, onset_s)


@dataclass(frozen=True)
class MorletParams:
    center_freq_hz: float = 1.0
    fwhm_s: float = 3.0
    freqs_hz: tuple[float, ...] = tuple(float(f) for f in range(8, 31))

    def __post_init__(self):
        freqs = np.asarray(self.freqs_hz, dtype=float)
        if freqs.size == 0 or np.any(freqs <= 0):
            raise InvalidSpec("analysis frequencies must be positive")
        if np.any(np.diff(freqs) <= 0):
            raise InvalidSpec("analysis frequencies must be strictly increasing")
        if not self.fwhm_s > 0 or not self.center_freq_hz > 0:
            raise InvalidSpec("fwhm_s and center_freq_hz must be positive")

    def sigma_t(self, freq_hz: float) -> float:
        return (self.fwhm_s / FWHM_TO_SIGMA) * (self.center_freq_hz / freq_hz)


@dataclass
class TfrImage:
    power: np.ndarray            # (n_freqs, time_bins)
    freqs_hz: tuple[float, ...]
    time_bin_s: float
    edge_samples: tuple[int, ...] = ()  # per row, samples affected by zero padding


@dataclass(frozen=True)
class DspParams:
    """Everything needed to turn one window of scout signal into a network
    input. Shared by dataset construction and live inference so that both
    paths produce bit-identical images."""

    filter: FilterSpec = field(default_factory=FilterSpec)
    morlet: MorletParams = field(default_factory=MorletParams)
    time_bins: int = 64
    window_s: float = 4.0
    offset_s: float = 0.0

    def window_samples(self, sample_rate_hz: float) -> int:
        return int(round(self.window_s * sample_rate_hz))


# ---------------------------------------------------------------------------
# filtering

def bandpass(series, spec: FilterSpec, sample_rate_hz: float) -> np.ndarray:
    """Zero-phase Butterworth band-pass (forward-backward, second-order sections)."""
    spec.validate(sample_rate_hz)
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size <= 3 * spec.order:
        raise TooShort(f"series of {x.size} samples; need more than {3 * spec.order}")
    sos = _design(spec.low_hz, spec.high_hz, spec.order, float(sample_rate_hz))
    padlen = min(3 * (2 * sos.shape[0] + 1), x.size - 1)
    return signal.sosfiltfilt(sos, x, padlen=padlen)


_SOS_CACHE: dict[tuple, np.ndarray] = {}


def _design(low, high, order, fs):
    key = (low, high, order, fs)
    if key not in _SOS_CACHE:
        _SOS_CACHE[key] = signal.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")
    return _SOS_CACHE[key]


# ---------------------------------------------------------------------------
# scouts

def scout_project(rec: Recording, scout: ScoutSpec) -> np.ndarray:
    """Weighted sum of the scout's channels.

    Channels are summed in sorted canonical-name order, so the result does not
    depend on the insertion order of ``scout.weights``.
    """
    index = {}
    for i, name in enumerate(rec.channels):
        index.setdefault(canonical_channel(name), i)
    terms = []
    for name, w in scout.weights.items():
        key = canonical_channel(name)
        if key not in index:
            raise UnknownChannel(f"scout {scout.name}: channel {name!r} not in recording")
        terms.append((key, w))
    terms.sort()
    out = np.zeros(rec.n_samples)
    for key, w in terms:
        out = out + w * rec.data[index[key]]
    return out


def parse_scouts(text: str) -> dict[str, ScoutSpec]:
    scouts = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, *pairs = line.split()
        if not pairs:
            raise ParseError(f"scout {name} lists no channels", line=lineno)
        weights = {}
        for pair in pairs:
            ch, sep, w = pair.partition(":")
            try:
                weights[ch] = float(w)
            except ValueError:
                raise ParseError(f"bad channel:weight pair {pair!r}", line=lineno) from None
            if not sep:
                raise ParseError(f"bad channel:weight pair {pair!r}", line=lineno)
        total = math.fsum(weights.values())
        if total <= 0:
            raise ParseError(f"scout {name}: weights sum to {total}", line=lineno)
        if abs(total - 1.0) > 1e-6:
            log.warning("scout %s: weights sum to %g; renormalising", name, total)
        weights = {ch: w / total for ch, w in weights.items()}
        try:
            scouts[name] = ScoutSpec(name, weights)
        except InvalidSpec as exc:
            raise ParseError(str(exc), line=lineno) from None
    return scouts


def load_scouts(path=None) -> dict[str, ScoutSpec]:
    """Read a scout file; without a path, the shipped motor-cortex set."""
    if path is None:
        return parse_scouts(resources.files("mibci").joinpath("data/scouts.txt").read_text())
    return parse_scouts(Path(path).read_text())


# ---------------------------------------------------------------------------
# epoching

class EpochList(list):
    def __init__(self, items=(), skipped: int = 0):
        super().__init__(items)
        self.skipped = skipped


def epoch_by_annotations(rec: Recording, scout_series, window_s: float = 4.0,
                         offset_s: float = 0.0) -> EpochList:
    """Cut one fixed-length epoch per annotation.

    An annotation yields an epoch only if ``[onset + offset, onset + offset +
    window]`` lies inside both the recording and the annotation's own span;
    the rest are counted in ``result.skipped``.
    """
    x = np.asarray(scout_series, dtype=np.float64)
    if x.shape != (rec.n_samples,):
        raise ShapeMismatch(f"scout series has shape {x.shape}, recording has {rec.n_samples} samples")
    rate = rec.sample_rate_hz
    n = int(round(window_s * rate))
    epochs = []
    skipped = 0
    for a in rec.annotations:
        start = a.onset_s + offset_s
        i0 = int(round(start * rate))
        fits = (
            n > 0
            and offset_s >= 0
            and start + window_s <= a.end_s + 1e-9
            and i0 >= 0
            and i0 + n <= rec.n_samples
        )
        if not fits:
            skipped += 1
            continue
        epochs.append(Epoch(x[i0:i0 + n].copy(), rate, a.label,
                            (rec.subject_id, rec.run_id, a.onset_s)))
    return EpochList(epochs, skipped)


# ---------------------------------------------------------------------------
# time-frequency

def morlet_wavelet(freq_hz: float, params: MorletParams, sample_rate_hz: float) -> np.ndarray:
    """Complex Morlet wavelet sampled on ``[-3 sigma, 3 sigma]`` with unit
    discrete L2 norm (``sum |psi|**2 == 1``)."""
    sigma = params.sigma_t(freq_hz)
    half = math.ceil(3 * sigma * sample_rate_hz)
    t = np.arange(-half, half + 1) / sample_rate_hz
    psi = np.exp(-t**2 / (2 * sigma**2)) * np.exp(2j * np.pi * freq_hz * t)
    return psi / np.sqrt(np.sum(np.abs(psi) ** 2))


def mean_pool(row: np.ndarray, bins: int) -> np.ndarray:
    n = row.shape[-1]
    edges = (np.arange(bins + 1) * n) // bins
    sums = np.add.reduceat(row, edges[:-1], axis=-1)
    return sums / np.diff(edges)


def morlet_tfr(epoch, params: MorletParams, time_bins: int = 64,
               sample_rate_hz: float | None = None) -> TfrImage:
    """Power of the complex Morlet transform, mean-pooled to ``time_bins`` bins.

    ``epoch`` may be an :class:`Epoch` or a bare 1-D array (then pass
    ``sample_rate_hz``). Rows are ordered by ascending frequency.
    """
    if isinstance(epoch, Epoch):
        x, rate = epoch.samples, epoch.sample_rate_hz
    else:
        x, rate = epoch, sample_rate_hz
    if rate is None:
        raise ValueError("sample_rate_hz is required for a bare array")
    x = np.asarray(x, dtype=np.float64)
    if time_bins < 1:
        raise InvalidSpec("time_bins must be >= 1")
    longest = 2 * math.ceil(3 * params.sigma_t(params.freqs_hz[0]) * rate) + 1
    if x.size < longest or x.size < time_bins:
        raise EpochTooShort(
            f"epoch of {x.size} samples; the {params.freqs_hz[0]} Hz wavelet spans {longest}"
            f" and {time_bins} time bins are requested")
    rows = []
    edges = []
    for f in params.freqs_hz:
        psi = morlet_wavelet(f, params, rate)
        coef = np.convolve(x, psi, mode="same")
        rows.append(mean_pool(coef.real**2 + coef.imag**2, time_bins))
        edges.append((psi.size - 1) // 2)
    return TfrImage(np.vstack(rows), tuple(params.freqs_hz), x.size / (time_bins * rate),
                    tuple(edges))


# ---------------------------------------------------------------------------
# normalisation

@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_images(cls, images: Sequence[np.ndarray]) -> "NormStats":
        stack = np.stack([np.asarray(im, dtype=np.float64) for im in images])
        return cls(stack.mean(axis=(0, 2)), stack.std(axis=(0, 2)))

    @classmethod
    def identity(cls, n_rows: int) -> "NormStats":
        return cls(np.zeros(n_rows), np.ones(n_rows))


def normalize_tfr(img, stats: NormStats) -> np.ndarray:
    """Per-row standardisation; rows with non-positive std are only centred."""
    power = img.power if isinstance(img, TfrImage) else np.asarray(img, dtype=np.float64)
    mean = np.asarray(stats.mean, dtype=np.float64)
    std = np.asarray(stats.std, dtype=np.float64)
    if power.ndim != 2 or mean.shape != (power.shape[0],) or std.shape != mean.shape:
        raise ShapeMismatch(f"image {power.shape} vs stats {mean.shape}/{std.shape}")
    std = np.where(std > 0, std, 1.0)
    return (power - mean[:, None]) / std[:, None]


def window_image(samples, sample_rate_hz: float, params: DspParams) -> TfrImage:
    """Band-pass one window of scout signal and map it to a TFR image."""
    filtered = bandpass(samples, params.filter, sample_rate_hz)
    return morlet_tfr(filtered, params.morlet, params.time_bins, sample_rate_hz=sample_rate_hz)
