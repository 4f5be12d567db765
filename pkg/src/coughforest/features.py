"""Spectral feature families and the fused 193-dimensional clip descriptor.

Block layout of the fused vector (in order)::

    mfcc      40
    chroma    12
    mel      128
    contrast   7
    tonnetz    6

Each block is the arithmetic mean of the per-frame feature over the clip.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct

from .audio import HOP_LENGTH, N_FFT, SAMPLE_RATE, power_spectrogram, resample
from .errors import ConfigurationError, InvalidSignalError

N_MELS = 128
N_MFCC = 40
N_CHROMA = 12
N_CONTRAST_BANDS = 6
CONTRAST_FMIN = 200.0
CONTRAST_ALPHA = 0.02
DB_FLOOR = 1e-10
LOG_FLOOR = 1e-10
TONNETZ_RADII = (1.0, 1.0, 0.5)

BLOCKS = (("mfcc", 40), ("chroma", 12), ("mel", 128), ("contrast", 7), ("tonnetz", 6))
N_FEATURES = sum(width for _, width in BLOCKS)


def _block_slices():
    out, start = {}, 0
    for name, width in BLOCKS:
        out[name] = slice(start, start + width)
        start += width
    return out


BLOCK_SLICES = _block_slices()


def mel_scale(f):
    """Hz to mel, ``2595 * log10(1 + f / 700)``. Accepts scalars or arrays."""
    f_arr = np.asarray(f, dtype=np.float64)
    if np.any(f_arr < 0):
        raise ConfigurationError("frequency must be non-negative")
    out = 2595.0 * np.log10(1.0 + f_arr / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


@dataclass(frozen=True, eq=False)
class MelFilterBank:
    weights: np.ndarray
    n_mels: int
    f_min: float
    f_max: float
    sample_rate: int
    n_fft: int

    @property
    def center_frequencies(self):
        return mel_to_hz(np.linspace(mel_scale(self.f_min), mel_scale(self.f_max),
                                     self.n_mels + 2))[1:-1]


@lru_cache(maxsize=16)
def _triangles(sample_rate, n_fft, n_mels, f_min, f_max):
    freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    edges = mel_to_hz(np.linspace(mel_scale(f_min), mel_scale(f_max), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    w = np.maximum(0.0, np.minimum(rising, falling))
    w.setflags(write=False)
    return w


def mel_filter_bank(sample_rate=SAMPLE_RATE, n_fft=N_FFT, n_mels=N_MELS,
                    f_min=0.0, f_max=None):
    """Unit-peak triangular filters with centers equally spaced in mel."""
    if f_max is None:
        f_max = sample_rate / 2.0
    if not 0 <= f_min < f_max <= sample_rate / 2.0:
        raise ConfigurationError(f"invalid mel range [{f_min}, {f_max}]")
    w = _triangles(int(sample_rate), int(n_fft), int(n_mels), float(f_min), float(f_max))
    return MelFilterBank(w, int(n_mels), float(f_min), float(f_max),
                         int(sample_rate), int(n_fft))


def power_to_db(power, ref=None):
    """``10 log10(max(x, floor))`` relative to ``ref`` (default: the array maximum)."""
    power = np.asarray(power, dtype=np.float64)
    if ref is None:
        ref = power.max() if power.size else 0.0
    return 10.0 * np.log10(np.maximum(power, DB_FLOOR)) - 10.0 * np.log10(max(ref, DB_FLOOR))


def mel_spectrogram(spec, bank=None):
    """Log mel spectrogram in dB, referenced to the clip maximum."""
    if bank is None:
        bank = mel_filter_bank(spec.sample_rate, spec.n_fft)
    if bank.weights.shape[1] != spec.n_bins or bank.sample_rate != spec.sample_rate:
        raise ConfigurationError(
            f"filter bank {bank.weights.shape} (sr {bank.sample_rate}) does not match "
            f"spectrogram with {spec.n_bins} bins (sr {spec.sample_rate})"
        )
    return power_to_db(bank.weights @ spec.frames)


def mfcc(mel_db, n_mfcc=N_MFCC):
    """Orthonormal DCT-II over the band axis, first ``n_mfcc`` coefficients."""
    mel_db = np.asarray(mel_db, dtype=np.float64)
    if mel_db.ndim != 2 or mel_db.shape[0] < n_mfcc:
        raise ConfigurationError(
            f"need at least {n_mfcc} mel bands, got shape {mel_db.shape}"
        )
    return dct(mel_db, type=2, norm="ortho", axis=0)[:n_mfcc]


@lru_cache(maxsize=16)
def _pitch_class_map(sample_rate, n_fft, tuning):
    freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    mapping = np.zeros((N_CHROMA, freqs.size))
    f = freqs[1:]  # DC has no pitch
    midi = 69.0 + 12.0 * np.log2(f / tuning)
    pc = np.mod(np.rint(midi).astype(np.int64), 12)
    mapping[pc, np.arange(1, freqs.size)] = 1.0
    mapping.setflags(write=False)
    return mapping


def pitch_class_map(sample_rate, n_fft, tuning=440.0):
    """0/1 matrix assigning every non-DC FFT bin to its nearest pitch class (C = 0)."""
    return _pitch_class_map(int(sample_rate), int(n_fft), float(tuning))


def chromagram(spec, tuning=440.0):
    """12-bin chroma, each frame scaled so its maximum is 1 (silent frames stay 0)."""
    energy = pitch_class_map(spec.sample_rate, spec.n_fft, tuning) @ spec.frames
    peak = energy.max(axis=0)
    safe = np.where(peak > 0, peak, 1.0)
    return energy / safe


def tonnetz_matrix(radii=TONNETZ_RADII):
    """The 6 x 12 tonal-centroid projection (fifths, minor thirds, major thirds)."""
    r1, r2, r3 = radii
    l = np.arange(N_CHROMA)
    return np.array([
        r1 * np.sin(l * 7 * np.pi / 6),
        r1 * np.cos(l * 7 * np.pi / 6),
        r2 * np.sin(l * 3 * np.pi / 2),
        r2 * np.cos(l * 3 * np.pi / 2),
        r3 * np.sin(l * 2 * np.pi / 3),
        r3 * np.cos(l * 2 * np.pi / 3),
    ])


def tonnetz(chroma):
    """Project L1-normalized chroma columns onto the 6-D tonal centroid space."""
    chroma = np.asarray(chroma, dtype=np.float64)
    if chroma.ndim != 2 or chroma.shape[0] != N_CHROMA:
        raise ConfigurationError(f"chroma must have 12 rows, got shape {chroma.shape}")
    if np.any(chroma < 0):
        raise ConfigurationError("chroma entries must be non-negative")
    l1 = chroma.sum(axis=0)
    safe = np.where(l1 > 0, l1, 1.0)
    return (tonnetz_matrix() @ chroma) / safe


def contrast_band_edges(sample_rate, n_bands=N_CONTRAST_BANDS, f_min=CONTRAST_FMIN):
    """Band edges in Hz: ``[0, f_min, 2 f_min, ..., 2**n_bands f_min]``.

    The first band is the residual region below ``f_min``; the last octave
    band always extends to Nyquist.
    """
    edges = np.concatenate([[0.0], f_min * 2.0 ** np.arange(n_bands + 1)])
    edges[-1] = max(edges[-1], sample_rate / 2.0)
    return edges


def contrast_band_bins(sample_rate, n_fft, n_bands=N_CONTRAST_BANDS, f_min=CONTRAST_FMIN):
    """List of FFT-bin index arrays, one per band (``n_bands + 1`` bands)."""
    freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    edges = contrast_band_edges(sample_rate, n_bands, f_min)
    bands = []
    for k in range(n_bands + 1):
        lo, hi = edges[k], edges[k + 1]
        if k == n_bands:
            idx = np.flatnonzero((freqs >= lo) & (freqs <= hi))
        else:
            idx = np.flatnonzero((freqs >= lo) & (freqs < hi))
        if idx.size == 0:
            raise ConfigurationError(
                f"contrast band {k} [{lo:.1f}, {hi:.1f}) Hz holds no FFT bins; "
                "increase n_fft or the sample rate"
            )
        bands.append(idx)
    return bands


def spectral_contrast(spec, alpha=CONTRAST_ALPHA, n_bands=N_CONTRAST_BANDS,
                      f_min=CONTRAST_FMIN):
    """Log peak minus log valley per octave band, shape ``(n_bands + 1, n_frames)``.

    Works on magnitudes (square root of the power spectrogram). Peak and
    valley are the means of the ``ceil(alpha * N)`` largest and smallest
    magnitudes among the band's ``N`` bins.
    """
    if not 0.0 < alpha <= 0.5:
        raise ConfigurationError(f"alpha must lie in (0, 0.5], got {alpha}")
    if f_min * 2.0 ** (n_bands - 1) >= spec.sample_rate / 2.0:
        raise ConfigurationError("octave bands exceed Nyquist")
    mag = np.sqrt(spec.frames)
    out = np.empty((n_bands + 1, spec.n_frames))
    for k, idx in enumerate(contrast_band_bins(spec.sample_rate, spec.n_fft, n_bands, f_min)):
        band = np.sort(mag[idx], axis=0)
        take = int(np.ceil(alpha * idx.size))
        valley = band[:take].mean(axis=0)
        peak = band[-take:].mean(axis=0)
        out[k] = np.log(np.maximum(peak, LOG_FLOOR)) - np.log(np.maximum(valley, LOG_FLOOR))
    return out


@dataclass(frozen=True, eq=False)
class FeatureVector:
    mfcc: np.ndarray
    chroma: np.ndarray
    mel: np.ndarray
    contrast: np.ndarray
    tonnetz: np.ndarray

    def __post_init__(self):
        for name, width in BLOCKS:
            block = np.asarray(getattr(self, name), dtype=np.float64)
            if block.shape != (width,):
                raise ConfigurationError(f"{name} block must have {width} entries, got {block.shape}")
            if not np.all(np.isfinite(block)):
                raise InvalidSignalError(f"{name} block contains non-finite values")
            object.__setattr__(self, name, block)

    @property
    def fused(self):
        return np.concatenate([getattr(self, name) for name, _ in BLOCKS])

    @classmethod
    def from_fused(cls, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (N_FEATURES,):
            raise ConfigurationError(f"expected {N_FEATURES} values, got {values.shape}")
        return cls(**{name: values[sl] for name, sl in BLOCK_SLICES.items()})


def frame_features(clip, n_fft=N_FFT, hop=HOP_LENGTH):
    """Per-frame feature matrices keyed by block name."""
    spec = power_spectrogram(clip, n_fft, hop)
    mel_db = mel_spectrogram(spec, mel_filter_bank(spec.sample_rate, n_fft))
    chroma = chromagram(spec)
    return {
        "mfcc": mfcc(mel_db),
        "chroma": chroma,
        "mel": mel_db,
        "contrast": spectral_contrast(spec),
        "tonnetz": tonnetz(chroma),
    }


def extract_feature_vector(clip, n_fft=N_FFT, hop=HOP_LENGTH):
    """Frame-averaged 193-dimensional descriptor of a clip.

    Clips at another rate are first resampled to 22050 Hz.
    """
    if clip.sample_rate != SAMPLE_RATE:
        clip = resample(clip, SAMPLE_RATE)
    per_frame = frame_features(clip, n_fft, hop)
    fv = FeatureVector(**{name: m.mean(axis=1) for name, m in per_frame.items()})
    assert fv.fused.shape == (N_FEATURES,)
    return fv
