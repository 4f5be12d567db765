"""WAV decoding, resampling and power spectrograms."""

from dataclasses import dataclass
from math import gcd
import struct

import numpy as np
from scipy.signal import resample_poly

from .errors import (
    ConfigurationError,
    DecodeError,
    EmptyAudioError,
    InvalidSignalError,
    UnsupportedFormatError,
)

SAMPLE_RATE = 22050
N_FFT = 2048
HOP_LENGTH = 512

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono waveform in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ConfigurationError("samples must be one-dimensional")
        if samples.size == 0:
            raise EmptyAudioError("audio clip has no samples")
        if not np.all(np.isfinite(samples)):
            raise InvalidSignalError("audio clip contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ConfigurationError(f"sample_rate must be positive, got {self.sample_rate}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass(frozen=True, eq=False)
class PowerSpectrogram:
    """Squared STFT magnitudes, shape ``(n_fft // 2 + 1, n_frames)``."""

    frames: np.ndarray
    n_fft: int
    hop: int
    sample_rate: int

    @property
    def n_bins(self):
        return self.frames.shape[0]

    @property
    def n_frames(self):
        return self.frames.shape[1]

    def frequencies(self):
        """Center frequency in Hz of every FFT bin."""
        return np.arange(self.n_bins) * (self.sample_rate / self.n_fft)


def _iter_chunks(data):
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if body + size > len(data):
            raise DecodeError(
                f"chunk {chunk_id!r} declares {size} bytes but only "
                f"{len(data) - body} remain"
            )
        yield chunk_id, data[body:body + size]
        pos = body + size + (size & 1)


def decode_wav(data):
    """Decode RIFF/WAVE bytes into a mono ``AudioClip``.

    Supports integer PCM at 16, 24 or 32 bits and 32-bit IEEE float, with one
    or two channels. Stereo is averaged to mono. Integer samples are divided
    by their full-scale value (``2 ** (bits - 1)``).
    """
    data = bytes(data)
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError("not a RIFF/WAVE container")
    (riff_size,) = struct.unpack_from("<I", data, 4)
    if riff_size + 8 > len(data):
        raise DecodeError(
            f"RIFF header declares {riff_size + 8} bytes, file has {len(data)}"
        )

    fmt = None
    payload = None
    for chunk_id, body in _iter_chunks(data[:riff_size + 8]):
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise DecodeError("fmt chunk shorter than 16 bytes")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise DecodeError("extensible fmt chunk is truncated")
                (sub_format,) = struct.unpack_from("<H", body, 24)
                fmt = (sub_format,) + fmt[1:]
        elif chunk_id == b"data":
            payload = body
    if fmt is None:
        raise DecodeError("missing fmt chunk")
    if payload is None:
        raise DecodeError("missing data chunk")

    format_tag, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{channels} channels (only mono/stereo)")
    if format_tag == _WAVE_FORMAT_PCM and bits in (16, 24, 32):
        pass
    elif format_tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        pass
    else:
        raise UnsupportedFormatError(f"format tag {format_tag:#06x} at {bits} bits")
    if rate <= 0:
        raise DecodeError("sample rate of zero")
    width = bits // 8
    if block_align != width * channels:
        raise DecodeError(f"block_align {block_align} inconsistent with {channels}x{bits} bits")

    n_frames = len(payload) // block_align
    if n_frames == 0:
        raise EmptyAudioError("data chunk holds no complete sample frames")
    raw = payload[:n_frames * block_align]

    if format_tag == _WAVE_FORMAT_IEEE_FLOAT:
        samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        samples = ints / float(1 << 23)
    else:
        samples = np.frombuffer(raw, dtype=f"<i{width}").astype(np.float64)
        samples /= float(1 << (bits - 1))

    samples = samples.reshape(n_frames, channels).mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise InvalidSignalError("float payload contains NaN or Inf")
    return AudioClip(samples, rate)


def read_wav(path):
    with open(path, "rb") as fh:
        return decode_wav(fh.read())


def encode_wav(clip, bits=16):
    """Serialize a clip as mono WAV.

    ``bits`` is 16, 24 or 32 for integer PCM, or ``"float"`` for 32-bit IEEE.
    """
    x = np.asarray(clip.samples, dtype=np.float64)
    if bits == "float":
        tag, width, payload = _WAVE_FORMAT_IEEE_FLOAT, 4, x.astype("<f4").tobytes()
    elif bits in (16, 24, 32):
        full = float(1 << (bits - 1))
        ints = np.clip(np.round(x * full), -full, full - 1).astype(np.int64)
        width = bits // 8
        if bits == 24:
            u = (ints & 0xFFFFFF).astype(np.uint32)
            payload = np.stack([u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1)
            payload = payload.astype(np.uint8).tobytes()
        else:
            payload = ints.astype(f"<i{width}").tobytes()
        tag = _WAVE_FORMAT_PCM
    else:
        raise ConfigurationError(f"unsupported bit depth {bits!r}")
    nbits = 32 if bits == "float" else bits
    fmt = struct.pack("<HHIIHH", tag, 1, clip.sample_rate,
                      clip.sample_rate * width, width, nbits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def resample(clip, target_rate):
    """Band-limited polyphase resampling to ``target_rate`` Hz."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ConfigurationError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    g = gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    out = resample_poly(clip.samples, up, down)
    return AudioClip(out, target_rate)


def hann_window(n):
    """Symmetric Hann window ``0.5 * (1 - cos(2*pi*k / (n - 1)))``."""
    if n < 2:
        return np.ones(n)
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / (n - 1)))


def frame_signal(samples, n_fft, hop):
    """Center-pad by reflection and cut into ``(n_frames, n_fft)`` frames."""
    pad = n_fft // 2
    # numpy reflects repeatedly when pad exceeds the signal length
    x = np.pad(np.asarray(samples, dtype=np.float64), pad, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]
    return frames


def power_spectrogram(clip, n_fft=N_FFT, hop=HOP_LENGTH):
    """Hann-windowed squared-magnitude STFT of a clip."""
    n_fft, hop = int(n_fft), int(hop)
    if n_fft < 2:
        raise ConfigurationError(f"n_fft must be >= 2, got {n_fft}")
    if hop < 1:
        raise ConfigurationError(f"hop must be >= 1, got {hop}")
    samples = np.asarray(clip.samples, dtype=np.float64)
    if samples.size < 1:
        raise EmptyAudioError("cannot analyse an empty clip")
    if not np.all(np.isfinite(samples)):
        raise InvalidSignalError("signal contains NaN or Inf")
    frames = frame_signal(samples, n_fft, hop) * hann_window(n_fft)
    spec = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    return PowerSpectrogram(np.ascontiguousarray(spec.T), n_fft, hop, clip.sample_rate)


def load_clip(path, target_rate=SAMPLE_RATE):
    """Read a WAV file and bring it to the pipeline sample rate."""
    return resample(read_wav(path), target_rate)
