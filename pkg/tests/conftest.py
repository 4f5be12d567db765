import io
import wave

import numpy as np
import pytest

from coughforest.dataset import FeatureMatrix


def pcm_wav(channels, rate=22050, width=2):
    """Integer PCM WAV via the standard-library writer (independent of the package)."""
    data = np.asarray(channels, dtype=np.int64)
    if data.ndim == 1:
        data = data[:, None]
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(data.shape[1])
        w.setsampwidth(width)
        w.setframerate(rate)
        if width == 3:
            u = (data.reshape(-1) & 0xFFFFFF).astype(np.uint32)
            raw = np.stack([u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1)
            w.writeframes(raw.astype(np.uint8).tobytes())
        else:
            w.writeframes(data.reshape(-1).astype(f"<i{width}").tobytes())
    return buf.getvalue()


def gaussian_matrix(n=400, n_features=193, informative=10, shift=1.0, seed=0,
                    dataset="virufy", prefix="c", pos_frac=0.5):
    rng = np.random.default_rng(seed)
    n_pos = int(round(n * pos_frac))
    y = np.r_[np.ones(n_pos, dtype=np.int64), np.zeros(n - n_pos, dtype=np.int64)]
    X = rng.normal(size=(n, n_features))
    X[:, :informative] += shift * y[:, None]
    return FeatureMatrix(X, y, np.array([dataset] * n, dtype=object),
                         tuple(f"{prefix}{i}" for i in range(n)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """``acceptance(number, ok, detail)`` records a criterion outcome and asserts it."""
    lines = request.config._acceptance_lines

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        assert ok, line

    def skip(number, reason):
        lines.append((number, f"criterion {number:>2}: SKIP  {reason}"))
        pytest.skip(reason)

    record.skip = skip
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
