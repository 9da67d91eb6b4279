import numpy as np
import pytest

from binsed.audio_io import AudioClip

RATE = 44100


def delayed_noise(seconds, delay, rate=RATE, seed=0, gains=(1.0, 1.0)):
    """Broadband stereo noise where channel 2 lags channel 1 by ``delay`` samples."""
    rng = np.random.default_rng(seed)
    n = int(seconds * rate)
    src = rng.standard_normal(n + abs(delay))
    a, b = max(delay, 0), max(-delay, 0)
    x = np.stack([gains[0] * src[a:a + n], gains[1] * src[b:b + n]]) * 0.1
    return AudioClip(x, rate)


def tone(freq, seconds=1.0, rate=RATE, channels=2, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    x = amp * np.sin(2 * np.pi * freq * t)
    return AudioClip(np.tile(x, (channels, 1)), rate)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
