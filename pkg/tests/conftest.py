import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from eegcast import net

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


TINY = net.ModelConfig(vocab_size=32, embed_dim=16, n_layers=2, n_heads=2, block_size=16,
                       mlp_ratio=4, dropout_pretrain=0.1, dropout_finetune=0.2, frame_len=5)


# filled by test_acceptance; echoed after the run so passing lines are not swallowed by capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pink_noise(rng, C, T, fs=250.0, rms=20.0):
    spec = np.fft.rfft(rng.standard_normal((C, T)), axis=1)
    f = np.fft.rfftfreq(T, 1.0 / fs)
    spec *= np.where(f > 0, 1.0 / np.sqrt(np.maximum(f, 0.5)), 0.0)
    x = np.fft.irfft(spec, n=T, axis=1)
    return rms * x / x.std(axis=1, keepdims=True)
