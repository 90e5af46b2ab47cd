import numpy as np
import pytest

from memcap.channel_model import ChannelSpec


def random_spec(rng, n=None, taps=None, n_rx=None):
    """Random admissible channel: full-rank first tap, strictly diagonally dominant noise."""
    n = n or int(rng.integers(1, 4))
    n_rx = n_rx or n
    taps = taps or int(rng.integers(1, 4))

    def cplx(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    h = [(0, cplx(n_rx, n) + 2 * np.eye(n_rx, n))]
    for t in range(1, taps):
        h.append((t, 0.4 * cplx(n_rx, n)))
    A = cplx(n_rx, n_rx)
    R0 = A @ A.conj().T + n_rx * np.eye(n_rx)
    noise = [(0, R0)]
    if rng.random() < 0.5:
        # keep the noise PSD positive: ||R(1)|| well below lambda_min(R0)/2
        B = cplx(n_rx, n_rx)
        B *= 0.2 * np.linalg.eigvalsh(R0).min() / np.linalg.norm(B, 2)
        noise.append((1, B))
    return ChannelSpec(n, n_rx, h, noise)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def two_tap():
    return ChannelSpec.scalar([1.0, 0.5])


@pytest.fixture
def corr_identity():
    return ChannelSpec(2, 2, [(0, np.eye(2))], [(0, np.eye(2)), (1, 0.25 * np.eye(2))])


@pytest.fixture
def mimo_2x2():
    return ChannelSpec(
        2, 2,
        [(0, np.array([[1, 0.3], [0.2j, 0.8]])), (1, np.array([[0.4, 0], [0.1, -0.3]]))],
        [(0, np.array([[1, 0.2], [0.2, 1.5]]))],
    )


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
