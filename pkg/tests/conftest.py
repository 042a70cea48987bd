import numpy as np
import pytest

from qiv.sim import ScenarioSpec, simulate_dataset


def sample_valid_gop(rng, size, gamma=(-0.99, 0.99), alpha=(0.05, 20.0), gop=(1e-4, 1e4)):
    """Uniform gamma, log-uniform alpha and gop, kept where gamma + alpha > 0."""
    out = []
    need = size
    while need > 0:
        g = rng.uniform(*gamma, 2 * need)
        a = np.exp(rng.uniform(np.log(alpha[0]), np.log(alpha[1]), 2 * need))
        o = np.exp(rng.uniform(np.log(gop[0]), np.log(gop[1]), 2 * need))
        keep = g + a > 0
        out.append(np.column_stack([g, a, o])[keep])
        need -= int(keep.sum())
    pts = np.vstack(out)[:size]
    return pts[:, 0], pts[:, 1], pts[:, 2]


@pytest.fixture(scope="session")
def small_sim():
    return simulate_dataset(ScenarioSpec(n=3000, seed=5), rep=0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
