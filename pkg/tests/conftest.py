import numpy as np
import pytest

from urnlab.model import ModelSpec, model_a, model_b, model_c, model_nonuniform


@pytest.fixture
def spec_a():
    return model_a(n_urns=10)


@pytest.fixture
def spec_b():
    return model_b(n_urns=10)


@pytest.fixture
def spec_c():
    return model_c(n_urns=10)


@pytest.fixture
def spec_d():
    return model_nonuniform(n_urns=10)


def gridpoints(M):
    return np.arange(1, M + 1) / M


def small_cross_model(n_urns=6):
    """Every kind of event at once: cross branching with k in {0, 1, 2} and
    in-place rates for k in {0, 2}, all spatially varying."""
    return ModelSpec.from_strings(
        n_urns,
        lam=["0.3 + 0.1*sin(2*pi*u)", "1 + 0.5*cos(2*pi*(u-v))", "0.2*(1 + v)"],
        psi=["0.4*u", "0", "0.5 + 0.25*cos(2*pi*u)"],
        phi="1 + 0.5*sin(2*pi*u)",
    )


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: int(k[2:])):
        passed, detail = RESULTS[key]
        terminalreporter.write_line(f"{key:<5} {'PASS' if passed else 'FAIL'}  {detail}")
