import pytest

from achedge.model import ProblemSpec


@pytest.fixture
def worked():
    return ProblemSpec(s0=1.0, sigma=1.0, mu=0.0, lambda_impact=1.0, alpha=1.0,
                       kappa=0.25, t_horizon=1.0, phi0=0.0)


@pytest.fixture
def liquidation():
    return ProblemSpec(s0=1.0, sigma=1.0, mu=0.0, lambda_impact=1.0, alpha=1.0,
                       kappa=0.0, t_horizon=1.0, phi0=1.0)


@pytest.fixture
def zero():
    return ProblemSpec(s0=1.0, sigma=1.0, mu=0.0, lambda_impact=1.0, alpha=1.0,
                       kappa=0.0, t_horizon=1.0, phi0=0.0)


@pytest.fixture
def skewed():
    """Non-unit volatility with drift and inventory."""
    return ProblemSpec(s0=1.5, sigma=2.0, mu=0.3, lambda_impact=0.7, alpha=0.6,
                       kappa=0.05, t_horizon=1.2, phi0=0.8)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[key])
