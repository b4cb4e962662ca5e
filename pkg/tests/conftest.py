import pytest

from uqscore.harness import oracle_testbed


@pytest.fixture(scope="session")
def testbed():
    """Trained softmax network with oracle annotations on 4000 fresh test points."""
    return oracle_testbed(seed=0)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[key])
