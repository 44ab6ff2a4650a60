import pytest
import torch

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def float64():
    """Run a test with float64 as torch's default dtype, restoring it after."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Lines are printed immediately and repeated in the terminal summary.
    """
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        lines.append(line)
        reporter = request.config.pluginmanager.get_plugin("terminalreporter")
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
