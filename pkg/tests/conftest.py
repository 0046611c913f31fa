import numpy as np
import pytest

from fdsr.net import FdsrConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return FdsrConfig.tiny()


@pytest.fixture
def micro_config():
    """Smallest valid network: handy for fast end-to-end checks."""
    return FdsrConfig(base_channels=4, guide_channels=4, scale=2, block_factor=2)


# --------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


@pytest.fixture
def criterion(request):
    """Dict the test fills with ``id``, ``title`` and ``detail``; outcome is taken from the test result."""
    info = {"id": "?", "title": request.node.name, "detail": ""}
    yield info
    rep = getattr(request.node, "rep_call", None)
    if rep is None or rep.skipped:
        status = "SKIP"
    else:
        status = "PASS" if rep.passed else "FAIL"
    _CRITERIA.append((info["id"], status, info["title"], info["detail"]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid, status, title, detail in sorted(_CRITERIA, key=lambda c: (len(str(c[0])), str(c[0]))):
        terminalreporter.write_line(f"criterion {cid:>3}: {status}  {title}" + (f"  [{detail}]" if detail else ""))
