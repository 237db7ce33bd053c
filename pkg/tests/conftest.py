import numpy as np
import pytest

from desk_corpus import desk_corpus
from foveatex.geometry import TessellationConfig, build_tessellation
from foveatex.image import ensure_gray


@pytest.fixture(scope="session")
def corpus20():
    return desk_corpus(20)


@pytest.fixture(scope="session")
def gray20(corpus20):
    return [ensure_gray(img) for img in corpus20]


@pytest.fixture(scope="session")
def corpus10(corpus20):
    return corpus20[:10]


@pytest.fixture(scope="session")
def natural(gray20):
    return gray20[0]


@pytest.fixture(scope="session")
def tess():
    return build_tessellation(TessellationConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria: one summary line per test marked ``criterion``
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    rep = outcome.get_result()
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        detail = dict(item.user_properties).get("detail", "")
        if rep.when == "call" and rep.failed and not detail:
            detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
        _CRITERIA[mark.args[0]] = (mark.args[1], "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        name, verdict, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {verdict}: {name}" + (f" | {detail}" if detail else ""))
