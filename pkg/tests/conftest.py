import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

TITLES = {
    1: "local stiffness exactness",
    2: "convergence sanity (L2 order)",
    3: "discrete maximum principle",
    4: "unconditional lemma batteries",
    5: "nodal-max subsolution and positive part",
    6: "Caccioppoli uniformity",
    7: "Poincare uniformity",
    8: "Hoelder uniformity",
    9: "bisection shape regularity",
    10: "quasilinear driver",
}
_results: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(rep.user_properties).get("detail", "")
        _results.setdefault(marker.args[0], []).append((item.name, rep.passed, detail, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(TITLES):
        runs = _results.get(n)
        if runs is None:
            continue
        ok = all(p for _, p, _, _ in runs)
        secs = sum(d for *_, d in runs)
        details = "; ".join(d for _, _, d, _ in runs if d)
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {TITLES[n]} ({secs:.1f} s){': ' + details if details else ''}")


@pytest.fixture
def detail(record_property):
    """Attach a short measured summary to the acceptance line of the test."""
    parts = []

    def add(text):
        parts.append(str(text))
        record_property("detail", ", ".join(parts))

    return add
