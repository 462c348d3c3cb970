"""Shared pytest configuration: acceptance-criterion aggregation and summary.

Tests marked ``@pytest.mark.acceptance("<name>")`` roll up into one verdict
per criterion name; after the run a single PASS/FAIL line is printed for
each so the whole gate can be read at a glance.
"""

import pytest

# Display order for the summary. Every name aggregates all tests carrying
# it — each one must pass for the criterion to count as passing.
CRITERIA = [
    "spectral-round-trip",
    "phase-unit-circle",
    "quantizer-oracle",
    "contrastive-oracle",
    "q-sample-moments",
    "cfg-guidance",
    "repaint-known-cells",
    "overfit-demo",
    "metrics-oracles",
    "cli-determinism",
]


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(name): test belongs to the named acceptance criterion",
    )
    config.addinivalue_line("markers", "slow: multi-minute training run")
    config._acceptance_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    name = marker.args[0]
    state = item.config._acceptance_results.setdefault(
        name, {"failed": False, "skipped": False, "ran": False}
    )
    if report.when == "call":
        state["ran"] = True
        if report.failed:
            state["failed"] = True
        if report.skipped:
            state["skipped"] = True
    elif report.failed:
        # a setup/teardown error sinks the criterion as well
        state["failed"] = True
    elif report.when == "setup" and report.skipped:
        state["skipped"] = True


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = getattr(config, "_acceptance_results", {})
    ran_any = any(state["ran"] or state["failed"] for state in store.values())
    if not store and not ran_any:
        return
    terminalreporter.section("acceptance criteria")
    for name in CRITERIA + sorted(set(store) - set(CRITERIA)):
        state = store.get(name)
        if state is None:
            terminalreporter.write_line(f"ACCEPTANCE SKIP {name} (not run)")
        elif state["failed"]:
            terminalreporter.write_line(f"ACCEPTANCE FAIL {name}")
        elif state["skipped"] or not state["ran"]:
            terminalreporter.write_line(f"ACCEPTANCE SKIP {name} (tests skipped)")
        else:
            terminalreporter.write_line(f"ACCEPTANCE PASS {name}")
