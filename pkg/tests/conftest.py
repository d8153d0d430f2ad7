"""Per-criterion summary lines for the acceptance suite."""

from collections import OrderedDict

_outcomes: "OrderedDict[str, list]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    cid, title = marker.args
    entry = _outcomes.setdefault(cid, [title, []])
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        if call.excinfo is None:
            entry[1].append(("PASS", ""))
        elif call.excinfo.errisinstance(__import__("pytest").skip.Exception):
            entry[1].append(("SKIP", str(call.excinfo.value.msg)))
        else:
            entry[1].append(("FAIL", call.excinfo.exconly().splitlines()[0][:160]))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid, (title, results) in _outcomes.items():
        states = {s for s, _ in results}
        status = "FAIL" if "FAIL" in states else "SKIP" if "SKIP" in states else "PASS"
        detail = "; ".join(msg for s, msg in results if s == status and msg)
        line = f"[{status}] criterion {cid}: {title}"
        tr.write_line(line + (f" -- {detail}" if detail else ""))
