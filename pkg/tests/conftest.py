"""Shared test plumbing: the per-criterion verdict block.

Tests in test_acceptance.py are named test_cNN_*; after the run, every
criterion that executed gets exactly one PASS/FAIL line here, so the
acceptance status is readable without scanning the full pytest output.
"""

from __future__ import annotations

import re

CRITERIA = {
    1: "closed-form speedup ratio above 1.59 across the check grid",
    2: "optimal draft budget strictly inside its log bracket",
    3: "overlapped-schedule latency equals the refined grid minimum",
    4: "idealized even-split makespan ratio lands in [0.50, 0.53]",
    5: "simulated speedup at alpha*V = 1.68 clears the bound",
    6: "batch balance bookkeeping under random operations and preemptions",
    7: "block accounting exact and deferral never worse across 100 runs",
    8: "twelve-request allocation scenario plays out as scheduled",
    9: "acceptance-rate estimator within three standard errors",
    10: "same seed, byte-identical step log",
}

_CRITERION = re.compile(r"test_acceptance\.py::.*test_c(\d{2})_")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts: dict[int, set[str]] = {}
    for category, flag in (("passed", "pass"), ("failed", "fail"), ("error", "fail")):
        for report in terminalreporter.stats.get(category, []):
            match = _CRITERION.search(report.nodeid)
            if match:
                verdicts.setdefault(int(match.group(1)), set()).add(flag)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(verdicts):
        verdict = "FAIL" if "fail" in verdicts[number] else "PASS"
        label = CRITERIA.get(number, "")
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {label}")
