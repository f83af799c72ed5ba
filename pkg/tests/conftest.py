import numpy as np
import pytest

from cascade_sdr import ModelSet, bundled_models

A = [[0.9, 0.1], [0.5, 0.5]]
B = [[0.5, 0.5], [0.1, 0.9]]

_ACCEPTANCE = {}


@pytest.fixture
def ab_models():
    return bundled_models("ab_pair")


@pytest.fixture
def three_class():
    return bundled_models("three_class")


def random_models(rng, M, Z, concentration=1.0, floor=0.02):
    """Random strictly positive model set; ``floor`` keeps every entry away from zero."""
    eta = rng.dirichlet(np.full(Z, concentration), size=M) + floor
    alpha = rng.dirichlet(np.full(Z, concentration), size=(M, Z)) + floor
    eta /= eta.sum(axis=1, keepdims=True)
    alpha /= alpha.sum(axis=2, keepdims=True)
    return ModelSet.from_arrays(eta, alpha)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    passed = report.outcome == "passed" and not hasattr(report, "wasxfail")
    _ACCEPTANCE.setdefault(props["criterion"], []).append((passed, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        results = _ACCEPTANCE[crit]
        ok = all(p for p, _ in results)
        if len(results) == 1:
            detail = results[0][1]
        else:
            notes = "; ".join(d for _, d in results if d)
            detail = f"{sum(p for p, _ in results)}/{len(results)} checks passed" + (f"; {notes}" if notes else "")
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  {detail}")
