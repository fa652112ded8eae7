import numpy as np
import pytest

from tnntn.channel import ChannelParams, ChannelState, build_channel_state
from tnntn.linkmodel import RadioConfig
from tnntn.scenario import ScenarioConfig, build_topology

DESK = ScenarioConfig(area_side_km=6.8, ue_density=200 / 6.8 ** 2)


def random_channel(rng, n_macro, n_ues, with_sat=True, lo_db=-125.0, hi_db=-70.0):
    """Synthetic gains, log-uniform between ``lo_db`` and ``hi_db``."""
    n_bs = n_macro + int(with_sat)
    beta = 10.0 ** (rng.uniform(lo_db, hi_db, size=(n_ues, n_bs)) / 10.0)
    sat = np.zeros(n_bs, dtype=bool)
    if with_sat:
        sat[-1] = True
    return ChannelState(beta=beta, los=np.ones_like(beta, dtype=bool), sat_mask=sat)


def desk_snapshot(seed):
    topo = build_topology(DESK, seed)
    return topo, build_channel_state(topo, ChannelParams(), seed)


@pytest.fixture
def radio():
    return RadioConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- acceptance summary ----------------------------------------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or report.failed:
        detail = dict(report.user_properties).get("detail", "")
        if report.nodeid not in _CRITERIA or report.failed:
            _CRITERIA[report.nodeid] = (report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_CRITERIA):
        outcome, detail = _CRITERIA[nodeid]
        name = nodeid.split("::")[-1]
        num = int(name.split("_")[2])
        verdict = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {num:2d}: {verdict}  {name[len('test_criterion_NN_'):]}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
