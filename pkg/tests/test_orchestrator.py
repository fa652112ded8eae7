import json

import numpy as np
import pytest

from tnntn.channel import ChannelState
from tnntn.linkmodel import RadioConfig
from tnntn.orchestrator import (Policy, SolverOptions, compare_policies, max_rsrp_association,
                                pooled_table, rate_stats, run_policy)
from tnntn.scenario import ConfigError, Topology

from conftest import desk_snapshot, random_channel


def test_policy_parsing_and_rules():
    p = Policy.parse("framework_fixed_epsilon:0")
    assert p.kind == "framework_fixed_epsilon" and p.epsilon == 0.0
    assert p.name == "framework_fixed_epsilon:0"
    assert (p.association_rule, p.power_rule) == ("dual", "newton")
    b = Policy.parse("baseline_tn_only")
    assert (b.association_rule, b.power_rule) == ("max_rsrp", "max_power")
    for bad in ("nonsense", "fixed_epsilon", "fixed_epsilon:1.5", "threegpp_split:0.2",
                "fixed_epsilon:abc"):
        with pytest.raises(ConfigError):
            Policy.parse(bad)


def test_max_rsrp_examples(rng):
    ch = ChannelState(beta=np.array([[1e-12, 2e-12]]), los=np.ones((1, 2), bool),
                      sat_mask=np.array([False, False]))
    assert max_rsrp_association(ch, np.ones(2))[0] == 1
    ch = random_channel(rng, 4, 20)
    p = rng.uniform(0.01, 1.0, 5)
    a = max_rsrp_association(ch, p)
    np.testing.assert_array_equal(a, max_rsrp_association(ch, 7.3 * p))
    rx = ch.beta * p
    for i in range(20):
        assert a[i] == max(range(5), key=lambda j: (rx[i, j], -j))


def test_max_rsrp_ties_lowest_id():
    ch = ChannelState(beta=np.array([[1e-12, 1e-12, 1e-12]]), los=np.ones((1, 3), bool),
                      sat_mask=np.array([False, False, True]))
    assert max_rsrp_association(ch, np.ones(3))[0] == 0


def test_rate_stats_include_zero_rates():
    s = rate_stats(np.r_[np.zeros(10), np.full(90, 5.0)])
    assert s["p5_rate"] == 0.0 and s["mean_rate"] == pytest.approx(4.5)


@pytest.fixture(scope="module")
def desk_reports():
    out = {}
    for seed in range(3):
        topo, ch = desk_snapshot(seed)
        radio = RadioConfig()
        out[seed] = {name: run_policy(topo, ch, radio, Policy.parse(name), seed=seed)
                     for name in ("baseline_tn_only", "threegpp_split", "fixed_epsilon:0.5",
                                  "framework_fixed_epsilon:0", "framework_optimal")}
    return out


def test_macro_only_policies_share_coverage(desk_reports):
    for reps in desk_reports.values():
        a, b = reps["baseline_tn_only"], reps["framework_fixed_epsilon:0"]
        assert a.coverage_ratio == b.coverage_ratio
        assert not np.any(a.tier) and not np.any(b.tier)


def test_satellite_improves_coverage(desk_reports):
    for reps in desk_reports.values():
        assert reps["framework_optimal"].coverage_ratio > reps["baseline_tn_only"].coverage_ratio
    base = sum(r["baseline_tn_only"].covered.sum() for r in desk_reports.values())
    with_sat = sum(r["fixed_epsilon:0.5"].covered.sum() for r in desk_reports.values())
    assert with_sat >= base


def test_framework_not_worse_than_its_start(desk_reports):
    for reps in desk_reports.values():
        assert reps["framework_optimal"].slt >= reps["fixed_epsilon:0.5"].slt


def test_uncovered_ues_have_zero_rate(desk_reports):
    r = desk_reports[0]["baseline_tn_only"]
    assert np.all(r.rate_bps[~r.covered] == 0)
    assert np.all(r.rate_bps[r.covered] > 0)
    assert np.all(r.rsrp_dbm[~r.covered] < -120.0)


def test_framework_reports_iterations_and_trajectory(desk_reports):
    r = desk_reports[1]["framework_optimal"]
    assert 1 <= r.iterations["rounds"] <= 3
    stages = {row["stage"] for row in r.trajectory}
    assert stages == {"association", "power"}
    assert r.trajectory[0]["epsilon"] == 0.5


def test_compare_policies_snapshot_discipline(desk_reports):
    rows = compare_policies(desk_reports[0].values())
    assert [r["policy"] for r in rows][0] == "baseline_tn_only"
    with pytest.raises(ValueError, match="mismatched snapshots"):
        compare_policies([desk_reports[0]["baseline_tn_only"], desk_reports[1]["baseline_tn_only"]])


def test_identical_policies_identical_rows():
    topo, ch = desk_snapshot(4)
    radio = RadioConfig()
    a = run_policy(topo, ch, radio, Policy.parse("framework_optimal"), seed=4)
    b = run_policy(topo, ch, radio, Policy.parse("framework_optimal"), seed=4)
    ra, rb = compare_policies([a, b])
    assert ra == rb


def test_pooled_table_pools_ues(desk_reports):
    reports = [r for reps in desk_reports.values() for r in reps.values()]
    rows = {r["policy"]: r for r in pooled_table(reports)}
    assert rows["baseline_tn_only"]["n_ues"] == 600
    assert rows["baseline_tn_only"]["n_seeds"] == 3


def one_ue_world():
    topo = Topology(bs_xy=np.array([[0.0, 0.0], [100.0, 0.0], [50.0, 50.0]]),
                    bs_tier=np.array([0, 0, 1]), bs_max_power_dbm=np.array([17.7, 17.7, 15.8]),
                    bs_gain_dbi=np.array([14.0, 14.0, 30.0]), ue_xy=np.array([[10.0, 0.0]]),
                    ue_hotspot=np.array([False]), ue_anchor=np.array([-1]), area_side_m=100.0)
    ch = ChannelState(beta=np.array([[1e-9, 1e-11, 1e-13]]), los=np.ones((1, 3), bool),
                      sat_mask=np.array([False, False, True]))
    return topo, ch


@pytest.mark.parametrize("name", ["baseline_tn_only", "threegpp_split", "fixed_epsilon:0.2",
                                  "framework_fixed_epsilon:0.3", "framework_optimal"])
def test_single_ue_same_association(name):
    topo, ch = one_ue_world()
    r = run_policy(topo, ch, RadioConfig(), Policy.parse(name))
    assert r.covered[0]
    assert r.serving.tolist() == [0]


def test_report_serialisation(tmp_path, desk_reports):
    r = desk_reports[0]["framework_optimal"]
    d = json.loads(r.to_json())
    for key in ("slt", "epsilon", "coverage_ratio", "mean_rate", "median_rate", "p5_rate",
                "p95_rate", "mean_power_w", "iterations", "trajectory"):
        assert key in d
    r.write_per_ue_csv(tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "ue_id,x,y,serving_bs,tier,rsrp_dbm,rate_bps,covered"
    assert len(lines) == 201


def test_outer_rounds_option():
    topo, ch = desk_snapshot(2)
    r = run_policy(topo, ch, RadioConfig(), Policy.parse("framework_optimal"),
                   SolverOptions(outer_rounds=1), seed=2)
    assert r.iterations["rounds"] == 1
