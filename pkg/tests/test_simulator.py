import csv
import math

import numpy as np
import pytest

from itmpc.controller import MPPIController
from itmpc.core import VehicleState
from itmpc.costs import CostParams, DrivingCost, OvalTrack, generate_corridor_costmap, generate_oval_costmap
from itmpc.dynamics import BicycleModel, ControlBounds
from itmpc.simulator import (METRIC_COLUMNS, TRACE_COLUMNS, Disturbance, EpisodeTrace, FailureCriteria, LapMetrics,
                             StartLine, classify_laps, replay_commands, simulate_episode, start_line_crossings,
                             summarize, sysid_dataset, write_metrics_csv, write_overlay_svg, write_trace_csv)

TRACK = OvalTrack()
CMAP = generate_oval_costmap(TRACK, resolution=0.1)
LINE = StartLine.for_oval(TRACK)
DT = 1.0 / 40.0


def centreline_trace(speed=4.0, laps=3.2, start_s=-2.0):
    """States moving counter-clockwise along the centreline, starting ``start_s`` metres before the line."""
    L, half, r = TRACK.lap_length, 0.5 * TRACK.straight_length, TRACK.centerline_radius
    s = start_s + speed * DT * np.arange(int(laps * L / (speed * DT)))
    u = np.mod(s, L)
    pts = np.empty((u.size, 2))
    heading = np.empty(u.size)
    straight = TRACK.straight_length
    arc = math.pi * r
    for k, a in enumerate(u):
        if a < half:
            pts[k], heading[k] = (a, -r), 0.0
        elif a < half + arc:
            phi = (a - half) / r
            pts[k], heading[k] = (half + r * math.sin(phi), -r * math.cos(phi)), phi
        elif a < half + arc + straight:
            pts[k], heading[k] = (half - (a - half - arc), r), math.pi
        elif a < half + 2 * arc + straight:
            phi = (a - half - arc - straight) / r
            pts[k], heading[k] = (-half - r * math.sin(phi), r * math.cos(phi)), math.pi + phi
        else:
            pts[k], heading[k] = (-half + (a - half - 2 * arc - straight), -r), 2 * math.pi
    states = np.zeros((u.size, 7))
    states[:, :2] = pts
    states[:, 2] = heading
    states[:, 4] = speed
    zeros = np.zeros((u.size, 2))
    return EpisodeTrace(time=np.arange(u.size) * DT, states=states, commanded=zeros, realized=zeros,
                        cost=np.zeros(u.size), h=CMAP.lookup(pts[:, 0], pts[:, 1]), dt=DT)


def small_controller(cmap=CMAP, v_des=4.0, gamma=0.1, samples=96, horizon=30):
    return MPPIController(model=BicycleModel(), cost=DrivingCost(cmap, CostParams(v_des=v_des)), samples=samples,
                          horizon=horizon, gamma=gamma, bounds=ControlBounds())


def test_centreline_laps_all_succeed():
    tr = centreline_trace()
    assert np.all(tr.h < 0.05)  # interpolation across the |d| kink
    laps = classify_laps(tr, LINE)
    assert len(laps) == 3  # four crossings
    assert all(lap.success and lap.reason == "none" for lap in laps)
    times = [lap.lap_time for lap in laps]
    np.testing.assert_allclose(times, TRACK.lap_length / 4.0, atol=DT)
    assert max(times) - min(times) <= DT
    for lap in laps:
        assert lap.v_min <= lap.v_max
        np.testing.assert_allclose(lap.v_max, 4.0)


def test_lap_count_is_crossings_minus_one():
    for n in (1.5, 2.2, 4.1):
        tr = centreline_trace(laps=n)
        times, _ = start_line_crossings(tr.states, LINE, DT)
        assert len(classify_laps(tr, LINE)) == max(len(times) - 1, 0)


def test_teleport_outside_fails_that_lap():
    tr = centreline_trace()
    _, idx = start_line_crossings(tr.states, LINE, DT)
    k0 = idx[1] + 80  # inside the second complete lap
    tr.states[k0:k0 + 40, :2] = [0.0, 0.0]  # 1 s in the infield
    tr.h = CMAP.lookup(tr.states[:, 0], tr.states[:, 1])
    laps = classify_laps(tr, LINE)
    assert [lap.success for lap in laps] == [True, False, True]
    assert laps[1].reason == "boundary"


def test_short_excursion_is_not_a_failure():
    tr = centreline_trace()
    _, idx = start_line_crossings(tr.states, LINE, DT)
    k0 = idx[0] + 60
    tr.h = tr.h.copy()
    tr.h[k0:k0 + 10] = 1.5  # 0.25 s
    assert all(lap.success for lap in classify_laps(tr, LINE))


def test_spinout_detected():
    tr = centreline_trace()
    _, idx = start_line_crossings(tr.states, LINE, DT)
    k0 = idx[2] + 50
    tr.states[k0:k0 + 20, 5] = 12.0  # slip ~ 1.25 rad for 0.5 s
    laps = classify_laps(tr, LINE)
    assert laps[2].reason == "spinout" and not laps[2].success


def test_failure_before_first_crossing_is_reported():
    tr = centreline_trace(start_s=-30.0, laps=1.0)
    tr.h = tr.h.copy()
    tr.h[:60] = 2.5
    laps = classify_laps(tr, LINE)
    assert laps and not laps[0].success and not laps[0].complete


def test_summary():
    laps = [LapMetrics(10.0, 2.0, 5.0, True), LapMetrics(12.0, 3.0, 6.0, True),
            LapMetrics(float("nan"), 1.0, 7.0, False, "boundary", complete=False)]
    s = summarize(laps)
    assert (s.laps, s.successes) == (3, 2)
    np.testing.assert_allclose([s.lap_time_mean, s.lap_time_std, s.v_min, s.v_max], [11.0, 1.0, 1.0, 7.0])
    assert math.isnan(summarize([]).success_rate)


def test_same_seed_same_trace():
    x0 = TRACK.start_pose(2.0)
    a = simulate_episode(small_controller(), x0, CMAP, 1.0, seed=3)
    b = simulate_episode(small_controller(), x0, CMAP, 1.0, seed=3)
    c = simulate_episode(small_controller(), x0, CMAP, 1.0, seed=4)
    assert len(a) == 40
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.commanded, b.commanded)
    np.testing.assert_array_equal(a.realized, b.realized)
    assert not np.array_equal(a.realized, c.realized)
    np.testing.assert_allclose(np.diff(a.time), DT)


def test_replay_reproduces_noiseless_trace():
    x0 = TRACK.start_pose(2.0)
    tr = simulate_episode(small_controller(gamma=0.0), x0, CMAP, 1.0, exec_sigma=(0.0, 0.0), seed=1)
    np.testing.assert_array_equal(replay_commands(tr), tr.states)


def test_disturbance_leaves_earlier_records_untouched():
    x0 = TRACK.start_pose(2.0)
    base = simulate_episode(small_controller(), x0, CMAP, 1.0, seed=2)
    kicked = simulate_episode(small_controller(), x0, CMAP, 1.0, seed=2,
                              disturbances=[Disturbance(0.5, dv_y=1.0, dyaw=0.5)])
    k = 20
    np.testing.assert_array_equal(base.states[:k], kicked.states[:k])
    np.testing.assert_array_equal(base.commanded[:k], kicked.commanded[:k])
    assert kicked.states[k, 5] == pytest.approx(base.states[k, 5] + 1.0)


def test_corridor_stays_inside_without_noise():
    cmap = generate_corridor_costmap(half_width=2.0, length=40.0)
    for seed in range(20):
        tr = simulate_episode(small_controller(cmap, samples=64, horizon=25), VehicleState(v_x=3.0), cmap, 1.5,
                              exec_sigma=(0.0, 0.0), seed=seed)
        assert tr.aborted is None
        assert np.all(tr.h <= 1.0), seed


def test_stop_on_failure():
    # start pointing straight at the infield with no room to turn
    x0 = VehicleState(p_x=0.0, p_y=-3.1, theta=math.pi / 2, v_x=6.0)
    crit = FailureCriteria(boundary_dwell_s=0.1)
    tr = simulate_episode(small_controller(samples=32, horizon=10), x0, CMAP, 5.0, seed=0,
                          stop_on_failure=True, failure=crit)
    assert tr.aborted == "stopped after boundary failure"
    assert len(tr) < 200


def test_episode_length_validation():
    with pytest.raises(ValueError):
        simulate_episode(small_controller(), TRACK.start_pose(), CMAP, 0.001)


def test_writers(tmp_path):
    tr = centreline_trace(laps=1.2)
    write_trace_csv(tr, tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert tuple(rows[0]) == TRACE_COLUMNS and len(rows) == len(tr) + 1
    np.testing.assert_array_equal(np.array(rows[1:], dtype=float)[:, 1:8], tr.states)
    laps = classify_laps(centreline_trace(), LINE)
    write_metrics_csv(laps, tmp_path / "m.csv")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert tuple(rows[0]) == METRIC_COLUMNS and len(rows) == 4
    write_overlay_svg(tr, CMAP, tmp_path / "o.svg", track=TRACK)
    svg = (tmp_path / "o.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<polyline") == 4
    write_overlay_svg(tr, generate_corridor_costmap(), tmp_path / "c.svg")
    assert "<circle" in (tmp_path / "c.svg").read_text()


def test_sysid_dataset_shapes():
    X, y = sysid_dataset(50, seed=1)
    assert X.shape == (50, 6) and y.shape == (50, 4)
    X2, y2 = sysid_dataset(50, seed=1)
    np.testing.assert_array_equal(y, y2)
    assert np.all(np.abs(X[:, 4:]) <= 1)
