import math

import pytest
from hypothesis import given, settings, strategies as st

from decoric_sim.topology import (LinkClass, RadioModel, Topology, classify_link,
                                  example_topology, from_csv, generate_random_topology,
                                  is_unit_disk_connected, link_rssi, to_csv)


def _linear_oracle(d, rng, tx=0.0, sens=-95.0):
    # straight line through (0, tx) and (rng, sens)
    return tx - (tx - sens) * (d / rng)


@given(st.floats(0, 50), st.floats(1, 200))
def test_linear_rssi_matches_line(d, rng):
    assert RadioModel().rssi(d, rng) == pytest.approx(_linear_oracle(d, rng), abs=1e-9)


def test_linear_rssi_endpoints():
    m = RadioModel()
    assert m.rssi(0, 50) == 0.0
    assert m.rssi(50, 50) == -95.0
    assert m.sensitivity(50) == -95.0


def test_log_distance_decreasing_and_sensitivity_at_range():
    m = RadioModel("log_distance")
    vals = [m.rssi(d, 50) for d in (1, 2, 5, 10, 20, 50)]
    assert vals == sorted(vals, reverse=True)
    # 20 dB per decade at gamma 2
    assert m.rssi(10, 50) - m.rssi(100, 50) == pytest.approx(20.0)
    assert m.sensitivity(50) == m.rssi(50, 50)


def test_radio_model_validation():
    with pytest.raises(ValueError):
        RadioModel("free_space")
    with pytest.raises(ValueError):
        RadioModel(sensitivity_dbm=5.0)
    with pytest.raises(ValueError):
        RadioModel("log_distance", gamma=0)


def test_classification_boundaries():
    # potential radius at -65 dBm is 50 * 65 / 95 m
    r_pot = 50 * 65 / 95
    t = Topology({0: (0.0, 0.0), 1: (r_pot - 0.01, 0.0), 2: (40.0, 10.0), 3: (0.0, 50.0),
                  4: (0.0, 50.01)}, area=(100.0, 100.0))
    assert classify_link(0, 1, t) is LinkClass.POTENTIAL
    assert classify_link(0, 2, t) is LinkClass.EXTERNAL  # 41.2 m
    assert classify_link(0, 3, t) is LinkClass.EXTERNAL  # exactly at range
    assert classify_link(0, 4, t) is LinkClass.OUT_OF_RANGE


def test_self_link_rejected():
    t = Topology({0: (1.0, 1.0)})
    with pytest.raises(ValueError):
        classify_link(0, 0, t)
    with pytest.raises(ValueError):
        link_rssi(0, 0, t)


def test_positions_outside_area_rejected():
    with pytest.raises(ValueError):
        Topology({0: (101.0, 5.0)})
    with pytest.raises(ValueError):
        Topology({-1: (1.0, 5.0)})
    with pytest.raises(ValueError):
        Topology({0: (1.0, 1.0)}).with_node(0, (2.0, 2.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(0, 10_000))
def test_random_topology_is_deterministic_and_in_area(n, seed):
    a = generate_random_topology(n, (100.0, 80.0), seed)
    b = generate_random_topology(n, (100.0, 80.0), seed)
    assert a == b
    assert a.ids == list(range(n))
    assert all(0 <= x <= 100 and 0 <= y <= 80 for x, y in a.positions.values())


def test_random_topology_seed_changes_layout():
    assert generate_random_topology(10, seed=1).positions != generate_random_topology(10, seed=2).positions


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(0, 1000))
def test_link_classes_are_symmetric(n, seed):
    t = generate_random_topology(n, seed=seed)
    for a in t.ids:
        for b in t.ids:
            if a != b:
                assert classify_link(a, b, t) is classify_link(b, a, t)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 25), st.integers(0, 1000))
def test_csv_round_trip(n, seed):
    t = generate_random_topology(n, seed=seed)
    back = from_csv(to_csv(t), area=t.area, radio_range=t.radio_range)
    assert back.positions == t.positions


def test_csv_duplicate_id():
    with pytest.raises(ValueError):
        from_csv("id,x,y\n1,0,0\n1,2,2\n")


def test_neighbor_table_matches_brute_force():
    t = generate_random_topology(25, seed=3)
    table = t.neighbor_table()
    for a in t.ids:
        want = {b for b in t.ids if b != a and math.dist(t.positions[a], t.positions[b]) <= 50}
        assert set(table[a]) == want


def test_unit_disk_connectivity():
    assert is_unit_disk_connected(Topology({0: (0.0, 0.0), 1: (50.0, 0.0)}))
    assert not is_unit_disk_connected(Topology({0: (0.0, 0.0), 1: (50.5, 0.0)}))


def test_example_network_degrees():
    t = example_topology()
    deg = {a: sum(1 for b in t.ids if b != a and t.distance(a, b) <= t.radio_range) for a in t.ids}
    assert deg[3] == 7
    assert len(t.ids) == 14
    # the 9-10 link is in range but below the clustering threshold
    assert classify_link(9, 10, t) is LinkClass.EXTERNAL
