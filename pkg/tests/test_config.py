import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehdetect import (
    BatteryDistribution,
    LocalObservationModel,
    NetworkParams,
    PowerMap,
    Scenario,
    ScenarioError,
    SensorParams,
    convex_region_bounds,
    dumps_scenario,
    load_scenario,
    loads_scenario,
    validate_convex_region,
)

MINIMAL = """\
[network]
prior_h0 = 0.5
capacity = 4
unit_energy = 0.1
slot_seconds = 0.1
mean_harvest = 1.0
drop_fraction = 0.2
power_budget = 1.0

[sensor.1]
mean_gain = 1.0
noise_var = 1.0
p_f = 0.2
p_d = 0.9
outage_confidence = 0.9
thresholds = 0, 0.5, inf
"""


def test_minimal_scenario_parses():
    sc = loads_scenario(MINIMAL)
    assert sc.num_sensors == 1
    assert sc.network.capacity == 4
    assert sc.sensors[0].level_count == 2
    assert sc.network.prior_h1 == 0.5
    assert sc.network.unit_power == pytest.approx(1.0)


def test_bundled_scenarios_round_trip(toy_scenario, two_sensor_scenario):
    for sc in (toy_scenario, two_sensor_scenario):
        again = loads_scenario(dumps_scenario(sc))
        assert again == sc


def test_load_scenario_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_scenario(tmp_path / "nope.scn")


@pytest.mark.parametrize("mutation,fragment", [
    ("thresholds = 0.1, 0.5, inf", "first"),
    ("thresholds = 0, 0.5, 2.0", "last"),
    ("thresholds = 0, 0.5, 0.5, inf", "increas"),
    ("thresholds = 0, inf, 1.0, inf", "last"),
    ("thresholds = 0, , inf", "empty"),
    ("p_f = 0.9", "p_f"),          # p_f >= p_d
    ("p_f = nan", "nan"),
    ("mean_gain = inf", "finite"),
    ("mean_gain = -1.0", "mean_gain"),
    ("outage_confidence = 1.0", "outage_confidence"),
])
def test_sensor_field_errors(mutation, fragment):
    key = mutation.split(" =")[0]
    lines = [
        mutation if line.startswith(key + " ") else line
        for line in MINIMAL.splitlines()
    ]
    with pytest.raises(ScenarioError) as err:
        loads_scenario("\n".join(lines))
    assert fragment in str(err.value)
    assert "sensor.1" in str(err.value)


@pytest.mark.parametrize("mutation,fragment", [
    ("prior_h0 = 1.0", "prior_h0"),
    ("capacity = 0", "capacity"),
    ("capacity = 2.5", "integer"),
    ("unit_energy = 0", "unit_energy"),
    ("drop_fraction = 1.0", "drop_fraction"),
    ("power_budget = -2", "power_budget"),
])
def test_network_field_errors(mutation, fragment):
    key = mutation.split(" =")[0]
    lines = [
        mutation if line.startswith(key + " ") else line
        for line in MINIMAL.splitlines()
    ]
    with pytest.raises(ScenarioError) as err:
        loads_scenario("\n".join(lines))
    assert fragment in str(err.value)


def test_unknown_keys_rejected():
    with pytest.raises(ScenarioError, match="unknown key"):
        loads_scenario(MINIMAL + "bogus = 1\n")
    with pytest.raises(ScenarioError, match="unknown key"):
        loads_scenario(MINIMAL.replace("power_budget = 1.0",
                                       "power_budget = 1.0\ntypo_key = 3"))


def test_sensor_numbering_must_be_consecutive():
    text = MINIMAL.replace("[sensor.1]", "[sensor.2]")
    with pytest.raises(ScenarioError, match="consecutive"):
        loads_scenario(text)


def test_missing_section_and_keys():
    with pytest.raises(ScenarioError, match="network"):
        loads_scenario("[sensor.1]\nmean_gain = 1\n")
    with pytest.raises(ScenarioError, match="missing required key"):
        loads_scenario(MINIMAL.replace("mean_harvest = 1.0\n", ""))


def test_rates_and_local_model_are_exclusive():
    text = MINIMAL + "local_amplitude = 2.0\nlocal_noise_sigma = 1.0\nlocal_lrt_threshold = 1.0\n"
    with pytest.raises(ScenarioError, match="not both"):
        loads_scenario(text)
    # incomplete trio
    text = MINIMAL.replace("p_f = 0.2\np_d = 0.9\n", "local_amplitude = 2.0\n")
    with pytest.raises(ScenarioError, match="local"):
        loads_scenario(text)


def test_local_model_derives_rates_and_round_trips():
    text = MINIMAL.replace(
        "p_f = 0.2\np_d = 0.9\n",
        "local_amplitude = 2.0\nlocal_noise_sigma = 1.0\nlocal_lrt_threshold = 1.0\n",
    )
    sc = loads_scenario(text)
    sensor = sc.sensors[0]
    assert sensor.local_obs is not None
    assert 0.0 < sensor.p_f < sensor.p_d < 1.0
    dumped = dumps_scenario(sc)
    assert "local_amplitude" in dumped
    assert "p_f =" not in dumped  # derived rates stay derived
    assert loads_scenario(dumped) == sc


@st.composite
def scenarios(draw):
    prior = draw(st.floats(0.05, 0.95))
    capacity = draw(st.integers(1, 12))
    n_sensors = draw(st.integers(1, 3))
    sensors = []
    for _ in range(n_sensors):
        p_f = draw(st.floats(0.01, 0.5))
        p_d = draw(st.floats(p_f + 0.05, 0.99))
        n_edges = draw(st.integers(1, 4))
        interior = sorted(draw(st.lists(
            st.floats(0.01, 5.0), min_size=n_edges, max_size=n_edges,
            unique=True)))
        sensors.append(SensorParams(
            mean_gain=draw(st.floats(0.1, 5.0)),
            noise_var=draw(st.floats(0.1, 4.0)),
            p_f=p_f, p_d=p_d,
            outage_confidence=draw(st.floats(0.5, 0.99)),
            thresholds=(0.0, *interior, math.inf),
        ))
    network = NetworkParams(
        prior_h0=prior,
        capacity=capacity,
        unit_energy=draw(st.floats(0.01, 1.0)),
        slot_seconds=draw(st.floats(0.01, 2.0)),
        mean_harvest=draw(st.floats(0.05, 5.0)),
        drop_fraction=draw(st.floats(0.01, 0.9)),
        power_budget=draw(st.floats(0.1, 100.0)),
    )
    return Scenario(network=network, sensors=tuple(sensors))


@given(scenarios())
@settings(max_examples=60, deadline=None)
def test_round_trip_is_bit_exact(sc):
    again = loads_scenario(dumps_scenario(sc))
    assert again == sc


def test_battery_distribution_validation():
    with pytest.raises(ValueError):
        BatteryDistribution(psi=np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        BatteryDistribution(psi=np.array([-0.1, 1.1]))
    # tiny negative dust is forgiven and clipped
    psi = BatteryDistribution(psi=np.array([1.0 + 1e-14, -1e-14]))
    assert psi.psi[1] == 0.0
    assert psi.capacity == 1
    assert psi.cdf()[-1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        psi.psi[0] = 0.5  # frozen


def test_power_map_validation():
    ue, ts = 0.5, 1.0
    good_p = np.array([[0.0, 0.0], [0.0, 0.5]])
    good_u = np.array([[0, 0], [0, 1]])
    pm = PowerMap(powers=(good_p,), units=(good_u,), unit_energy=ue, slot_seconds=ts)
    assert pm.capacity == 1
    assert pm.num_sensors == 1
    with pytest.raises(ValueError, match="level 0"):
        PowerMap(powers=(np.array([[0.1, 0.0], [0.0, 0.0]]),),
                 units=(good_u,), unit_energy=ue, slot_seconds=ts)
    with pytest.raises(ValueError, match="causality"):
        PowerMap(powers=(good_p,), units=(np.array([[0, 0], [0, 2]]),),
                 unit_energy=ue, slot_seconds=ts)
    with pytest.raises(ValueError, match="causality"):
        PowerMap(powers=(np.array([[0.0, 0.0], [0.0, 0.8]]),),
                 units=(good_u,), unit_energy=ue, slot_seconds=ts)


def test_power_map_allows_ragged_levels():
    ue, ts = 0.5, 1.0
    p1 = np.zeros((2, 3))
    p2 = np.zeros((4, 3))
    u1 = np.zeros((2, 3), dtype=int)
    u2 = np.zeros((4, 3), dtype=int)
    pm = PowerMap(powers=(p1, p2), units=(u1, u2), unit_energy=ue, slot_seconds=ts)
    assert pm.capacity == 2
    # but the battery axis must agree
    with pytest.raises(ValueError, match="battery axis"):
        PowerMap(powers=(p1, np.zeros((2, 4))),
                 units=(u1, np.zeros((2, 4), dtype=int)),
                 unit_energy=ue, slot_seconds=ts)


def test_convex_region_bounds_and_membership():
    lo, hi = convex_region_bounds(0.2)
    assert lo == pytest.approx(0.65 - math.sqrt(1 + 12 * 0.2 - 12 * 0.04) / 4)
    assert hi == pytest.approx(0.65 + math.sqrt(1 + 12 * 0.2 - 12 * 0.04) / 4)
    assert lo < 0.9 < hi


def test_convex_region_of_bundled_sensors(two_sensor_scenario):
    assert validate_convex_region(two_sensor_scenario.sensors) == (True, True)


def test_scenario_replace_round_trip(two_sensor_scenario):
    # dataclasses.replace is how sweeps build variants; it must revalidate
    richer = replace(two_sensor_scenario,
                     network=replace(two_sensor_scenario.network, mean_harvest=9.0))
    assert richer.network.mean_harvest == 9.0
    with pytest.raises(ScenarioError):
        replace(two_sensor_scenario,
                network=replace(two_sensor_scenario.network, prior_h0=2.0))


def test_local_observation_model_validation():
    with pytest.raises(ValueError):
        LocalObservationModel(amplitude=-1.0, noise_sigma=1.0, threshold=0.0)
    with pytest.raises(ValueError):
        LocalObservationModel(amplitude=1.0, noise_sigma=0.0, threshold=0.0)
