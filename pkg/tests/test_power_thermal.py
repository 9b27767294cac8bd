import math

import pytest
from hypothesis import given, strategies as st

from voxel.chipspec import ChipSpec
from voxel.power_thermal import (COMPONENTS, Activity, EnergyConstants, EnergyReport, ThermalError, Throttle,
                                 energy_report, event_energy, static_power)

K = EnergyConstants()


def test_idle_interval_has_only_static_energy():
    r = energy_report(ChipSpec(), K, Activity(), 1.6e9)
    assert sum(r.dynamic.values()) == 0
    assert all(r.static[c] > 0 for c in COMPONENTS)
    # one second of static power
    assert sum(r.static.values()) == pytest.approx(sum(static_power(ChipSpec(), K).values()))


def test_dynamic_energy_per_unit():
    e = event_energy(Activity(macs=10 ** 12), K)
    assert e["SA"] == pytest.approx(K.mac_pj)
    assert e["DRAM"] == 0


def test_density_at_limit_not_throttled():
    spec = ChipSpec()
    t = Throttle(spec, K, density_override=lambda c: 0.7)
    assert t.factor(0, Activity(), 100) == 1.0


def test_double_density_halves_frequency():
    t = Throttle(ChipSpec(), K, density_override=lambda c: 1.4)
    assert t.factor(3, Activity(), 100) == 2.0
    assert t.state.throttle == {3: 2.0}


def test_dram_only_activity_below_limit_not_throttled():
    t = Throttle(ChipSpec(), K)
    assert t.factor(0, Activity(dram_bytes=4096, tsv_bytes=4096), 1000) == 1.0


def test_static_power_over_limit_is_rejected():
    with pytest.raises(ThermalError):
        Throttle(ChipSpec(power_density_limit=0.01), K)


def test_infinite_limit_is_inactive():
    t = Throttle(ChipSpec(power_density_limit=math.inf), K)
    assert not t.active
    assert t.factor(0, Activity(macs=10 ** 15), 1) == 1.0


def test_constants_file_loads_and_rejects_unknown(tmp_path):
    assert isinstance(EnergyConstants.load(), EnergyConstants)
    f = tmp_path / "e.json"
    f.write_text('{"mac_pj": 1.0, "flux_pj": 2}')
    with pytest.raises(ValueError, match="flux_pj"):
        EnergyConstants.load(str(f))


counts = st.integers(0, 10 ** 12)


@given(counts, counts, counts, st.floats(0, 1e12), counts, counts, st.floats(1, 1e9))
def test_energy_identity(macs, vec, sram, hops, dram, tsv, cycles):
    act = Activity(macs, vec, sram, hops, dram, tsv)
    r = energy_report(ChipSpec(), K, act, cycles)
    assert r.identity_holds()
    rebuilt = EnergyReport.build(r.static, r.dynamic)
    assert rebuilt.total == r.total


@given(st.floats(0.01, 10), st.floats(0.1, 5))
def test_throttle_factor_brings_density_to_limit(density, limit):
    spec = ChipSpec(power_density_limit=limit)
    try:
        t = Throttle(spec, K, density_override=lambda c: density)
    except ThermalError:
        return
    f = t.factor(0, Activity(), 10)
    assert f >= 1.0
    assert density / f <= limit * (1 + 1e-12)
