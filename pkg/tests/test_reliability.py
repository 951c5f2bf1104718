import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from tiermem.geometry import DEFAULT_TABLES, Op, Segment, Unit
from tiermem.reliability import (ENERGY_PROVENANCE, AgingAccumulator, EnduranceInputs, EnergyLedger,
                                 InvalidInput, access_stress, accumulate_aging, area_overhead,
                                 endurance_lifetime, energy_totals, reliability, reliability_and_lifetime)


def test_endurance_random_exact():
    rng = random.Random(11)
    for _ in range(100):
        n_wl = rng.randint(1, 10 ** 7)
        n_e = rng.randint(1, 10 ** 9)
        n_f = Fraction(rng.randint(1, 10 ** 6), rng.randint(1, 1000))
        got = endurance_lifetime(EnduranceInputs(n_wl, n_f, n_e))
        assert isinstance(got, Fraction)
        assert got == Fraction(n_wl) * n_e / n_f


def test_endurance_rejects_bad_inputs():
    with pytest.raises(InvalidInput):
        endurance_lifetime(EnduranceInputs(10, 0))
    with pytest.raises(InvalidInput):
        endurance_lifetime(EnduranceInputs(0, 1))


def test_endurance_default_wordlines():
    # 8 partitions x 128 tiles x 4096 wordlines per PCM bank
    assert endurance_lifetime(EnduranceInputs(8 * 128 * 4096, 1000)) == Fraction(8 * 128 * 4096 * 10 ** 7, 1000)


accesses = st.lists(st.tuples(st.fractions(min_value=Fraction(1, 10), max_value=10, max_denominator=100),
                              st.fractions(min_value=Fraction(1, 10), max_value=200, max_denominator=100)),
                    max_size=30)


@given(accesses, accesses)
def test_aging_is_additive(a, b):
    whole = AgingAccumulator().extend(a + b).aging
    assert whole == AgingAccumulator().extend(a).aging + AgingAccumulator().extend(b).aging


@given(accesses)
def test_aging_matches_direct_sum(a):
    acc = AgingAccumulator(g0=3, a=2, b=1)
    for x in a:
        accumulate_aging(acc, x)
    assert acc.aging == sum((3 * v ** 2 * t for v, t in a), Fraction(0))
    assert acc.n_accesses == len(a)


@given(st.lists(st.sampled_from([Op.READ, Op.WRITE]), min_size=1, max_size=40))
def test_near_ages_strictly_less_than_far(ops):
    near = AgingAccumulator().extend(access_stress(Unit.PCM, Segment.NEAR, o) for o in ops)
    far = AgingAccumulator().extend(access_stress(Unit.PCM, Segment.FAR, o) for o in ops)
    assert near.aging < far.aging


def test_access_stress_values():
    v, t = access_stress(Unit.PCM, Segment.NEAR, Op.READ)
    assert (v, t) == (Fraction("1.2"), Fraction("41.25"))
    v, t = access_stress(Unit.PCM, Segment.FAR, Op.WRITE)
    assert (v, t) == (Fraction("7.1"), Fraction("161.55"))
    assert access_stress(Unit.DRAM, Segment.NEAR, Op.READ) is None


def test_reliability_basics():
    assert reliability(0) == 1.0
    assert AgingAccumulator().reliability() == 1.0
    assert reliability(Fraction(1, 2), beta=2) == pytest.approx(math.exp(-0.25))
    assert reliability(1) > reliability(2)
    with pytest.raises(InvalidInput):
        reliability(1, beta=0)
    with pytest.raises(InvalidInput):
        AgingAccumulator().add(0, 1)
    with pytest.raises(InvalidInput):
        AgingAccumulator().add(1, 1, n=-1)


def test_non_integer_exponent_falls_back_to_float():
    acc = AgingAccumulator(a=Fraction(1, 2)).add(4, 1)
    assert float(acc.aging) == pytest.approx(2.0)


def test_lifetime_trapezoid():
    rs, la = reliability_and_lifetime([(0, 0), (10, 1), (20, 2)])
    assert rs[0] == 1.0
    assert la == pytest.approx(10 * (1 + math.exp(-1)) / 2 + 10 * (math.exp(-1) + math.exp(-2)) / 2)
    assert reliability_and_lifetime([])[1] == 0.0


def test_area_overheads():
    dram = area_overhead(Fraction("11.5"), Fraction("115.2"), 512)
    pcm = area_overhead(Fraction("9.6"), 384, 4096, extra_isolation=2)
    assert f"{float(dram) * 100:.3g}" == "1.83"
    assert f"{float(pcm) * 100:.2f}" == "0.43"
    assert dram == Fraction("11.5") / (Fraction("115.2") + 512)
    with pytest.raises(InvalidInput):
        area_overhead(1, 0, 0)


def test_energy_is_linear():
    ledger = EnergyLedger()
    counts = {(Unit.PCM, Segment.FAR, True): 3, (Unit.DRAM, Segment.NEAR, False): 2}
    d, m = energy_totals(ledger, counts, 5, {(Unit.PCM, Segment.NEAR, True): 1}, 2)
    assert d == 3 * 8000 + 2 * 800 + 5 * ledger.burst_pj
    assert m == 6000 + 2 * ledger.burst_pj
    doubled = {k: 2 * v for k, v in counts.items()}
    assert energy_totals(ledger, doubled, 10, {}, 0)[0] == 2 * d


def test_energy_config_override():
    led = EnergyLedger.from_dict({"burst_pj": 1, "access_pj": [{"unit": "pcm", "segment": "near",
                                                                "op": "write", "pj": 5}]})
    assert led.table[(Unit.PCM, Segment.NEAR, Op.WRITE)] == 5.0 and led.burst_pj == 1.0
    assert led.to_dict()["provenance"] == ENERGY_PROVENANCE
    assert DEFAULT_TABLES is not None
