import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simdprop.machine import (CapacityError, CycleReport, Fault, FaultPlan, Machine,
                              MachineConfig, Switch, account, switch_exchange, switch_selftest)
from simdprop.reduction import register_patterns


def test_defaults():
    c = MachineConfig()
    assert (c.sram_words, c.dram_words, c.reg_words) == (16384, 524288, 256)
    assert c.free_sram == 15360
    assert c.clock_hz == 2.0e7


@pytest.mark.parametrize("kw", [{"num_procs": 0}, {"sram_words": -1}, {"table_reserve": 16384}])
def test_config_rejects_bad_values(kw):
    with pytest.raises(ValueError):
        MachineConfig(**kw)


@pytest.mark.parametrize("kind, count, cycles", [("fp", 1000, 1000), ("dram", 1, 4),
                                                 ("switch", 1, 4), ("sram", 3, 3)])
def test_account_costs(kind, count, cycles):
    r = account(CycleReport(), "forward", kind, count)
    assert r.forward == cycles == r.total


def test_account_rejects_unknowns():
    with pytest.raises(ValueError):
        account(CycleReport(), "forward", "teleport", 1)
    with pytest.raises(ValueError):
        account(CycleReport(), "lunch", "fp", 1)


@given(a=st.lists(st.integers(0, 10_000), min_size=5, max_size=5),
       b=st.lists(st.integers(0, 10_000), min_size=5, max_size=5))
def test_accounting_is_additive(a, b):
    phases = ["forward", "backward", "dram_transfer", "switch_comm", "update"]
    ra, rb, rab = CycleReport(), CycleReport(), CycleReport()
    for ph, x, y in zip(phases, a, b):
        account(ra, ph, "dram", x)
        account(rb, ph, "dram", y)
        account(rab, ph, "dram", x)
        account(rab, ph, "dram", y)
    assert ra + rb == rab
    assert rab.total == 4 * (sum(a) + sum(b))


def test_unmodeled_not_in_total():
    r = account(CycleReport(), "unmodeled", "switch", 10)
    assert r.unmodeled == 40 and r.total == 0


def test_identity_and_ring_shift():
    sw = Switch(4)
    ident = sw.register([0, 1, 2, 3])
    ring = sw.register([1, 2, 3, 0])
    v = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(switch_exchange(sw, ident, v), v)
    np.testing.assert_array_equal(switch_exchange(sw, ring, v), [4.0, 1.0, 2.0, 3.0])
    assert sw.exchanges == 2


@given(st.permutations(list(range(7))), st.lists(st.floats(-1e6, 1e6), min_size=7, max_size=7))
def test_switch_conserves_values(perm, values):
    sw = Switch(7)
    pid = sw.register(perm)
    out = switch_exchange(sw, pid, np.array(values))
    assert sorted(out) == sorted(values)
    for p, q in enumerate(perm):
        assert out[q] == values[p]


def test_non_bijection_rejected():
    with pytest.raises(ValueError):
        Switch(3).register([0, 0, 1])


def test_unknown_pattern():
    with pytest.raises(KeyError):
        switch_exchange(Switch(2), 5, np.zeros(2))


def test_pattern_limit():
    sw = Switch(2, MachineConfig(num_procs=2, max_permutations=2))
    sw.register([0, 1])
    sw.register([1, 0])
    with pytest.raises(CapacityError):
        sw.register([0, 1])


def test_selftest_healthy_tree_p5():
    m = Machine(MachineConfig(num_procs=5))
    ids = register_patterns("tree", m.switch)
    assert len(ids) == 4
    assert all(switch_selftest(m.switch).values())


def test_selftest_flags_exactly_the_faulty_pattern():
    plan = FaultPlan([Fault(2, 0, "corrupt_switch_value", 1.0, index=1)])
    m = Machine(MachineConfig(num_procs=8), plan)
    register_patterns("tree", m.switch)
    m.set_epoch(0)
    res = switch_selftest(m.switch)
    assert [pid for pid, ok in res.items() if not ok] == [1]


def test_fault_plan_validation_and_csv(tmp_path):
    plan = FaultPlan([Fault(1, 3, "corrupt_delta", 1e30, 7), Fault(0, -1, "corrupt_weight", 0.5)])
    path = tmp_path / "plan.csv"
    plan.write(path)
    assert FaultPlan.read(path) == plan
    with pytest.raises(ValueError):
        plan.validate(1)
    assert FaultPlan.read(io.StringIO("proc,epoch,kind,magnitude\n0,2,corrupt_delta,1\n")).faults[0].index == 0


def test_fault_activity():
    assert Fault(0, -1, "corrupt_delta", 1).active(17)
    assert Fault(0, 2, "corrupt_delta", 1).active(2)
    assert not Fault(0, 2, "corrupt_delta", 1).active(3)
    with pytest.raises(ValueError):
        Fault(0, 1, "cosmic_ray", 1)


def test_capacity_ledger():
    m = Machine(MachineConfig(sram_words=4096, table_reserve=1024, dram_words=1000))
    m.allocate(sram=3000, dram=900)
    with pytest.raises(CapacityError):
        m.allocate(sram=100)
    with pytest.raises(CapacityError):
        m.allocate(dram=101)
    m.allocate(sram=72, dram=100)
