from dataclasses import replace

import numpy as np
import pytest

from dmuso.errors import Rejected
from dmuso.learning import RadioSolution, max_additional_categories, project_budget
from dmuso.scheduler import SliceState, admit_category, capacity_report, run_tti

from conftest import small_scenario


def fixed_allocator(r_each):
    def alloc(state, cats, s, c_m, c_md, warm):
        demand = np.full(len(s), float(r_each))
        return RadioSolution(project_budget(demand, state.cfg.r_max), demand,
                             np.zeros(len(s), dtype=bool), 1, True, 0.0, 0.0)
    return alloc


def make_state(seed=1, allocator=None, calibrate=True, **kw):
    cfg = small_scenario(**kw)
    return SliceState(cfg.slices[0], cfg, seed, 0, allocator=allocator, calibrate=calibrate)


def test_constraints_after_every_tti():
    st = make_state()
    prev_s = st.S
    for t in range(1, 60):
        st.advance_channel()
        rec = run_tti(st, t=t)
        assert rec.sum_r <= st.cfg.r_max
        assert rec.sum_b <= st.cfg.bandwidth_part_hz
        assert st.S >= prev_s
        prev_s = st.S
        assert st.schedule.total_capacity == len(st)
        counts = np.bincount(st.cat)[1:]
        assert st.schedule.capacities == {c + 1: int(n) for c, n in enumerate(counts) if n}


def test_static_channel_fixed_point():
    st = make_state(ue_count=4, m=2, f_u=2)      # no room to grow
    a = run_tti(st, t=1)
    r1, b1 = st.r.copy(), st.b.copy()
    b = run_tti(st, t=2)
    np.testing.assert_array_equal(st.r, r1)
    np.testing.assert_array_equal(st.b, b1)
    assert a.S == b.S == 2


def test_toy_growth_reaches_budget():
    st = make_state(allocator=fixed_allocator(1.0), calibrate=False, r_max=10.0, f_u=2, m=2,
                    ue_count=100)
    for t in range(1, 20):
        run_tti(st, t=t)
    assert st.S == 5
    assert st.delta == 5 - 2
    assert st.S == max_additional_categories(1.0, 2, 2, 10.0)[0]


def test_rejected_admission_rolls_back():
    st = make_state(allocator=fixed_allocator(1.0), calibrate=False, r_max=4.0, f_u=2, m=2,
                    ue_count=50)
    run_tti(st, t=1)
    before = st.fingerprint()
    n_rej = st.counters["rejected"]
    with pytest.raises(Rejected) as exc:
        admit_category(st)
    assert exc.value.demand == pytest.approx(6.0)
    assert st.fingerprint() == before
    assert st.counters["rejected"] == n_rej + 1


def test_first_category_admitted():
    st = make_state(allocator=fixed_allocator(1.0), calibrate=False, r_max=100.0, m=1, f_u=2)
    run_tti(st, t=1)
    assert st.S == 2


def test_capacity_report_without_growth():
    st = make_state(allocator=fixed_allocator(5.0), calibrate=False, r_max=60.0, m=6, f_u=2,
                    ue_count=200)
    for t in range(1, 4):
        run_tti(st, t=t)
    rep = capacity_report(st)
    assert (rep.S, rep.delta) == (6, 0)
    assert rep.thr_delta == 0.0
    assert rep.l_hat == sum(st.schedule.capacities.values()) == 12


def test_capacity_report_needs_a_tti():
    with pytest.raises(ValueError):
        capacity_report(make_state())


def test_unschedulable_service_releases_resources():
    st = make_state(ue_count=40)
    run_tti(st, t=1)
    ue = int(st.pool[0])
    run_tti(st, arrivals=[(ue, 1, 1e-40)], t=2)
    idx = np.flatnonzero(st.ue == ue)[0]
    assert not st.scheduled[idx]
    assert st.r[idx] == 0.0 and st.b[idx] == 0.0
    assert st.counters["unscheduled"] >= 1


def test_pool_exhaustion_stops_growth():
    st = make_state(allocator=fixed_allocator(0.1), calibrate=False, ue_count=8, m=2, f_u=2)
    for t in range(1, 10):
        run_tti(st, t=t)
    assert st.S == 4 and len(st.pool) == 0
    before = st.fingerprint()
    with pytest.raises(Rejected, match="unused UEs"):
        admit_category(st)
    assert st.fingerprint() == before


def test_learned_demand_over_budget_is_rejected():
    st = make_state(ue_count=8, m=2, f_u=2)
    run_tti(st, t=1)
    with pytest.raises(Rejected) as exc:
        admit_category(st)
    assert exc.value.demand > st.cfg.r_max
    assert st.S == 2


def test_budget_ordering_of_slices(table1):
    s_vals = []
    for idx in (0, 3):
        st = SliceState(table1.slices[idx], table1, 1, idx)
        for t in range(1, 101):
            st.advance_channel()
            run_tti(st, t=t)
        s_vals.append(st.S)
    assert s_vals[0] < s_vals[1]


def test_snapshot_restore_round_trip():
    st = make_state()
    for t in range(1, 5):
        st.advance_channel()
        run_tti(st, t=t)
    snap = st.snapshot()
    fp = st.fingerprint()
    st.advance_channel()
    run_tti(st, t=5)
    assert st.fingerprint() != fp
    st.restore(snap)
    assert st.fingerprint() == fp
