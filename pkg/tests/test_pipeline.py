import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from omc_beamsched.datagen import ChangeEvent, TraceSpec, gen_motion_trace
from omc_beamsched.fitting import predict
from omc_beamsched.motion import MotionModel1D
from omc_beamsched.pipeline import MAX_TIER, OmcConfig, OmcPipeline, TierState, run_slot, slot_clock

# tiers of slots 12..21 for a 20 mm step at 60 s (session starts at 20 s, so the
# validation sample of slot 13 at 59 s + 1 s is the first one after the step)
STEP_TIERS = [0, 1, 2, 3, 4, 4, 3, 2, 1, 0]


@pytest.fixture(scope="module")
def step_sets():
    from conftest import X_AXIS_BLOCK, Y_AXIS_BLOCK, Z_AXIS_BLOCK
    from omc_beamsched.formats import parse_declarations

    models = [parse_declarations(b) for b in (X_AXIS_BLOCK, Y_AXIS_BLOCK, Z_AXIS_BLOCK)]
    tr = gen_motion_trace(TraceSpec(models, 120000.0, events=[ChangeEvent("baseline", 60000.0, 20.0, fade=0)]))
    return OmcPipeline(tr).run_all()


def test_self_consistent_feed_stays_valid(axis_models):
    sets = OmcPipeline(gen_motion_trace(TraceSpec(axis_models, 90000.0))).run_all()
    assert len(sets) == 23
    assert all(s.valid and s.tiers == (0, 0, 0) for s in sets)
    assert all(p == 1.0 for s in sets for p in s.validity_probs)


def test_step_change_tier_sequence(step_sets):
    assert [s.tiers[0] for s in step_sets[12:22]] == STEP_TIERS
    assert all(len(set(s.tiers)) == 1 for s in step_sets)
    assert all(p < 0.8 for p in step_sets[13].validity_probs)
    assert [s.valid for s in step_sets[12:22]] == [True, True] + [False] * 5 + [True] * 3
    peak = max(i for i, s in enumerate(step_sets) if s.tiers[0] == MAX_TIER)
    assert step_sets[peak + 4].tiers == (0, 0, 0)


def test_fit_failure_forces_gap(step_sets):
    s = step_sets[14]
    assert s.tiers == (2, 2, 2) and not s.valid and any(e is not None for e in s.errors)


def test_models_share_creation_time(step_sets):
    for k, s in enumerate(step_sets):
        assert s.slot_index == k and s.created_at == 20000.0 + 3000.0 * k


def test_flat_axis_does_not_invalidate(axis_models):
    flat = MotionModel1D(5088.0, 0.0, 1.0, [0] * 4, [0] * 4)
    tr = gen_motion_trace(TraceSpec([axis_models[0], flat, axis_models[2]], 60000.0))
    sets = OmcPipeline(tr).run_all()
    assert all(s.valid for s in sets)
    assert all(s.models[1].a == (0.0,) * 4 for s in sets)


def test_one_axis_tier_three_is_not_enough():
    assert not TierState((3, 0, 0)).invalid
    assert TierState((3, 4, 3)).invalid
    assert TierState((3,)).invalid


@given(st.lists(st.lists(st.booleans(), min_size=3, max_size=3), max_size=40))
def test_tier_machine_moves_one_step(outcomes):
    state = TierState.initial(3)
    for passed in outcomes:
        nxt = state.update(passed)
        for before, after, ok in zip(state.tiers, nxt.tiers, passed):
            assert 0 <= after <= MAX_TIER
            assert after == (max(0, before - 1) if ok else min(MAX_TIER, before + 1))
        state = nxt


def test_executor_gives_same_sets(axis_models):
    tr = gen_motion_trace(TraceSpec(axis_models, 45000.0, events=[ChangeEvent("baseline", 30000.0, 5.0, fade=0)]))
    plain = OmcPipeline(tr).run_all()
    with ThreadPoolExecutor(3) as ex:
        threaded = OmcPipeline(tr, executor=ex).run_all()
    assert plain == threaded


def test_feed_exhaustion_ends_cleanly(axis_models):
    tr = gen_motion_trace(TraceSpec(axis_models, 30000.0))
    pipe = OmcPipeline(tr)
    # the last sample is at 29982 ms, so slot 3 (29 s + 1 s lookahead) is already out
    assert pipe.model_set(2).slot_index == 2
    assert pipe.model_set(3) is None and pipe.exhausted
    assert pipe.model_set(0).slot_index == 0


def test_run_slot_direct(axis_models):
    tr = gen_motion_trace(TraceSpec(axis_models, 30000.0))
    ms, state = run_slot(tr, TierState.initial(3), OmcConfig(), 0)
    assert ms.created_at == 20000.0 and ms.valid and state.tiers == (0, 0, 0)
    # models are relative to the slot start
    i = tr.index_at(20000.0)
    assert predict(ms.models[0], tr.times[i] - 20000.0) == pytest.approx(tr.positions[i, 0])


def test_one_dimensional_feed(axis_models):
    sets = OmcPipeline(gen_motion_trace(TraceSpec([axis_models[0]], 40000.0))).run_all()
    assert all(s.dims == 1 and s.valid for s in sets)


def test_slot_clock():
    cfg = OmcConfig()
    assert list(slot_clock(0.0, cfg, end=9000.0)) == [0.0, 3000.0, 6000.0]
    assert len(list(slot_clock(0.0, cfg, end=600000.0))) == 200
    t = time.monotonic()
    assert list(slot_clock(0.0, OmcConfig(slot_interval=50.0), end=150.0, realtime=True)) == [0.0, 50.0, 100.0]
    assert time.monotonic() - t >= 0.09


def test_ten_minute_batch_is_fast(axis_models):
    tr = gen_motion_trace(TraceSpec(axis_models, 621000.0))
    t = time.monotonic()
    sets = OmcPipeline(tr).run_all()
    assert len(sets) == 200
    assert time.monotonic() - t < 60.0
