import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from omc_beamsched.beams import BeamSpec
from omc_beamsched.datagen import TraceSpec, gen_motion_trace
from omc_beamsched.pipeline import OmcPipeline, SlotModelSet
from omc_beamsched.service import (
    STATUS_GAP,
    STATUS_OK,
    BeamService,
    ServiceConfig,
    build_queries,
    prioritize,
    verify_slot,
)


def model_set(models, valid=True, slot=0):
    return SlotModelSet(slot, 0.0, tuple(models), valid, (1.0,) * len(models), (0,) * len(models),
                        (None,) * len(models))


def test_symmetric_threshold_query():
    (q,) = build_queries(BeamSpec.symmetric("1", 1000, 5.0))
    assert (q.lower, q.upper, q.scope) == (-5.0, 5.0, 3000.0)


def test_3d_queries_pass_bounds_through():
    qs = build_queries(BeamSpec("1", 1000, ((-4, 6), (-3, 3), (-2, 2))))
    assert [(q.lower, q.upper) for q in qs] == [(-4, 6), (-3, 3), (-2, 2)]


def test_inverted_bounds_rejected():
    with pytest.raises(ValueError, match="lower bound"):
        build_queries(BeamSpec("1", 1000, ((3.0, -3.0),)))


def test_running_beam_first():
    beams = [BeamSpec.symmetric(str(i), 1000 * i, 10) for i in range(1, 6)]
    beams[3] = beams[3].with_progress(500, True, True)
    beams[1] = beams[1].with_progress(700, True, False)
    order = [b.id for b in prioritize(beams)]
    assert order[:2] == ["4", "2"]


def test_ties_broken_by_id():
    beams = [BeamSpec.symmetric(i, 1000, 10) for i in ("30", "4", "100")]
    assert [b.id for b in prioritize(beams)] == ["4", "30", "100"]


def test_interleaving_on_four_beams():
    # widths 10 / 8 (thresholds 5 / 4), times 1000 / 9000
    beams = [
        BeamSpec.symmetric("1", 9000, 5.0),
        BeamSpec.symmetric("2", 1000, 4.0),
        BeamSpec.symmetric("3", 9000, 4.0),
        BeamSpec.symmetric("4", 1000, 5.0),
    ]
    # by width: 1, 4, 2, 3; by time: 2, 4, 1, 3
    # picks: width -> 1, time -> 2, width -> 4, time -> 3
    assert [b.id for b in prioritize(beams)] == ["1", "2", "4", "3"]


@given(st.lists(st.tuples(st.integers(1, 10**5), st.integers(1, 10**5), st.floats(0.5, 30), st.booleans(), st.booleans()),
                max_size=30, unique_by=lambda r: r[0]))
def test_prioritize_is_a_permutation(rows):
    beams = [BeamSpec.symmetric(str(i), t, thr, started=s or r, running=r) for i, t, thr, s, r in rows]
    out = prioritize(beams)
    assert sorted(b.id for b in out) == sorted(b.id for b in beams)
    ranks = [0 if b.running else 1 if b.started else 2 for b in out]
    assert ranks == sorted(ranks)


def test_invalid_model_set_gives_gap(global_model):
    resp = verify_slot([BeamSpec.symmetric("1", 100, 10)], model_set([global_model], valid=False))
    assert resp.status == STATUS_GAP and resp.results == []
    assert verify_slot([], None).status == STATUS_GAP


def test_verdicts_match_step_oracle(global_model):
    beams = [BeamSpec("a", 1000, ((1.5, 3.5),)), BeamSpec("b", 1000, ((2.0, 3.5),)),
             BeamSpec.symmetric("c", 1000, 1.0), BeamSpec("d", 1000, ((3.0, 1.0),))]
    resp = verify_slot(beams, model_set([global_model]), workers=1)
    assert resp.status == STATUS_OK
    assert [r.beam_id for r in resp.results] == ["a", "b", "c", "d"]
    for beam, r in zip(beams[:3], resp.results):
        lo, hi = beam.bounds[0]
        assert r.deliverable == oracles.invariant_verdict(global_model, lo, hi, 3000.0)
        assert r.completed
    bad = resp.results[3]
    assert bad.error and not bad.deliverable and not bad.completed


def test_combined_is_minimum_over_axes(axis_models):
    ms = model_set([m.with_accuracy(85.0) for m in axis_models])
    beam = BeamSpec("7", 1000, ((-7.5, 0.5), (0.0, 3.5), (1.0, 2.6)))
    (r,) = verify_slot([beam], ms, workers=1, seed=3).results
    assert r.combined_p == min(e.p_hat for e in r.estimates)
    assert r.deliverable == (r.combined_p >= 0.5)
    (strict,) = verify_slot([beam], ms, cutoff=0.91, workers=1, seed=3).results
    assert strict.combined_p == r.combined_p and strict.deliverable == (r.combined_p >= 0.91)


def test_dimension_mismatch_is_per_beam_error(axis_models):
    (r,) = verify_slot([BeamSpec.symmetric("1", 100, 10)], model_set(axis_models), workers=1).results
    assert r.error and not r.deliverable


def test_seeded_results_repeat(global_model):
    ms = model_set([global_model.with_accuracy(85.0)])
    beams = [BeamSpec("a", 1000, ((1.5, 3.2),)), BeamSpec("b", 1000, ((1.2, 3.6),))]
    a = verify_slot(beams, ms, deadline=None, workers=1, seed=9)
    b = verify_slot(beams, ms, deadline=None, workers=4, seed=9)
    assert a.results == b.results


def test_deterministic_250_beams_in_slot(axis_models):
    beams = [BeamSpec(str(10000 + i), 1000 + i, ((-8 + i % 5, 4), (-2, 4), (0, 3))) for i in range(250)]
    t = time.monotonic()
    resp = verify_slot(beams, model_set(axis_models), deadline=3000.0)
    assert time.monotonic() - t < 3.0
    assert all(r.completed for r in resp.results)


def test_tight_deadline_returns_quickly(axis_models):
    ms = model_set([m.with_accuracy(85.0) for m in axis_models])
    beams = [BeamSpec(str(10000 + i), 1000, ((-8, 4), (-2, 4), (0, 3))) for i in range(250)]
    t = time.monotonic()
    resp = verify_slot(beams, ms, deadline=50.0, workers=4)
    assert time.monotonic() - t < 0.1
    assert len(resp.results) == 250
    incomplete = [r for r in resp.results if not r.completed]
    assert incomplete and not any(r.deliverable for r in incomplete)
    assert all(r.combined_p >= 0.5 for r in resp.results if r.deliverable)


def test_service_uses_pipeline(axis_models):
    tr = gen_motion_trace(TraceSpec([axis_models[0]], 40000.0))
    svc = BeamService(OmcPipeline(tr), ServiceConfig(deadline=None, workers=1))
    resp = svc.handle(0, [BeamSpec.symmetric("1", 100, 10.0), BeamSpec.symmetric("2", 100, 1.0)])
    assert resp.status == STATUS_OK and resp.deliverable_ids == {"1"}
    assert svc.handle(500, []).status == STATUS_GAP
