import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import find_peaks

from omc_beamsched.beams import BeamSpec
from omc_beamsched.datagen import ChangeEvent, TraceSpec, gen_beam_list, gen_motion_trace
from omc_beamsched.fitting import estimate_period
from omc_beamsched.formats import format_beam_list, format_trace
from omc_beamsched.motion import MotionModel1D, evaluate

SINE = MotionModel1D(4000.0, 0.0, 0.0, [0, 0, 0, 0], [3.0, 0, 0, 0])


def test_plain_trace_equals_model(axis_models):
    tr = gen_motion_trace(TraceSpec(axis_models, 30000.0))
    assert tr.dims == 3 and tr.times[1] == 38.0
    for k, m in enumerate(axis_models):
        assert np.array_equal(tr.positions[:, k], evaluate(m, tr.times))


def test_baseline_step_shifts_mean():
    tr = gen_motion_trace(TraceSpec([SINE], 120000.0, events=[ChangeEvent("baseline", 60000.0, 20.0)]))
    x = tr.positions[:, 0]

    def mean_over(t0):
        # four whole periods
        sel = (tr.times >= t0) & (tr.times < t0 + 16000.0)
        return x[sel].mean()

    assert mean_over(80000.0) - mean_over(40000.0) == pytest.approx(20.0, abs=0.1)
    # during the fade the offset is partial
    i = tr.index_at(61000.0)
    assert 5.0 < x[i] - evaluate(SINE, tr.times[i]) < 15.0


def test_amplitude_ramp_doubles_peak_to_peak():
    ev = ChangeEvent("amplitude", 60000.0, 2.0, fade=480000.0)
    tr = gen_motion_trace(TraceSpec([SINE], 600000.0, events=[ev]))
    x = tr.positions[:, 0]

    def p2p(lo, hi):
        seg = x[(tr.times >= lo) & (tr.times < hi)]
        return seg[find_peaks(seg)[0]].mean() - seg[find_peaks(-seg)[0]].mean()

    assert p2p(540000.0, 600000.0) / p2p(0.0, 60000.0) == pytest.approx(2.0, rel=0.01)


def test_period_change():
    ev = ChangeEvent("period", 30000.0, 1.25, fade=4000.0)
    tr = gen_motion_trace(TraceSpec([SINE], 90000.0, events=[ev]))
    assert estimate_period(tr.window(30000.0, 20000.0)) == pytest.approx(4000.0, rel=0.02)
    assert estimate_period(tr.window(90000.0, 20000.0)) == pytest.approx(5000.0, rel=0.02)


def test_noise_level_and_seed():
    spec = TraceSpec([SINE], 60000.0, noise=[0.2])
    a, b, c = gen_motion_trace(spec, seed=1), gen_motion_trace(spec, seed=1), gen_motion_trace(spec, seed=2)
    assert format_trace(a) == format_trace(b)
    assert not np.array_equal(a.positions, c.positions)
    resid = a.positions[:, 0] - evaluate(SINE, a.times)
    assert resid.std() == pytest.approx(0.2, rel=0.05)


def test_noise_event():
    tr = gen_motion_trace(TraceSpec([SINE], 60000.0, events=[ChangeEvent("noise", 30000.0, 0.5, fade=0)]), seed=0)
    resid = tr.positions[:, 0] - evaluate(SINE, tr.times)
    assert resid[tr.times < 30000.0].std() == 0.0
    assert resid[tr.times > 30000.0].std() == pytest.approx(0.5, rel=0.1)


def test_events_restricted_to_axes(axis_models):
    ev = ChangeEvent("baseline", 10000.0, 5.0, fade=0, axes=(1,))
    tr = gen_motion_trace(TraceSpec(axis_models, 20000.0, events=[ev]))
    assert np.array_equal(tr.positions[:, 0], evaluate(axis_models[0], tr.times))
    assert tr.positions[-1, 1] == pytest.approx(evaluate(axis_models[1], tr.times[-1]) + 5.0)


def test_overlapping_events_rejected():
    with pytest.raises(ValueError, match="overlapping"):
        TraceSpec([SINE], 60000.0, events=[ChangeEvent("baseline", 10000.0, 1.0, fade=5000.0),
                                           ChangeEvent("amplitude", 12000.0, 2.0)])


@pytest.mark.parametrize("kwargs", [
    {"kind": "wobble", "time": 0.0, "value": 1.0},
    {"kind": "period", "time": 0.0, "value": -1.0},
    {"kind": "noise", "time": 0.0, "value": -0.1},
    {"kind": "baseline", "time": 0.0, "value": 1.0, "fade": -1.0},
])
def test_bad_events(kwargs):
    with pytest.raises(ValueError):
        ChangeEvent(**kwargs)


def test_spec_from_json(tmp_path):
    (tmp_path / "x.decl").write_text(
        "const double period = 4000.0;\nconst double drift = 0.0;\ndouble base = 0.0;\n"
        "double a[4] = { 0.0, 0.0, 0.0, 0.0 };\ndouble b[4] = { 3.0, 0.0, 0.0, 0.0 };\n")
    (tmp_path / "spec.json").write_text(
        '{"axes": ["x.decl"], "duration": 10000, "noise": [0.1],'
        ' "events": [{"kind": "baseline", "time": 5000, "value": 2.0, "fade": 0}]}')
    spec = TraceSpec.from_json(tmp_path / "spec.json")
    assert spec.axes == [SINE] and spec.noise == [0.1] and spec.events[0].value == 2.0


# -- beam lists ---------------------------------------------------------------


def _stats(v):
    v = np.asarray(v, float)
    return np.array([v.min(), np.quantile(v, 0.25), np.median(v), v.mean(), np.quantile(v, 0.75), v.max()])


@pytest.mark.parametrize("n", [100, 1000])
def test_template_distribution_preserved(template, n):
    out = gen_beam_list(template, n, seed=4)
    for col in (lambda b: b.remaining_time, lambda b: b.threshold):
        ref = _stats([col(b) for b in template])
        got = _stats([col(b) for b in out])
        assert np.all(np.abs(got - ref) <= 0.05 * np.abs(ref))
    thr = [b.threshold for b in out]
    assert min(thr) >= 5.0 and max(thr) <= 31.0


def test_ids_unique_and_fresh(template):
    out = gen_beam_list(template, 1000, seed=0)
    ids = [b.id for b in out]
    assert len(set(ids)) == 1000
    assert all(10000 <= int(i) <= 99999 for i in ids)


def test_single_beam_within_range(template):
    (b,) = gen_beam_list(template, 1, seed=9)
    assert 1488 <= b.remaining_time <= 29738 and 5.0 <= b.threshold <= 31.0


def test_same_seed_same_list(template):
    assert format_beam_list(gen_beam_list(template, 50, seed=3)) == format_beam_list(gen_beam_list(template, 50, seed=3))
    assert gen_beam_list(template, 50, seed=3) != gen_beam_list(template, 50, seed=4)


def test_bad_requests(template):
    with pytest.raises(ValueError):
        gen_beam_list(template, 0)
    with pytest.raises(ValueError):
        gen_beam_list([], 5)


@given(
    st.lists(st.tuples(st.floats(1000, 2000), st.floats(50, 100)), min_size=2, max_size=20),
    st.integers(500, 1500), st.integers(0, 2**32 - 1),
)
def test_quantiles_preserved_on_random_templates(rows, n, seed):
    # tiny templates are the hard case: interpolation alone would bias the mean
    tmpl = [BeamSpec.symmetric(str(i), t, thr) for i, (t, thr) in enumerate(rows)]
    out = gen_beam_list(tmpl, n, seed=seed)
    for col in (lambda b: b.remaining_time, lambda b: b.threshold):
        ref = _stats([col(b) for b in tmpl])
        got = _stats([col(b) for b in out])
        assert np.all(np.abs(got - ref) <= 0.05 * np.abs(ref) + 1e-3)


def test_3d_template():
    tmpl = [BeamSpec(str(i), 1000 + 100 * i, ((-i - 1, i + 2), (-3, 3), (-2, 2 + i))) for i in range(10)]
    out = gen_beam_list(tmpl, 200, seed=1)
    assert all(b.dims == 3 and not b.problems() for b in out)
    xs = [b.bounds[0][1] for b in out]
    assert min(xs) == 2 and max(xs) == 11
