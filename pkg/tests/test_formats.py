import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import GLOBAL_BLOCK, SYSTEM_BLOCK, TEMPLATE_CSV, X_AXIS_BLOCK, Y_AXIS_BLOCK, Z_AXIS_BLOCK
from omc_beamsched.beams import BeamSpec
from omc_beamsched.formats import (
    DeclarationError,
    FormatError,
    MotionTrace,
    format_beam_list,
    format_trace,
    parse_beam_list,
    parse_declarations,
    parse_trace,
    read_trace,
    write_declarations,
    write_trace,
)
from omc_beamsched.motion import MotionModel1D

finite = st.floats(allow_nan=False, allow_infinity=False)


# -- declarations -------------------------------------------------------------


def test_x_axis_block():
    m = parse_declarations(X_AXIS_BLOCK)
    assert m.period == 5088.0 and m.base == -3.6508
    assert m.a[0] == -0.608 and m.b[0] == 2.5745
    assert m.a == (-0.608, 0.205, 0.0744, -0.0764)
    assert m.b == (2.5745, -0.414, -0.0149, 0.0096)
    assert math.copysign(1.0, m.drift) == -1.0
    assert m.accuracy == 100.0 and m.dt == 38.0


def test_global_block(global_model):
    assert global_model.period == 3469.0
    assert global_model.base == 2.5019
    assert global_model.accuracy == 100.0
    assert global_model.a == (-0.1959, 0.0295, -0.0022, -0.0169)
    assert global_model.b == (-0.4023, 0.0294, 0.033, 0.013)


@pytest.mark.parametrize("block", [X_AXIS_BLOCK, Y_AXIS_BLOCK, Z_AXIS_BLOCK])
def test_axis_blocks_print_back_verbatim(block):
    assert write_declarations(parse_declarations(block)) == block


def test_global_block_round_trip(global_model):
    again = parse_declarations(write_declarations(global_model))
    assert again == global_model


def test_accuracy_and_timer_are_written_when_not_default():
    m = MotionModel1D(4000.0, 0.0, 1.0, [1, 0, 0, 0], [0] * 4, accuracy=85.0, dt=20.0)
    text = write_declarations(m)
    assert "const double accuracy = 85.0;" in text and "Clock = Timer(20);" in text
    assert parse_declarations(text) == m


@given(
    st.floats(1e-3, 1e6), finite, finite,
    st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=4, max_size=4),
    st.floats(0, 100),
)
def test_round_trip_is_bit_exact(period, drift, base, a, b, acc):
    m = MotionModel1D(period, drift, base, a, b, accuracy=acc)
    back = parse_declarations(write_declarations(m))
    for x, y in zip((m.period, m.drift, m.base, m.accuracy, *m.a, *m.b),
                    (back.period, back.drift, back.base, back.accuracy, *back.a, *back.b)):
        assert x.hex() == y.hex()
    assert write_declarations(back) == write_declarations(m)


def test_wrong_arity_names_array():
    text = X_AXIS_BLOCK.replace("double a[4] = { -0.608, 0.205, 0.0744, -0.0764 };",
                                "double a[3] = { -0.608, 0.205, 0.0744 };")
    with pytest.raises(DeclarationError, match=r"line 5: array 'a'"):
        parse_declarations(text)


def test_missing_field_reported():
    text = X_AXIS_BLOCK.replace("double base = -3.6508;\n", "")
    with pytest.raises(DeclarationError, match="base"):
        parse_declarations(text)


def test_malformed_number_has_line():
    with pytest.raises(DeclarationError, match="line 1"):
        parse_declarations(X_AXIS_BLOCK.replace("5088.0", "50x8"))


def test_nan_rejected():
    m = MotionModel1D(4000.0, 0.0, 0.0, [0] * 4, [0] * 4)
    object.__setattr__(m, "base", math.nan)
    with pytest.raises(ValueError):
        write_declarations(m)
    with pytest.raises(DeclarationError):
        parse_declarations(X_AXIS_BLOCK.replace("-3.6508", "nan"))


def test_system_block_sets_step():
    m = parse_declarations(GLOBAL_BLOCK + SYSTEM_BLOCK.replace("Timer(38)", "Timer(50)"))
    assert m.dt == 50.0


# -- motion traces ------------------------------------------------------------


def test_trace_round_trip_1d(tmp_path):
    tr = MotionTrace(np.arange(5) * 38.0, np.array([0.1, -0.2, 0.3, 1 / 3, 2.0]))
    write_trace(tr, tmp_path / "t.csv")
    back = read_trace(tmp_path / "t.csv")
    assert np.array_equal(back.times, tr.times) and np.array_equal(back.positions, tr.positions)
    assert format_trace(back) == format_trace(tr)


@given(st.lists(st.tuples(st.floats(0.001, 100), finite, finite, finite), min_size=1, max_size=30))
def test_trace_round_trip_3d(rows):
    times = np.cumsum([r[0] for r in rows])
    pos = np.array([r[1:] for r in rows])
    tr = MotionTrace(times, pos)
    back = parse_trace(format_trace(tr))
    assert np.array_equal(back.times, times) and np.array_equal(back.positions, pos)


@pytest.mark.parametrize("text,match", [
    ("", "header"),
    ("t,x\n0,1\n", "line 1"),
    ("t[ms],x[mm]\n0,1\n38\n", "line 3: expected 2 columns"),
    ("t[ms],x[mm]\n0,1\n38,1,2\n", "line 3: expected 2 columns"),
    ("t[ms],x[mm]\n0,1\n38,zz\n", "line 3, column 2"),
    ("t[ms],x[mm]\n0,1\n0,2\n", "line 3: timestamps"),
    ("t[ms],x[mm]\n", "no samples"),
])
def test_trace_errors(text, match):
    with pytest.raises(FormatError, match=match):
        parse_trace(text)


def test_trace_lookup():
    tr = MotionTrace([0.0, 38.0, 76.0], [1.0, 2.0, 3.0])
    assert tr.index_at(50.0) == 1 and tr.index_at(76.0) == 2
    assert tr.nearest_index(60.0) == 2 and tr.nearest_index(-5) == 0
    w = tr.window(76.0, 40.0)
    assert list(w.times) == [38.0, 76.0]
    with pytest.raises(ValueError):
        tr.index_at(-1.0)


# -- beam lists ---------------------------------------------------------------


def test_template_parses(template):
    assert len(template) == 19
    assert template[0] == BeamSpec.symmetric("80731", 24281, 5.0)
    assert format_beam_list(template) == TEMPLATE_CSV


ids = st.text("0123456789ABCDEF", min_size=1, max_size=8)


@given(st.lists(st.tuples(ids, st.integers(1, 10**6), st.floats(0, 100)), min_size=1, max_size=20,
                unique_by=lambda r: r[0]))
def test_beam_list_round_trip_1d(rows):
    beams = [BeamSpec.symmetric(i, t, thr) for i, t, thr in rows]
    text = format_beam_list(beams)
    assert parse_beam_list(text) == beams
    assert format_beam_list(parse_beam_list(text)) == text


@given(st.lists(st.tuples(ids, st.floats(0.5, 1e6), st.lists(st.floats(-50, 50), min_size=6, max_size=6)),
                min_size=1, max_size=20, unique_by=lambda r: r[0]))
def test_beam_list_round_trip_3d(rows):
    beams = []
    for i, t, v in rows:
        v = sorted(v[:2]) + sorted(v[2:4]) + sorted(v[4:])
        beams.append(BeamSpec(i, t, tuple(zip(v[0::2], v[1::2]))))
    text = format_beam_list(beams)
    assert parse_beam_list(text) == beams
    assert format_beam_list(parse_beam_list(text)) == text


@pytest.mark.parametrize("body,match", [
    ("1,100,5\n1,200,5\n", "line 3, column 1: duplicate"),
    ("1,0,5\n", "line 2, column 2"),
    ("1,100,-5\n", "line 2, column 3"),
    ("1,100\n", "line 2: expected 3 columns"),
    ("1,100,5,6\n", "line 2: expected 3 columns"),
    (",100,5\n", "column 1"),
])
def test_beam_list_errors(body, match):
    with pytest.raises(FormatError, match=match):
        parse_beam_list("ID,Time[ms],Threshold[mm]\n" + body)


def test_beam_list_3d_bounds_checked():
    head = "ID,Time[ms],XLower[mm],XUpper[mm],YLower[mm],YUpper[mm],ZLower[mm],ZUpper[mm]\n"
    beams = parse_beam_list(head + "7,100,-4,6,-3,3,-2,2\n")
    assert beams[0].bounds == ((-4, 6), (-3, 3), (-2, 2))
    with pytest.raises(FormatError, match="column 5: lower bound"):
        parse_beam_list(head + "7,100,-4,6,3,-3,-2,2\n")
