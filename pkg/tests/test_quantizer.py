from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from encloop.quantizer import (
    QuantizerSpec,
    ScalingState,
    advance_scaling,
    quantize_scalar,
    quantize_vector,
)

spec9 = QuantizerSpec(range_level=9)


def test_inside_zero_cell():
    assert quantize_scalar(0.4, spec9) == (0, False)


def test_left_closed_boundary():
    assert quantize_scalar(0.5, spec9) == (1, False)
    assert quantize_scalar(Fraction(1, 2), spec9) == (1, False)


def test_mirror_rule():
    assert quantize_scalar(-0.7, spec9) == (-1, False)
    # mirrored boundary: cells are right-closed on the negative axis
    assert quantize_scalar(Fraction(-3, 2), spec9) == (-2, False)


def test_tie_at_minus_half_resolves_to_zero():
    assert quantize_scalar(Fraction(-1, 2), spec9) == (0, False)


def test_saturation_clamps_and_flags():
    spec = QuantizerSpec(range_level=3)
    assert quantize_scalar(10, spec) == (3, True)
    assert quantize_scalar(-10, spec) == (-3, True)
    assert quantize_scalar(Fraction(7, 2), spec) == (3, True)  # exactly (2R+1)/2
    assert quantize_scalar(Fraction(7, 2) - Fraction(1, 10**9), spec)[1] is False


def test_unbounded_quantizer():
    assert quantize_scalar(10**30 + Fraction(1, 3), None) == (10**30, False)


def test_vector_elementwise_and_flag():
    assert quantize_vector([0.4, -0.7], spec9) == ([0, -1], False)
    assert quantize_vector([0, 0, 0], spec9) == ([0, 0, 0], False)
    vals, sat = quantize_vector([spec9.range_level + 1], spec9)
    assert vals == [spec9.range_level] and sat


@settings(max_examples=200, deadline=None)
@given(st.fractions(min_value=Fraction(-8), max_value=Fraction(8), max_denominator=1000))
def test_error_at_most_half_when_unsaturated(chi):
    psi, sat = quantize_scalar(chi, spec9)
    assert not sat
    assert abs(psi - chi) <= Fraction(1, 2)


@settings(max_examples=200, deadline=None)
@given(st.fractions(min_value=Fraction(1, 2), max_value=Fraction(8), max_denominator=997))
def test_mirror_symmetry_away_from_boundary(chi):
    if chi == Fraction(1, 2):
        return
    assert quantize_scalar(-chi, spec9)[0] == -quantize_scalar(chi, spec9)[0]


@settings(max_examples=200, deadline=None)
@given(
    st.fractions(min_value=Fraction(-8), max_value=Fraction(8), max_denominator=64),
    st.fractions(min_value=Fraction(0), max_value=Fraction(4), max_denominator=64),
)
def test_monotone(chi, step):
    lo, _ = quantize_scalar(chi, spec9)
    hi, _ = quantize_scalar(chi + step, spec9)
    assert lo <= hi


class TestScaling:
    def test_three_halvings(self):
        s = ScalingState(l=1, omega=Fraction(1, 2))
        for _ in range(3):
            s = advance_scaling(s)
        assert s.l == Fraction(1, 8) and s.t == 3

    def test_omega_one_rejected(self):
        with pytest.raises(ValueError):
            ScalingState(l=1, omega=1)

    def test_nonpositive_zoom_rejected(self):
        with pytest.raises(ValueError):
            ScalingState(l=0, omega=Fraction(1, 2))

    def test_ten_thousandth_zoom_exact(self):
        s = ScalingState(l=1, omega=Fraction(1, 10000))
        s = advance_scaling(advance_scaling(s))
        assert s.l == Fraction(1, 10**8)

    def test_exact_power_accumulation(self):
        w = Fraction(3, 7)
        s = ScalingState(l=Fraction(2, 5), omega=w)
        for _ in range(11):
            s = advance_scaling(s)
        assert s.l == Fraction(2, 5) * w**11
