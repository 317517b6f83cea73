import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from heislab.carnot_core import (
    HEISENBERG_B,
    IDENTITY,
    CarnotPoint,
    CarnotSpec,
    GroupPoint,
    InvalidPointError,
    SpecError,
    carnot_dilate,
    carnot_identity,
    carnot_inverse,
    carnot_multiply,
    carnot_pseudo_norm_sq,
    dilate,
    format_spec,
    free_step_two_spec,
    heisenberg_spec,
    inverse,
    load_spec,
    multiply,
    parse_spec,
    pseudo_norm_sq,
)

coord = st.floats(min_value=-10, max_value=10, allow_nan=False)
points = st.builds(GroupPoint, coord, coord, coord)


def close(a, b, tol=1e-12):
    return all(abs(u - v) <= tol * max(1.0, abs(u), abs(v)) for u, v in zip(a, b))


def test_product_worked_example():
    assert multiply(GroupPoint(1, 0, 0), GroupPoint(0, 1, 0)) == GroupPoint(1, 1, 0.5)
    assert multiply(GroupPoint(0, 1, 0), GroupPoint(1, 0, 0)) == GroupPoint(1, 1, -0.5)


def test_commutator_of_unit_steps_is_vertical():
    a, b = GroupPoint(1.0, 0, 0), GroupPoint(0, 1.0, 0)
    c = multiply(multiply(a, b), multiply(inverse(a), inverse(b)))
    assert c == GroupPoint(0.0, 0.0, 1.0)


@given(points, points, points)
def test_associative(g, h, k):
    assert close(multiply(multiply(g, h), k), multiply(g, multiply(h, k)), 1e-12)


@given(points)
def test_inverse_and_identity(g):
    assert multiply(g, inverse(g)) == GroupPoint(0.0, 0.0, 0.0)
    assert multiply(IDENTITY, g) == g


@given(points, points, st.floats(min_value=0.01, max_value=10))
def test_dilation_is_automorphism(g, h, lam):
    assert close(dilate(lam, multiply(g, h)), multiply(dilate(lam, g), dilate(lam, h)), 1e-11)


@given(points, st.floats(min_value=0.01, max_value=10))
def test_pseudo_norm_homogeneous(g, lam):
    assert math.isclose(pseudo_norm_sq(dilate(lam, g)), lam ** 2 * pseudo_norm_sq(g), rel_tol=1e-12, abs_tol=1e-300)


def test_center_commutes():
    g, c = GroupPoint(0.3, -1.2, 0.7), GroupPoint(0.0, 0.0, 2.5)
    assert multiply(g, c) == multiply(c, g)


def test_dilate_rejects_nonpositive():
    with pytest.raises(ValueError):
        dilate(0.0, GroupPoint(1, 1, 1))


def test_nonfinite_points_rejected():
    with pytest.raises(InvalidPointError):
        multiply(GroupPoint(np.nan, 0, 0), IDENTITY)
    with pytest.raises(InvalidPointError):
        inverse(GroupPoint(0, np.inf, 0))


def test_vectorized_bank():
    rng = np.random.default_rng(0)
    g = GroupPoint(*rng.standard_normal((3, 50)))
    h = GroupPoint(*rng.standard_normal((3, 50)))
    out = multiply(g, h)
    for i in range(50):
        single = multiply(GroupPoint(g.x[i], g.y[i], g.z[i]), GroupPoint(h.x[i], h.y[i], h.z[i]))
        assert single == GroupPoint(out.x[i], out.y[i], out.z[i])


# ---------------------------------------------------------------------------
# Carnot specs


def test_heisenberg_spec_matches_heisenberg_law_bitwise():
    rng = np.random.default_rng(1)
    spec = heisenberg_spec()
    g = GroupPoint(*rng.standard_normal((3, 1000)))
    h = GroupPoint(*rng.standard_normal((3, 1000)))
    a = CarnotPoint(np.stack([g.x, g.y], -1), g.z[:, None])
    b = CarnotPoint(np.stack([h.x, h.y], -1), h.z[:, None])
    c = carnot_multiply(spec, a, b)
    ref = multiply(g, h)
    assert np.array_equal(c.x[:, 0], ref.x) and np.array_equal(c.x[:, 1], ref.y)
    assert np.array_equal(c.z[:, 0], ref.z)


@pytest.mark.parametrize("spec", [heisenberg_spec(), free_step_two_spec(3), free_step_two_spec(4)])
def test_carnot_group_axioms(spec):
    rng = np.random.default_rng(2)
    a, b, c = (CarnotPoint(rng.standard_normal((200, spec.d)), rng.standard_normal((200, spec.m))) for _ in range(3))
    mul = lambda p, q: carnot_multiply(spec, p, q)
    lhs, rhs = mul(mul(a, b), c), mul(a, mul(b, c))
    assert np.max(np.abs(lhs.x - rhs.x)) <= 1e-12 and np.max(np.abs(lhs.z - rhs.z)) <= 1e-12
    e = mul(a, carnot_inverse(spec, a))
    assert np.all(e.x == 0) and np.max(np.abs(e.z)) == 0
    lam = 1.7
    lhs = carnot_dilate(spec, lam, mul(a, b))
    rhs = mul(carnot_dilate(spec, lam, a), carnot_dilate(spec, lam, b))
    assert np.max(np.abs(lhs.z - rhs.z)) <= 1e-12
    n = carnot_pseudo_norm_sq(spec, carnot_dilate(spec, lam, a))
    assert np.allclose(n, lam ** 2 * carnot_pseudo_norm_sq(spec, a), rtol=1e-12)
    ident = carnot_identity(spec)
    assert ident.x.shape == (spec.d,) and ident.z.shape == (spec.m,)


def test_free_spec_shape():
    spec = free_step_two_spec(3)
    assert (spec.d, spec.m) == (3, 3)


def test_spec_rejects_non_skew():
    with pytest.raises(SpecError, match="skew"):
        CarnotSpec(np.array([[[0.0, 1.0], [1.0, 0.0]]]))


def test_spec_rejects_dependent_stack():
    with pytest.raises(SpecError, match="dependent"):
        CarnotSpec(np.array([HEISENBERG_B, 2 * HEISENBERG_B]))


def test_spec_tolerance_is_configurable():
    B = HEISENBERG_B + np.array([[0.0, 1e-9], [0.0, 0.0]])
    with pytest.raises(SpecError):
        CarnotSpec(B)
    assert CarnotSpec(B, skew_tol=1e-8).d == 2


def test_check_point_shapes():
    spec = free_step_two_spec(3)
    with pytest.raises(ValueError):
        carnot_multiply(spec, CarnotPoint(np.zeros(2), np.zeros(3)), carnot_identity(spec))


SPEC_TEXT = """# Heisenberg
d = 2
m = 1
B1 =
  0 -1
  1  0
"""


def test_parse_and_format_round_trip(tmp_path):
    spec = parse_spec(SPEC_TEXT)
    assert np.array_equal(spec.B[0], HEISENBERG_B)
    p = tmp_path / "free.spec"
    p.write_text(format_spec(free_step_two_spec(3)))
    assert np.array_equal(load_spec(p).B, free_step_two_spec(3).B)


@pytest.mark.parametrize(
    "text, line",
    [
        ("d = 2\nm = 1\nB1 =\n 0 -1\n 1 1\n", ":3:"),
        ("d = 2\nm = 1\nB1 =\n 0 -1 3\n 1 0\n", ":4:"),
        ("d = 2\nm = x\n", ":2:"),
        ("d = 2\nm = 1\nfoo = 3\n", ":3:"),
        ("d = 2\nm = 1\nB1 =\n 0 a\n 1 0\n", ":4:"),
    ],
)
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(SpecError, match=line):
        parse_spec(text, "s")


def test_parse_missing_block():
    with pytest.raises(SpecError, match="B1"):
        parse_spec("d = 2\nm = 1\n", "s")
