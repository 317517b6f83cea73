import math
import random

import numpy as np
import pytest

from heislab import inequalities as ineq
from heislab.carnot_core import free_step_two_spec, heisenberg_spec
from heislab.estimators import McEstimate
from heislab.sampler import CarnotBank, PathBank, SeedPlan
from heislab.testfn import TestFunction, monomial, resolve, standard_suite


@pytest.fixture(scope="module")
def bank0():
    return PathBank(8000, 64, 8, 0.0, SeedPlan(31))


@pytest.fixture(scope="module")
def bank1():
    return PathBank(8000, 64, 8, 1.0, SeedPlan(32))


def est(v, ci=0.1):
    return McEstimate(v, ci, 100, 0)


def test_verdict_rule():
    assert ineq.make_report("t", "f", est(1.0), est(1.05)).verdict == "holds"
    assert ineq.make_report("t", "f", est(1.0), est(0.85)).verdict == "holds"
    assert ineq.make_report("t", "f", est(1.0), est(0.7)).verdict == "inconclusive"
    assert ineq.make_report("t", "f", est(1.0), est(0.3)).verdict == "violated"
    r = ineq.make_report("t", "f", est(1.0), est(0.7), hold_factor=2.0)
    assert r.verdict == "holds"


def test_deficit_bookkeeping_identity():
    rng = random.Random(0)
    for _ in range(20000):
        lhs = rng.uniform(0, 10) ** rng.choice([1, 3])
        rhs = lhs * rng.uniform(0.5, 2)
        r = ineq.make_report("t", "f", est(lhs), est(rhs))
        assert r.deficit + r.lhs.value == r.rhs.value


def test_theorem1_suite_holds(bank0, bank1):
    for bank, beta in ((bank0, 0.0), (bank1, 1.0)):
        reports = ineq.check_theorem1_suite(standard_suite(), beta, bank)
        assert [r.function for r in reports] == [nf.name for nf in standard_suite()]
        for r in reports:
            assert r.verdict != "violated", r
            assert r.params["n"] == 8000 and r.lhs.seed == bank.seed


def test_theorem1_single_matches_suite(bank0):
    f = resolve("gauss_1pz2")
    one = ineq.check_theorem1(f, 0.0, bank0)
    many = [r for r in ineq.check_theorem1_suite(standard_suite(), 0.0, bank0) if r.function == f.name][0]
    assert one.as_dict() == many.as_dict()


def test_theorem1_constant_is_tight_zero(bank0):
    r = ineq.check_theorem1(resolve("const:c=1"), 0.0, bank0)
    assert r.lhs.value == 0.0 and r.rhs.value == 0.0 and r.verdict == "holds"


def test_theorem1_rejects_mismatched_beta(bank0):
    with pytest.raises(ValueError):
        ineq.check_theorem1(resolve("x"), 1.0, bank0)


def test_theorem1_rejects_nonintegrable(bank0):
    f = TestFunction.make(monomial((0, 0, 0)), lin=np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        ineq.check_theorem1(f, 0.0, bank0)


def test_richardson_agreement(bank0):
    r = ineq.check_theorem1(resolve("xz_gauss"), 0.0, bank0)
    assert r.params["richardson_ok"]


def test_identity_companion_dominates_horizontal_form(bank1):
    from heislab.estimators import Derivatives, theorem1_integrand
    from heislab.testfn import field_X, field_Y

    h = bank1.materialize().end
    for nf in standard_suite():
        d = Derivatives.of(nf.f, h)
        g = theorem1_integrand(d, h, 0.0, 0.0, 1.0)
        hor = field_X(nf.f)(h) ** 2 + field_Y(nf.f)(h) ** 2
        assert np.all(g >= hor - 1e-12 * (1 + hor))
        assert np.allclose(g - hor, d.fz ** 2, atol=1e-10)


def test_horizontal_function_rhs_equals_gradient_energy(bank0):
    f = resolve("gauss_r:s=0.5")
    r = ineq.check_theorem1(f, 0.0, bank0)
    li = ineq.check_li(f, bank0, C_lsi=2.0)
    assert r.rhs.value == pytest.approx(li.rhs.value, rel=1e-12)


def test_poincare(bank0):
    for nf in standard_suite():
        assert ineq.check_poincare(nf, bank0).verdict != "violated"
    r = ineq.check_poincare(resolve("x"), bank0)
    assert r.rhs.value == pytest.approx(1.0)


def test_corollary_and_comparisons(bank0):
    for nf in standard_suite():
        assert ineq.check_corollary(nf, 2.0, bank0).verdict != "violated"
        assert ineq.check_li_symmetrized(nf, bank0).verdict != "violated"
        for nu in (0.5, 1.0, 2.0):
            for v in ("sublaplacian", "weighted"):
                assert ineq.check_bg(nf, nu, bank0, v).verdict != "violated"
    with pytest.raises(ValueError):
        ineq.check_corollary(resolve("x"), 0.0, bank0)
    with pytest.raises(ValueError):
        ineq.check_bg(resolve("x"), 1.0, bank0, "other")


def test_comparisons_need_beta_zero(bank1):
    with pytest.raises(ValueError):
        ineq.check_li_symmetrized(resolve("x"), bank1)


def test_bg_prefactor():
    assert abs(ineq.bg_prefactor(1.0) - 2 * (math.e - 1)) <= 1e-12
    assert abs(ineq.bg_prefactor(1.0) - 3.43656365691809) <= 1e-10
    assert ineq.bg_prefactor(100.0) == pytest.approx(2.0, rel=0.01)
    with pytest.raises(ValueError):
        ineq.bg_prefactor(0.0)


def test_li_assumption_flagged(bank0):
    r = ineq.check_li_symmetrized(resolve("x"), bank0)
    assert r.params["C_lsi_assumed"] and r.params["C_lsi"] == 4.0


def test_symmetrized_cross_terms_cancel_exactly(bank0):
    h = bank0.materialize().end
    for nf in standard_suite():
        a, b = ineq.symmetrized_cross_terms(nf.f, h)
        assert a + b == 0.0


def test_symmetrized_form_is_average_of_li_forms(bank0):
    from heislab.estimators import Derivatives
    from heislab.testfn import field_X, field_Y

    h = ineq.reflection_paired(bank0.materialize().end)
    f = resolve("gauss_1pz2").f
    fr = f.reflect()
    li = lambda g: math.fsum(field_X(g)(h) ** 2 + field_Y(g)(h) ** 2)
    d = Derivatives.of(f, h)
    sym = math.fsum(d.fx ** 2 + d.fy ** 2 + (h.x ** 2 + h.y ** 2) / 4 * d.fz ** 2)
    assert (li(f) + li(fr)) / 2 == pytest.approx(sym, rel=1e-12)


def test_finite_n(bank0):
    for n in (1, 2, 4):
        r = ineq.check_finite_n(resolve("exp_ax_half:a=0.5"), n, 0.0, 4000, 3)
        assert r.verdict != "violated" and r.params["n_steps"] == n
    with pytest.raises(ValueError):
        ineq.check_finite_n(resolve("x"), 0, 0.0, 10, 1)


def test_finite_n_one_step_is_gaussian_lsi():
    # with n = 1 the walk is a Gaussian step and h reduces to |grad f|^2
    f = resolve("exp_ax_half:a=1")
    r = ineq.check_finite_n(f, 1, 0.0, 50_000, 5)
    assert r.rhs.value == pytest.approx(r.lhs.value, rel=0.1)


def test_best_constant_horizontal(bank0):
    horiz = [nf for nf in standard_suite() if nf.horizontal]
    bc = ineq.estimate_best_constant("theorem1", horiz, bank0)
    assert bc.argmax.startswith("exp_ax_half")
    assert "const:c=1" not in bc.ratios
    assert 1.8 <= bc.value <= 2.0 + 3 * bc.ci
    li = ineq.estimate_best_constant("li", horiz, bank0)
    assert li.value == pytest.approx(bc.value, rel=1e-9)
    with pytest.raises(ValueError):
        ineq.estimate_best_constant("other", horiz, bank0)


def test_carnot_heisenberg_bit_identical(bank0):
    cb = CarnotBank(heisenberg_spec(), 8000, 64, 8, SeedPlan(31))
    for nf in standard_suite()[:6]:
        a = ineq.check_carnot_theorem(heisenberg_spec(), nf, cb)
        b = ineq.check_theorem1(nf, 0.0, bank0, richardson=False)
        assert (a.lhs, a.rhs, a.deficit, a.verdict) == (b.lhs, b.rhs, b.deficit, b.verdict)


def test_carnot_free_group():
    spec = free_step_two_spec(3)
    cb = CarnotBank(spec, 4000, 32, 8, SeedPlan(33))
    for r in ineq.check_carnot_suite(spec, standard_suite(3, 3), cb):
        assert r.verdict != "violated"
        assert r.params["d"] == 3 and r.params["m"] == 3


def test_carnot_rejects_wrong_arity():
    spec = free_step_two_spec(3)
    cb = CarnotBank(spec, 10, 4, 2, SeedPlan(1))
    with pytest.raises(ValueError):
        ineq.check_carnot_theorem(spec, resolve("x"), cb)


def test_report_dict_round_trip(bank0):
    import json

    r = ineq.check_theorem1(resolve("x"), 0.0, bank0)
    d = json.loads(json.dumps(r.as_dict()))
    assert d["lhs"]["value"] == r.lhs.value and d["verdict"] == r.verdict
