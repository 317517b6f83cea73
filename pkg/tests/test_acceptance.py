"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; ``-m "not slow"`` skips it. The whole module takes a
few minutes on one core; every bank has a fixed seed, so reruns are
identical.
"""

import json
import math
import re
import time

import numpy as np
import pytest
from scipy.integrate import trapezoid

from heislab import inequalities as ineq
from heislab.carnot_core import (
    CarnotPoint,
    GroupPoint,
    carnot_dilate,
    carnot_inverse,
    carnot_multiply,
    dilate,
    free_step_two_spec,
    heisenberg_spec,
    inverse,
    multiply,
)
from heislab.cli import main
from heislab.curvature import NU_GRID, cd_sweep, curvature_functions, dual_route_gap, gamma_forms, random_points
from heislab.estimators import (
    bridge_lemma_fit,
    covariance,
    euclidean_bridge_residual,
    variance,
    z_score,
)
from heislab.sampler import CarnotBank, PathBank, SeedPlan, area_levels, walk_parts
from heislab.testfn import commutator, field_Z, random_member, resolve, standard_suite

pytestmark = pytest.mark.slow

N_PATHS = 100_000
K, SUBSTEPS = 64, 16


def announce(capsys, number, ok, detail, started):
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'} ({time.time() - started:.1f}s): {detail}"
    with capsys.disabled():
        print("\n" + line)
    return line


@pytest.fixture(scope="module")
def banks():
    return {beta: PathBank(N_PATHS, K, SUBSTEPS, beta, SeedPlan(1001 + int(beta))) for beta in (0.0, 1.0)}


@pytest.fixture(scope="module")
def theorem1(banks):
    return {beta: ineq.check_theorem1_suite(standard_suite(), beta, bank) for beta, bank in banks.items()}


@pytest.fixture(scope="module")
def bridge():
    t_grid = [0.0, 0.125, 0.25, 0.5, 0.75, 0.875, 1.0]
    targets = [GroupPoint(r, 0.0, z) for r in (0.0, 0.5, 1.0, 1.5, 2.0) for z in (0.0, 0.5)]
    small = PathBank(N_PATHS, 32, SUBSTEPS, 0.0, SeedPlan(2001)).materialize()
    big = PathBank(2 * N_PATHS, 32, SUBSTEPS, 0.0, SeedPlan(2001)).materialize()
    fits = [bridge_lemma_fit(s, t_grid, targets, None, "full", 2001) for s in (small, big)]
    return {"t_grid": t_grid, "targets": targets, "small": small, "fits": fits}


def max_err(a, b):
    return float(max(np.max(np.abs(np.asarray(u) - np.asarray(v))) for u, v in zip(a, b)))


def test_criterion_01_group_algebra(capsys):
    t0 = time.time()
    rng = np.random.default_rng(11)
    n, tol = 10_000, 1e-12
    worst = {}
    g, h, k = (GroupPoint(*rng.standard_normal((3, n))) for _ in range(3))
    worst["H assoc"] = max_err(multiply(multiply(g, h), k), multiply(g, multiply(h, k)))
    worst["H inverse"] = max(max_err(multiply(g, inverse(g)), (0, 0, 0)), max_err(multiply(inverse(g), g), (0, 0, 0)))
    worst["H dilation"] = max(max_err(multiply(dilate(s, g), dilate(s, h)), dilate(s, multiply(g, h))) for s in (0.37, 2.0))
    for label, spec in (("heisenberg_spec", heisenberg_spec()), ("free_d3", free_step_two_spec(3))):
        a, b, c = (CarnotPoint(rng.standard_normal((n, spec.d)), rng.standard_normal((n, spec.m))) for _ in range(3))
        mul = lambda p, q: carnot_multiply(spec, p, q)
        e = (np.zeros(spec.d), np.zeros(spec.m))
        worst[f"{label} assoc"] = max_err(mul(mul(a, b), c), mul(a, mul(b, c)))
        worst[f"{label} inverse"] = max_err(mul(a, carnot_inverse(spec, a)), e)
        worst[f"{label} dilation"] = max(
            max_err(mul(carnot_dilate(spec, s, a), carnot_dilate(spec, s, b)), carnot_dilate(spec, s, mul(a, b)))
            for s in (0.37, 2.0))
    ok = max(worst.values()) <= tol
    announce(capsys, 1, ok, f"max error {max(worst.values()):.2e} over {len(worst)} identities (tol {tol:g})", t0)
    assert ok, worst


def test_criterion_02_commutation(capsys):
    t0 = time.time()
    rng = np.random.default_rng(12)
    p = GroupPoint(*rng.standard_normal((3, 1000)))
    funcs = [nf.f for nf in standard_suite()] + [random_member(rng) for _ in range(20)]
    worst = 0.0
    for f in funcs:
        Zf = field_Z(f)(p)
        worst = max(worst,
                    float(np.max(np.abs(commutator(f, "X", "Y")(p) - Zf))),
                    float(np.max(np.abs(commutator(f, "X", "Z")(p)))),
                    float(np.max(np.abs(commutator(f, "Y", "Z")(p)))),
                    float(np.max(np.abs(commutator(f, "Xhat", "Yhat")(p) + Zf))))
    ok = worst <= 1e-10
    announce(capsys, 2, ok, f"max error {worst:.2e} over {len(funcs)} functions x 1000 points (tol 1e-10)", t0)
    assert ok


def test_criterion_03_clt_moments(capsys):
    t0 = time.time()
    n = 4096
    parts = walk_parts(n, 100_000, SeedPlan(3001))
    zs = []
    for beta in (0.0, 1.0):
        s = parts.point(beta)
        zs += [z_score(variance(s.x, 3001), 1.0), z_score(variance(s.y, 3001), 1.0),
               z_score(variance(s.z, 3001), beta * beta + 0.25 * (1 - 1 / n)),
               z_score(covariance(s.x, s.z, 3001), 0.0)]
    areas = area_levels(1_000_000, [16, 64, 256], SeedPlan(3002))
    errors = [abs(float(np.var(a)) - 0.25) for a in areas.values()]
    monotone = all(u > v for u, v in zip(errors, errors[1:]))
    elapsed = time.time() - t0
    ok = max(zs) <= 3.0 and monotone and elapsed < 60
    announce(capsys, 3, ok, f"max |z| {max(zs):.2f} (<= 3); Var(A1) errors {', '.join(f'{e:.2e}' for e in errors)} "
             f"at substeps 16/64/256 monotone={monotone}; {elapsed:.0f}s (< 60)", t0)
    assert ok


def test_criterion_04_theorem1(capsys, theorem1):
    t0 = time.time()
    bad = [(b, r.function) for b, reps in theorem1.items() for r in reps
           if r.deficit < -(r.lhs.ci + r.rhs.ci) or not r.params["richardson_ok"]]
    a = 0.5
    sharp_bank = PathBank(1_000_000, 32, 2, 0.0, SeedPlan(4001))
    r = ineq.check_theorem1(resolve(f"exp_ax_half:a={a}"), 0.0, sharp_bank, richardson=False)
    ratio = r.rhs.value / r.lhs.value
    exact = a * a / 2 * math.exp(a * a / 2)
    ok = not bad and 0.98 <= ratio <= 1.02
    announce(capsys, 4, ok, f"{sum(map(len, theorem1.values()))} reports at beta 0,1 ({N_PATHS} paths), "
             f"failures {bad}; sharpness RHS/LHS {ratio:.4f} at 1e6 paths (RHS {r.rhs.value:.5f}, "
             f"LHS {r.lhs.value:.5f}, exact {exact:.5f})", t0)
    assert ok


def test_criterion_05_finite_n(capsys, theorem1, banks):
    t0 = time.time()
    suite = standard_suite()
    violated = [(n, b, r.function) for n in (1, 2, 4, 8) for b in (0.0, 1.0) for r in
                (ineq.check_finite_n(nf, n, b, N_PATHS, SeedPlan(5001 + n)) for nf in suite) if r.verdict == "violated"]
    apart, reversed_apart = [], []
    for beta, reps in theorem1.items():
        right = PathBank(N_PATHS, K, SUBSTEPS, beta, SeedPlan(1001 + int(beta)), order="right")
        rev = ineq.check_theorem1_suite(suite, beta, right, richardson=False)
        for nf, t1, tr in zip(suite, reps, rev):
            fn = ineq.check_finite_n(nf, 64, beta, N_PATHS, SeedPlan(5064))
            if abs(fn.rhs.value - t1.rhs.value) > fn.rhs.ci + t1.rhs.ci:
                apart.append(f"{nf.name}@{beta:g}")
            if abs(fn.rhs.value - tr.rhs.value) > fn.rhs.ci + tr.rhs.ci:
                reversed_apart.append(f"{nf.name}@{beta:g}")
    ok = not violated and not apart
    announce(capsys, 5, ok, f"violations at n=1,2,4,8: {violated}; RHS(64) outside combined CI of the Theorem-1 RHS "
             f"for {apart}; against the time-reversed RHS: {reversed_apart}", t0)
    assert ok


def test_criterion_06_bridge(capsys, bridge):
    t0 = time.time()
    worst = 0.0
    for t in (0.125, 0.25, 0.5, 0.75, 0.875):
        for r in (0.0, 0.5, 1.0, 1.5, 2.0):
            _, resid = euclidean_bridge_residual(t, r, bridge["small"], None, 6001)
            worst = max(worst, z_score(resid, 0.0))
    small, big = bridge["fits"]
    stable = math.isfinite(big.C) and abs(big.C - small.C) <= 0.2 * big.C
    # held-out check: the constant fitted on the small bank bounds the
    # doubled bank's integrals, up to their own noise
    held = True
    t_grid = bridge["t_grid"]
    for h in bridge["targets"]:
        rows = [row for row in big.table if row[1:4] == (h.x, h.y, h.z)]
        integral = float(trapezoid([row[4] for row in rows], t_grid))
        ci = max(row[5] for row in rows)
        held &= integral <= small.C_integrated * (1 + h.x ** 2 + h.y ** 2 + abs(h.z)) + 3 * ci / 1.96
    ok = worst <= 3.0 and stable and held
    announce(capsys, 6, ok, f"Euclidean residual max |z| {worst:.2f} on 5x5 grid; C {small.C:.3f} -> {big.C:.3f} "
             f"under doubling (stable={stable}); integrated bound C_int {small.C_integrated:.3f} holds on "
             f"doubled bank={held}", t0)
    assert ok


def test_criterion_07_corollary(capsys, bridge, banks):
    t0 = time.time()
    C = bridge["fits"][1].corollary_constant
    reports = [ineq.check_corollary(nf, C, banks[0.0]) for nf in standard_suite()]
    verdicts = {v: sum(r.verdict == v for r in reports) for v in ("holds", "inconclusive", "violated")}
    ok = verdicts["violated"] == 0
    announce(capsys, 7, ok, f"C = {C:.4f}; verdicts {verdicts}", t0)
    assert ok


def test_criterion_08_comparisons(capsys, banks):
    t0 = time.time()
    bank = banks[0.0]
    suite = standard_suite()
    h = next(iter(bank.chunks())).end
    cancel = all(sum(ineq.symmetrized_cross_terms(nf.f, h)) == 0.0 for nf in suite)
    horiz = [nf for nf in suite if nf.horizontal]
    bc = ineq.estimate_best_constant("theorem1", horiz, bank)
    in_band = 1.9 <= bc.value <= 2.0 + 3 * bc.ci
    bg = [ineq.check_bg(nf, nu, bank, v) for nu in (0.5, 1.0, 2.0) for v in ("sublaplacian", "weighted") for nf in suite]
    bg_bad = [(r.function, r.params) for r in bg if r.verdict == "violated"]
    pref = ineq.bg_prefactor(1.0)
    pref_ok = abs(pref - 3.43656365691809) <= 1e-10
    ok = cancel and in_band and not bg_bad and pref_ok
    announce(capsys, 8, ok, f"cross terms cancel exactly={cancel}; best constant {bc.value:.4f} +/- {bc.ci:.4f} "
             f"({bc.argmax}) in [1.9, 2+3CI]={in_band}; BG violations {len(bg_bad)}/{len(bg)}; prefactor {pref:.14f}", t0)
    assert ok


def test_criterion_09_curvature(capsys):
    t0 = time.time()
    funcs = curvature_functions(20, seed=9001)
    pts = random_points(1000, seed=9002)
    rows = cd_sweep(funcs, pts, NU_GRID)
    margin = min(float(r.margin.min()) for r in rows)
    gap = max(float(dual_route_gap(nf.f, pts).max()) for nf in funcs)
    z_exact = bool(np.all(gamma_forms(resolve("z").f, pts, 1.0).gamma2_hori == 0.5))
    ok = len(rows) == 100 and margin >= -1e-10 and gap <= 1e-10 and z_exact
    announce(capsys, 9, ok, f"min margin {margin:.3e} over {len(funcs)} functions x 1000 points x {len(NU_GRID)} nu; "
             f"dual-route gap {gap:.2e}; f=z gives 1/2 exactly={z_exact}", t0)
    assert ok


def test_criterion_10_carnot(capsys, banks):
    t0 = time.time()
    suite = standard_suite()
    hb = CarnotBank(heisenberg_spec(), N_PATHS, K, SUBSTEPS, SeedPlan(1001))
    carnot = ineq.check_carnot_suite(heisenberg_spec(), suite, hb)
    plain = ineq.check_theorem1_suite(suite, 0.0, banks[0.0], richardson=False)
    identical = all((a.lhs, a.rhs, a.deficit, a.verdict) == (b.lhs, b.rhs, b.deficit, b.verdict)
                    for a, b in zip(carnot, plain))
    spec = free_step_two_spec(3)
    free = ineq.check_carnot_suite(spec, standard_suite(3, 3), CarnotBank(spec, N_PATHS, 32, SUBSTEPS, SeedPlan(10001)))
    bad = [r.function for r in free if r.verdict == "violated"]
    ok = identical and not bad
    announce(capsys, 10, ok, f"Heisenberg spec bit-identical to Theorem-1 reports={identical}; "
             f"free d=3,m=3: {len(free)} reports, violations {bad}", t0)
    assert ok


SMALL = """
[run]
seed = 77
output_dir = {out}

[sampling]
n_paths = 4000
K = 64
substeps = 2

[lsi]
functions = x, z_gauss, gauss_1pz2, exp_ax_half:a=0.5
finite_n = 1, 2
finite_n_samples = 2000

[clt]
n = 64
n_walks = 5000
area_paths = 5000
area_levels = 4, 16

[bridge]
n_paths = 4000
K = 8
substeps = 4
r_grid = 0.5, 1
z_grid = 0

[curvature]
n_functions = 4
n_points = 100

[carnot]
n_paths = 1000
K = 32
substeps = 2
"""


def test_criterion_11_reproducibility(capsys, tmp_path):
    t0 = time.time()
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL.format(out=tmp_path / "out"))
    runs = [["selftest"], ["clt"], ["lsi", "--name", "theorem1"], ["lsi", "--name", "finite_n"],
            ["lsi", "--name", "bg_weighted"], ["bridge"], ["curvature"], ["carnot"]]
    drop = lambda text: re.sub(r'"created": "[^"]*"', "", text)
    same, thread_free = [], []
    for i, sub in enumerate(runs):
        outs = [tmp_path / f"{i}-{tag}.json" for tag in ("a", "b", "c")]
        main(["--config", str(cfg), *sub, "--out", str(outs[0])])
        main(["--config", str(cfg), *sub, "--out", str(outs[1])])
        main(["--config", str(cfg), "--threads", "4", *sub, "--out", str(outs[2])])
        a, b, c = (p.read_text() for p in outs)
        same.append(drop(a) == drop(b))
        thread_free.append(json.loads(a)["reports"] == json.loads(c)["reports"])
    ok = all(same) and all(thread_free)
    announce(capsys, 11, ok, f"{sum(same)}/{len(runs)} subcommands byte-identical across reruns (timestamp aside); "
             f"{sum(thread_free)}/{len(runs)} unchanged with 4 workers", t0)
    assert ok
