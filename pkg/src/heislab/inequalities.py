"""Left and right hand sides of the logarithmic Sobolev inequalities, with
deficits and verdicts.

Every check returns an :class:`InequalityReport`. A report ``holds`` when
the deficit ``rhs - lhs`` is above ``-hold_factor * (lhs.ci + rhs.ci)``, is
``violated`` below ``-violate_factor * (lhs.ci + rhs.ci)`` and is
``inconclusive`` in between.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .carnot_core import CarnotSpec, GroupPoint
from .estimators import (
    Derivatives,
    McEstimate,
    bootstrap,
    entropy,
    fmean,
    mean,
    quadrature_average,
    theorem1_integrand,
    variance,
)
from .sampler import fold, triangular_array
from .testfn import NamedFunction, TestFunction, field_X, field_Y, is_integrable

HOLD_FACTOR = 1.0
VIOLATE_FACTOR = 3.0
DEFAULT_ORDER = 16
DEFAULT_C_LSI = 4.0


@dataclass
class InequalityReport:
    name: str
    function: str
    lhs: McEstimate
    rhs: McEstimate
    deficit: float
    verdict: str
    params: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "function": self.function,
            "lhs": self.lhs.as_dict(),
            "rhs": self.rhs.as_dict(),
            "deficit": self.deficit,
            "verdict": self.verdict,
            "params": self.params,
        }


def verdict_for(deficit: float, ci: float, hold_factor: float = HOLD_FACTOR, violate_factor: float = VIOLATE_FACTOR) -> str:
    if deficit >= -hold_factor * ci:
        return "holds"
    if deficit < -violate_factor * ci:
        return "violated"
    return "inconclusive"


def exact_deficit(lhs: float, rhs: float) -> float:
    """``rhs - lhs``, nudged by a few ulps when needed so that
    ``deficit + lhs == rhs`` holds in floating point."""
    d = rhs - lhs
    if d + lhs == rhs:
        return d
    for direction in (math.inf, -math.inf):
        c = d
        for _ in range(4):
            c = math.nextafter(c, direction)
            if c + lhs == rhs:
                return c
    return d


def make_report(name: str, function: str, lhs: McEstimate, rhs: McEstimate, params: dict | None = None, hold_factor: float = HOLD_FACTOR, violate_factor: float = VIOLATE_FACTOR) -> InequalityReport:
    deficit = exact_deficit(lhs.value, rhs.value)
    verdict = verdict_for(deficit, lhs.ci + rhs.ci, hold_factor, violate_factor)
    return InequalityReport(name, function, lhs, rhs, deficit, verdict, dict(params or {}))


def _unpack(f) -> tuple[str, TestFunction]:
    if isinstance(f, NamedFunction):
        return f.name, f.f
    return "f", f


def _require_integrable(f: TestFunction, horizontal_dims: int | None = None):
    if not is_integrable(f, 2, horizontal_dims):
        raise ValueError("test function is not square integrable under the heat kernel")


def _seed(paths) -> int:
    return int(getattr(paths, "seed", 0))


def _n(paths) -> int:
    return int(getattr(paths, "n_paths", 0))


# ---------------------------------------------------------------------------
# Theorem-1 family


def theorem1_terms(fs: Sequence[TestFunction], paths, order: int = DEFAULT_ORDER, richardson: bool = True) -> list[dict]:
    """One pass over the bank collecting, per function and per path, ``f(H_1)``
    and the midpoint averages of ``g(H_1, H_t)`` with ``order`` nodes (and
    ``2*order`` nodes when ``richardson``)."""
    for f in fs:
        _require_integrable(f)
    partials = [(f, f.partial(0), f.partial(1), f.partial(2)) for f in fs]

    def per_chunk(ch):
        h = ch.end
        out = {}
        for i, (f, fx, fy, fz) in enumerate(partials):
            d = Derivatives(f(h), fx(h), fy(h), fz(h))
            g = lambda k: theorem1_integrand(d, h, ch.bx[:, k], ch.by[:, k], ch.beta)
            out[f"f{i}"] = d.f
            out[f"q{i}"] = quadrature_average(ch, g, order)
            if richardson:
                out[f"r{i}"] = quadrature_average(ch, g, 2 * order)
        return out

    cols = fold(paths, per_chunk)
    return [
        {"f": cols[f"f{i}"], "q": cols[f"q{i}"], "q_fine": cols.get(f"r{i}")}
        for i in range(len(fs))
    ]


def _theorem1_report(name, fname, terms, beta, order, seed, n, scale=2.0, lhs_kind="entropy", **kw):
    f = terms["f"]
    lhs = entropy(f * f, seed) if lhs_kind == "entropy" else variance(f, seed)
    rhs = mean(scale * terms["q"], seed)
    params = {"beta": beta, "order": order, "n": n}
    if terms.get("q_fine") is not None:
        fine = scale * fmean(terms["q_fine"])
        params["rhs_fine"] = fine
        params["richardson_gap"] = fine - rhs.value
        params["richardson_ok"] = bool(abs(fine - rhs.value) <= rhs.ci)
    return make_report(name, fname, lhs, rhs, params, **kw)


def _check_beta(beta, paths):
    pb = getattr(paths, "beta", beta)
    if not math.isclose(pb, beta):
        raise ValueError(f"paths were sampled with beta={pb}, not {beta}")


def check_theorem1(f, beta: float, paths, t_quadrature_order: int = DEFAULT_ORDER, richardson: bool = True, **kw) -> InequalityReport:
    """``Ent(f^2) <= 2 int_0^1 E g(H_1, H_t) dt`` on a path bank."""
    return check_theorem1_suite([f], beta, paths, t_quadrature_order, richardson, **kw)[0]


def check_theorem1_suite(fs, beta: float, paths, t_quadrature_order: int = DEFAULT_ORDER, richardson: bool = True, **kw) -> list[InequalityReport]:
    _check_beta(beta, paths)
    named = [_unpack(f) for f in fs]
    terms = theorem1_terms([f for _, f in named], paths, t_quadrature_order, richardson)
    return [
        _theorem1_report("theorem1", nm, t, beta, t_quadrature_order, _seed(paths), _n(paths), **kw)
        for (nm, _), t in zip(named, terms)
    ]


def check_poincare(f, paths, t_quadrature_order: int = DEFAULT_ORDER, **kw) -> InequalityReport:
    """``Var(f) <= int_0^1 E g(H_1, H_t) dt`` (prefactor 1)."""
    name, fn = _unpack(f)
    terms = theorem1_terms([fn], paths, t_quadrature_order, richardson=False)[0]
    beta = float(getattr(paths, "beta", 0.0))
    return _theorem1_report("poincare", name, terms, beta, t_quadrature_order, _seed(paths), _n(paths), scale=1.0, lhs_kind="variance", **kw)


@dataclass
class BestConstant:
    """Largest ``Ent(f^2) / energy(f)`` over a suite, with the bootstrap
    half-width of the maximizing ratio."""

    value: float
    ci: float
    argmax: str
    ratios: dict


def _ratio(a, b):
    m = b.mean()
    if m <= 0:
        return 0.0
    v = a.mean()
    phi = a * np.log(np.where(a > 0, a, 1.0))
    return (phi.mean() - v * math.log(v)) / m if v > 0 else 0.0


def estimate_best_constant(family: str, suite: Sequence[NamedFunction], paths, terms: list[dict] | None = None, order: int = DEFAULT_ORDER, min_energy: float = 1e-12) -> BestConstant:
    """Smallest multiplier making the inequality hold across the suite.

    ``family="theorem1"`` uses the energy ``int_0^1 E g dt``; ``"li"`` uses
    ``E((Xf)^2 + (Yf)^2)``. Members with (near) zero energy, such as
    constants, are skipped.
    """
    seed = _seed(paths)
    ratios: dict[str, tuple[float, np.ndarray, np.ndarray]] = {}
    if family == "theorem1":
        if terms is None:
            terms = theorem1_terms([nf.f for nf in suite], paths, order, richardson=False)
        energies = [t["q"] for t in terms]
        values = [t["f"] for t in terms]
    elif family == "li":
        sample = paths.materialize() if hasattr(paths, "materialize") else paths
        h = sample.end
        values, energies = [], []
        for nf in suite:
            Xf, Yf = field_X(nf.f)(h), field_Y(nf.f)(h)
            values.append(nf.f(h))
            energies.append(Xf * Xf + Yf * Yf)
    else:
        raise ValueError(f"unknown family {family!r}")
    from .estimators import entropy_value

    for nf, v, e in zip(suite, values, energies):
        en = fmean(e)
        if en <= min_energy:
            continue
        ratios[nf.name] = (entropy_value(v * v) / en, v * v, e)
    if not ratios:
        raise ValueError("no member of the suite has positive energy")
    best = max(ratios, key=lambda k: ratios[k][0])
    val, f2, e = ratios[best]
    ci = bootstrap([f2, e], _ratio, seed, tag=7)
    return BestConstant(val, ci, best, {k: r[0] for k, r in ratios.items()})


# ---------------------------------------------------------------------------
# weighted and comparison inequalities at H_1


def _endpoint_derivs(f: TestFunction, paths):
    sample = paths.materialize() if hasattr(paths, "materialize") else paths
    h = sample.end
    return h, Derivatives.of(f, h)


def _require_beta0(paths):
    if getattr(paths, "beta", 0.0) != 0.0:
        raise ValueError("this inequality is stated for beta = 0")


def check_corollary(f, C: float, paths, **kw) -> InequalityReport:
    """``Ent(f^2) <= 2 E[(d_x f)^2 + (d_y f)^2 + C (1+x^2+y^2+|z|)(d_z f)^2]``."""
    if not C > 0:
        raise ValueError("C must be positive")
    _require_beta0(paths)
    name, fn = _unpack(f)
    _require_integrable(fn)
    h, d = _endpoint_derivs(fn, paths)
    w = 1 + h.x ** 2 + h.y ** 2 + np.abs(h.z)
    seed = _seed(paths)
    lhs = entropy(d.f ** 2, seed)
    rhs = mean(2 * (d.fx ** 2 + d.fy ** 2 + C * w * d.fz ** 2), seed)
    return make_report("corollary", name, lhs, rhs, {"C": C, "n": _n(paths)}, **kw)


def check_li(f, paths, C_lsi: float = DEFAULT_C_LSI, **kw) -> InequalityReport:
    """``Ent(f^2) <= C_LSI E[(Xf)^2 + (Yf)^2]``; ``C_LSI`` is an assumption."""
    _require_beta0(paths)
    name, fn = _unpack(f)
    _require_integrable(fn)
    sample = paths.materialize() if hasattr(paths, "materialize") else paths
    h = sample.end
    Xf, Yf = field_X(fn)(h), field_Y(fn)(h)
    seed = _seed(paths)
    lhs = entropy(fn(h) ** 2, seed)
    rhs = mean(C_lsi * (Xf * Xf + Yf * Yf), seed)
    return make_report("li", name, lhs, rhs, {"C_lsi": C_lsi, "C_lsi_assumed": True, "n": _n(paths)}, **kw)


def check_li_symmetrized(f, paths, C_lsi: float = DEFAULT_C_LSI, **kw) -> InequalityReport:
    """``Ent(f^2) <= C_LSI E[(d_x f)^2 + (d_y f)^2 + (x^2+y^2)/4 (d_z f)^2]``."""
    if not C_lsi > 0:
        raise ValueError("C_lsi must be positive")
    _require_beta0(paths)
    name, fn = _unpack(f)
    _require_integrable(fn)
    h, d = _endpoint_derivs(fn, paths)
    seed = _seed(paths)
    lhs = entropy(d.f ** 2, seed)
    rhs = mean(C_lsi * (d.fx ** 2 + d.fy ** 2 + (h.x ** 2 + h.y ** 2) / 4 * d.fz ** 2), seed)
    return make_report("li_symmetrized", name, lhs, rhs, {"C_lsi": C_lsi, "C_lsi_assumed": True, "n": _n(paths)}, **kw)


def bg_prefactor(nu: float) -> float:
    """``2 nu (e^{1/nu} - 1)``."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    return 2.0 * nu * math.expm1(1.0 / nu)


def check_bg(f, nu: float, paths, variant: str = "sublaplacian", **kw) -> InequalityReport:
    """Elliptic-gradient inequalities with prefactor ``2 nu (e^{1/nu} - 1)``.

    ``sublaplacian``: energy ``E[(Xf)^2 + (Yf)^2 + nu (Zf)^2]``;
    ``weighted``: energy ``E[(d_x f)^2 + (d_y f)^2 + (nu + (x^2+y^2)/4)(d_z f)^2]``.
    """
    pref = bg_prefactor(nu)
    _require_beta0(paths)
    name, fn = _unpack(f)
    _require_integrable(fn)
    h, d = _endpoint_derivs(fn, paths)
    if variant == "sublaplacian":
        Xf, Yf = field_X(fn)(h), field_Y(fn)(h)
        dens = Xf * Xf + Yf * Yf + nu * d.fz ** 2
    elif variant == "weighted":
        dens = d.fx ** 2 + d.fy ** 2 + (nu + (h.x ** 2 + h.y ** 2) / 4) * d.fz ** 2
    else:
        raise ValueError(f"unknown variant {variant!r}")
    seed = _seed(paths)
    lhs = entropy(d.f ** 2, seed)
    rhs = mean(pref * dens, seed)
    return make_report(f"bg_{variant}", name, lhs, rhs, {"nu": nu, "prefactor": pref, "n": _n(paths)}, **kw)


def reflection_paired(h: GroupPoint) -> GroupPoint:
    """The bank ``h`` followed by its image under ``g -> g^{-1} = -g``."""
    return GroupPoint(*(np.concatenate([c, -c]) for c in h))


def cross_terms(f: TestFunction, h: GroupPoint) -> float:
    """Sum over the bank of the cross terms of ``(Xf)^2 + (Yf)^2``, namely
    ``x d_y f d_z f - y d_x f d_z f``."""
    fx, fy, fz = f.partial(0)(h), f.partial(1)(h), f.partial(2)(h)
    return math.fsum(h.x * fy * fz - h.y * fx * fz)


def symmetrized_cross_terms(f: TestFunction, h: GroupPoint) -> tuple[float, float]:
    """Cross terms of f and of ``f(-.)`` on the reflection-paired bank.

    Their sum is zero exactly: the paired bank is invariant under the central
    symmetry and the correctly rounded sum is order independent.
    """
    paired = reflection_paired(h)
    return cross_terms(f, paired), cross_terms(f.reflect(), paired)


# ---------------------------------------------------------------------------
# finite-n inequality


def finite_n_terms(f: TestFunction, n: int, beta: float, mc_samples: int, seed, threads: int = 1):
    """Per-sample ``f(S_n)`` and ``(1/n) sum_i h(S_{n,i})``."""
    tri = triangular_array(n, beta, mc_samples, seed, threads)
    s = tri.end
    d = Derivatives.of(f, s)
    fx, fy, fz = d.fx[:, None], d.fy[:, None], d.fz[:, None]
    a = fx - tri.yi / 2 * fz
    b = fy + tri.xi / 2 * fz
    hv = a * a + b * b + beta * beta * fz * fz
    return d.f, hv.mean(axis=1)


def check_finite_n(f, n: int, beta: float, mc_samples: int, seed=0, threads: int = 1, **kw) -> InequalityReport:
    """``Ent_{nu_n}(f^2) <= (2/n) sum_i E h(S_{n,i})`` for the law nu_n of S_n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    name, fn = _unpack(f)
    _require_integrable(fn)
    fv, hv = finite_n_terms(fn, n, beta, mc_samples, seed, threads)
    s = int(getattr(seed, "master_seed", seed))
    lhs = entropy(fv * fv, s)
    rhs = mean(2 * hv, s)
    return make_report("finite_n", name, lhs, rhs, {"n_steps": n, "beta": beta, "n": mc_samples}, **kw)


# ---------------------------------------------------------------------------
# step-two Carnot groups


def carnot_theorem_terms(spec: CarnotSpec, fs: Sequence[TestFunction], paths, order: int = DEFAULT_ORDER) -> list[dict]:
    """Per-path ``f(X_1, Z_1)`` and midpoint averages of
    ``sum_p (d_p f + 1/2 sum_l sum_q b^(l)_pq (X_1^q - 2 X_s^q) d_{d+l} f)^2``.

    The factor 1/2 follows from the group law with ``<Bx, x'>/2``.
    """
    d, m = spec.d, spec.m
    for f in fs:
        if f.nvars != d + m:
            raise ValueError(f"test function has {f.nvars} variables, spec needs {d + m}")
        _require_integrable(f, horizontal_dims=d)
    B = spec.B
    rows = [[[(q, float(B[l, p, q])) for q in range(d) if B[l, p, q] != 0.0] for l in range(m)] for p in range(d)]
    parts = [(f, [f.partial(i) for i in range(d + m)]) for f in fs]

    def per_chunk(ch):
        end = [ch.x[:, -1, i] for i in range(d)] + [ch.z[:, -1, l] for l in range(m)]
        out = {}
        for i, (f, grads) in enumerate(parts):
            g = [gr(end) for gr in grads]

            def integrand(k):
                xs = ch.x[:, k]
                total = None
                for p in range(d):
                    term = g[p]
                    for l in range(m):
                        inner = None
                        for q, b in rows[p][l]:
                            piece = b * (end[q] - 2 * xs[:, q])
                            inner = piece if inner is None else inner + piece
                        if inner is not None:
                            term = term + (0.5 * inner) * g[d + l]
                    sq = term * term
                    total = sq if total is None else total + sq
                return total

            out[f"f{i}"] = f(end)
            out[f"q{i}"] = quadrature_average(ch, integrand, order)
        return out

    cols = fold(paths, per_chunk)
    return [{"f": cols[f"f{i}"], "q": cols[f"q{i}"]} for i in range(len(fs))]


def check_carnot_theorem(spec: CarnotSpec, f, paths, t_quadrature_order: int = DEFAULT_ORDER, **kw) -> InequalityReport:
    return check_carnot_suite(spec, [f], paths, t_quadrature_order, **kw)[0]


def check_carnot_suite(spec: CarnotSpec, fs, paths, t_quadrature_order: int = DEFAULT_ORDER, **kw) -> list[InequalityReport]:
    named = [_unpack(f) for f in fs]
    terms = carnot_theorem_terms(spec, [f for _, f in named], paths, t_quadrature_order)
    seed, n = _seed(paths), _n(paths)
    reports = []
    for (nm, _), t in zip(named, terms):
        lhs = entropy(t["f"] * t["f"], seed)
        rhs = mean(2.0 * t["q"], seed)
        params = {"d": spec.d, "m": spec.m, "order": t_quadrature_order, "n": n}
        reports.append(make_report("carnot_theorem", nm, lhs, rhs, params, **kw))
    return reports
