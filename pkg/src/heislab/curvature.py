"""Carre du champ forms, their iterates and the curvature inequality

    Gamma2_mix(f) >= -(1/nu) Gamma_elli(f)

evaluated exactly on test functions.

Conventions: here the sublaplacian is ``L = X^2 + Y^2``, twice the
horizontal part of the generator ``(X^2 + Y^2 + beta^2 Z^2) / 2`` used by the
samplers. With this choice ``Gamma_hori(f) = (Xf)^2 + (Yf)^2`` carries no 1/2.
Everything is computed by applying X, Y, Z symbolically and evaluating at the
end; no finite differences are involved.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .carnot_core import GroupPoint
from .estimators import McEstimate, mean
from .testfn import NamedFunction, TestFunction, field_X, field_Y, field_Z, random_member, standard_suite

CD_TOL = 1e-10
NU_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass
class FormValue:
    point: GroupPoint
    gamma_hori: np.ndarray
    gamma_vert: np.ndarray
    gamma_elli: np.ndarray
    gamma2_hori: np.ndarray
    gamma2_vert: np.ndarray
    gamma2_mix: np.ndarray
    nu: float


@dataclass
class OperatorTable:
    """First and second order field derivatives of one test function."""

    X: TestFunction
    Y: TestFunction
    Z: TestFunction
    XX: TestFunction
    YY: TestFunction
    XY: TestFunction
    YX: TestFunction
    XZ: TestFunction
    YZ: TestFunction

    @classmethod
    def of(cls, f: TestFunction) -> "OperatorTable":
        if f.nvars != 3:
            raise ValueError("curvature forms are defined on the Heisenberg group (3 variables)")
        X, Y, Z = field_X(f), field_Y(f), field_Z(f)
        return cls(X, Y, Z, field_X(X), field_Y(Y), field_X(Y), field_Y(X), field_X(Z), field_Y(Z))


def gamma_forms(f: TestFunction, p: GroupPoint, nu: float, table: OperatorTable | None = None) -> FormValue:
    """All six forms of ``f`` at ``p`` (a point or a bank of points)."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    t = table or OperatorTable.of(f)
    Xf, Yf, Zf = t.X(p), t.Y(p), t.Z(p)
    XXf, YYf, XYf, YXf, XZf, YZf = (g(p) for g in (t.XX, t.YY, t.XY, t.YX, t.XZ, t.YZ))
    g_hori = Xf * Xf + Yf * Yf
    g_vert = Zf * Zf
    g2_hori = XXf * XXf + YYf * YYf + XYf * XYf + YXf * YXf - 2 * Xf * YZf + 2 * Yf * XZf
    g2_vert = XZf * XZf + YZf * YZf
    return FormValue(
        p, g_hori, g_vert, g_hori + nu * g_vert, g2_hori, g2_vert, g2_hori + nu * g2_vert, nu
    )


def _sublaplacian(f: TestFunction) -> TestFunction:
    return field_X(field_X(f)) + field_Y(field_Y(f))


def _gamma(f: TestFunction, g: TestFunction) -> TestFunction:
    return field_X(f) * field_X(g) + field_Y(f) * field_Y(g)


def gamma2_hori_definitional(f: TestFunction) -> TestFunction:
    """``(L Gamma(f) - 2 Gamma(f, Lf)) / 2`` built as a test function."""
    first = _sublaplacian(_gamma(f, f))
    second = _gamma(f, _sublaplacian(f)) * 2.0
    return (first - second) * 0.5


def dual_route_gap(f: TestFunction, p: GroupPoint) -> np.ndarray:
    """Relative gap between the expanded and the definitional Gamma2_hori."""
    a = gamma_forms(f, p, 1.0).gamma2_hori
    b = gamma2_hori_definitional(f)(p)
    return np.abs(a - b) / np.maximum(1.0, np.abs(a))


def check_cd(f: TestFunction, p: GroupPoint, nu: float, table: OperatorTable | None = None, tol: float = CD_TOL):
    """Return ``(ok, margin)`` with ``margin = Gamma2_mix + Gamma_elli / nu``."""
    fv = gamma_forms(f, p, nu, table)
    margin = fv.gamma2_mix + fv.gamma_elli / nu
    return bool(np.all(margin >= -tol)), margin


def bi_invariance_check(f, paths, hat_paths) -> tuple[McEstimate, McEstimate]:
    """``E f(H_1)`` under the left and the right construction."""
    fn = f.f if isinstance(f, NamedFunction) else f
    for bank, order in ((paths, "left"), (hat_paths, "right")):
        if getattr(bank, "beta", 0.0) != 0.0:
            raise ValueError("bi-invariance is compared at beta = 0")
        if getattr(bank, "order", order) != order:
            raise ValueError(f"expected a {order}-construction bank")
    out = []
    for bank in (paths, hat_paths):
        sample = bank.materialize() if hasattr(bank, "materialize") else bank
        out.append(mean(fn(sample.end), int(getattr(bank, "seed", 0))))
    return out[0], out[1]


def curvature_functions(n: int = 20, seed: int = 0) -> list[NamedFunction]:
    """The standard suite padded with seeded random members up to ``n``."""
    funcs = standard_suite()[:n]
    rng = np.random.default_rng(seed)
    i = 0
    while len(funcs) < n:
        funcs.append(NamedFunction(f"random:{i}", random_member(rng), False))
        i += 1
    return funcs


def random_points(count: int, seed: int = 0, scale: float = 1.5) -> GroupPoint:
    rng = np.random.default_rng(seed)
    return GroupPoint(*(scale * rng.standard_normal((3, count))))


@dataclass
class CdRow:
    name: str
    point: GroupPoint
    nu: float
    gamma2_mix: np.ndarray
    gamma_elli: np.ndarray
    margin: np.ndarray


def cd_sweep(funcs: Sequence[NamedFunction], points: GroupPoint, nus: Sequence[float] = NU_GRID) -> list[CdRow]:
    rows = []
    for nf in funcs:
        table = OperatorTable.of(nf.f)
        for nu in nus:
            fv = gamma_forms(nf.f, points, nu, table)
            rows.append(CdRow(nf.name, points, nu, fv.gamma2_mix, fv.gamma_elli, fv.gamma2_mix + fv.gamma_elli / nu))
    return rows


CSV_FIELDS = ("f_name", "x", "y", "z", "nu", "gamma2_mix", "gamma_elli", "margin")


def write_cd_csv(path, rows: Sequence[CdRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in rows:
            cols = np.broadcast_arrays(r.point.x, r.point.y, r.point.z, r.gamma2_mix, r.gamma_elli, r.margin)
            for x, y, z, g2, ge, mg in zip(*(np.ravel(c) for c in cols)):
                w.writerow([r.name, repr(float(x)), repr(float(y)), repr(float(z)), repr(float(r.nu)), repr(float(g2)), repr(float(ge)), repr(float(mg))])
