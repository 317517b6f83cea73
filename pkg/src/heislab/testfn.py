"""Test functions of the form ``P(v) * exp(v^T Q v + l.v + c)``.

The family is closed under partial derivatives, products and multiplication
by polynomials, so every operator used downstream (the left and right
invariant fields, sub-Laplacians, carre du champ and its iterate) stays
inside it and is computed exactly, without finite differences.

Variables are indexed ``0..n-1``; on the Heisenberg group ``(x, y, z)`` are
``0, 1, 2``. Verified inequalities on this family are numerical evidence on a
chosen class of functions, not a proof for all Schwartz functions.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

X_AXIS, Y_AXIS, Z_AXIS = 0, 1, 2
_AXES = {"x": 0, "y": 1, "z": 2}


class EvaluationError(ArithmeticError):
    """Raised when an evaluation overflows to a non-finite value."""


def _clean(terms: dict) -> dict:
    return {k: v for k, v in terms.items() if v != 0.0}


def _poly_add(a: dict, b: dict, sign: float = 1.0) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0.0) + sign * v
    return _clean(out)


def _poly_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            k = tuple(i + j for i, j in zip(ka, kb))
            out[k] = out.get(k, 0.0) + va * vb
    return _clean(out)


def _poly_diff(a: dict, axis: int) -> dict:
    out: dict = {}
    for k, v in a.items():
        e = k[axis]
        if e:
            kk = k[:axis] + (e - 1,) + k[axis + 1:]
            out[kk] = out.get(kk, 0.0) + e * v
    return _clean(out)


def monomial(exps: Sequence[int], coeff: float = 1.0) -> dict:
    return {tuple(int(e) for e in exps): float(coeff)}


@dataclass(frozen=True, eq=False)
class TestFunction:
    """``sum_k c_k v^{a_k} * exp(v^T Q v + lin.v + const)``.

    ``terms`` maps exponent tuples to coefficients; ``Q`` is symmetric.
    Instances are immutable and safe to share.
    """

    __test__ = False  # not a pytest class

    terms: tuple
    Q: np.ndarray
    lin: np.ndarray
    const: float = 0.0

    @classmethod
    def make(cls, poly: dict, Q=None, lin=None, const: float = 0.0, nvars: int | None = None):
        if nvars is None:
            if poly:
                nvars = len(next(iter(poly)))
            elif Q is not None:
                nvars = np.shape(Q)[0]
            else:
                nvars = 3
        Q = np.zeros((nvars, nvars)) if Q is None else np.array(Q, dtype=float)
        lin = np.zeros(nvars) if lin is None else np.array(lin, dtype=float)
        if Q.shape != (nvars, nvars) or lin.shape != (nvars,):
            raise ValueError("envelope dimensions do not match the polynomial")
        if not np.array_equal(Q, Q.T):
            Q = 0.5 * (Q + Q.T)
        for k in poly:
            if len(k) != nvars:
                raise ValueError(f"monomial {k} does not have {nvars} exponents")
        Q.setflags(write=False)
        lin.setflags(write=False)
        terms = tuple(sorted(_clean({tuple(k): float(v) for k, v in poly.items()}).items()))
        return cls(terms, Q, lin, float(const))

    @property
    def nvars(self) -> int:
        return self.Q.shape[0]

    @property
    def poly(self) -> dict:
        return dict(self.terms)

    def same_envelope(self, other: "TestFunction") -> bool:
        return (
            self.const == other.const
            and np.array_equal(self.Q, other.Q)
            and np.array_equal(self.lin, other.lin)
        )

    def _with_poly(self, poly: dict) -> "TestFunction":
        return TestFunction.make(poly, self.Q, self.lin, self.const, nvars=self.nvars)

    def degree(self) -> int:
        return max((sum(k) for k, _ in self.terms), default=0)

    def depends_on(self, axis: int) -> bool:
        if any(k[axis] for k, _ in self.terms):
            return True
        return bool(np.any(self.Q[axis] != 0) or self.lin[axis] != 0)

    def is_zero(self) -> bool:
        return not self.terms

    # -- algebra -----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = self._with_poly(monomial((0,) * self.nvars, other)) if other else None
            return self if other is None else self + other
        if other.is_zero():
            return self
        if self.is_zero():
            return other
        if not self.same_envelope(other):
            raise ValueError("cannot add test functions with different envelopes")
        return self._with_poly(_poly_add(self.poly, other.poly))

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self._with_poly({k: v * other for k, v in self.terms})
        if isinstance(other, dict):
            return self._with_poly(_poly_mul(self.poly, other))
        return TestFunction.make(
            _poly_mul(self.poly, other.poly),
            self.Q + other.Q,
            self.lin + other.lin,
            self.const + other.const,
            nvars=self.nvars,
        )

    __rmul__ = __mul__

    def partial(self, axis: int | str) -> "TestFunction":
        """Exact partial derivative ``d/dv_axis``."""
        axis = _AXES.get(axis, axis)
        n = self.nvars
        # d/dv_k of the exponent: 2 (Q v)_k + lin_k
        dexp: dict = {}
        for j in range(n):
            if self.Q[axis, j] != 0.0:
                e = [0] * n
                e[j] = 1
                dexp[tuple(e)] = 2.0 * self.Q[axis, j]
        if self.lin[axis] != 0.0:
            dexp[(0,) * n] = float(self.lin[axis])
        poly = self.poly
        return self._with_poly(_poly_add(_poly_diff(poly, axis), _poly_mul(poly, dexp)))

    def reflect(self) -> "TestFunction":
        """``v -> f(-v)``, the composition with the central symmetry."""
        poly = {k: (-v if sum(k) % 2 else v) for k, v in self.terms}
        return TestFunction.make(poly, self.Q, -self.lin, self.const, nvars=self.nvars)

    # -- evaluation --------------------------------------------------------

    def evaluate(self, point) -> np.ndarray:
        """Evaluate at a point or a bank of points.

        ``point`` is any sequence of ``nvars`` coordinates (a GroupPoint, or
        arrays of equal shape).
        """
        coords = [np.asarray(c, dtype=float) for c in point]
        if len(coords) != self.nvars:
            raise ValueError(f"expected {self.nvars} coordinates, got {len(coords)}")
        shape = np.broadcast_shapes(*(c.shape for c in coords))
        powers = [[np.ones(shape)] for _ in coords]

        def pw(i, e):
            cache = powers[i]
            while len(cache) <= e:
                cache.append(cache[-1] * coords[i])
            return cache[e]

        total = np.zeros(shape)
        for k, c in self.terms:
            term = np.full(shape, c)
            for i, e in enumerate(k):
                if e:
                    term = term * pw(i, e)
            total = total + term
        expo = np.full(shape, self.const)
        n = self.nvars
        for i in range(n):
            if self.Q[i, i] != 0.0:
                expo = expo + self.Q[i, i] * pw(i, 2)
            for j in range(i + 1, n):
                if self.Q[i, j] != 0.0:
                    expo = expo + (2.0 * self.Q[i, j]) * (coords[i] * coords[j])
            if self.lin[i] != 0.0:
                expo = expo + self.lin[i] * coords[i]
        with np.errstate(over="ignore", invalid="ignore"):
            out = total * np.exp(expo)
        if not np.all(np.isfinite(out)):
            raise EvaluationError("test function evaluation overflowed")
        return out if shape else float(out)

    __call__ = evaluate


def constant(c: float = 1.0, nvars: int = 3) -> TestFunction:
    return TestFunction.make(monomial((0,) * nvars, c), nvars=nvars)


def coordinate(axis: int, nvars: int = 3) -> TestFunction:
    e = [0] * nvars
    e[axis] = 1
    return TestFunction.make(monomial(e), nvars=nvars)


def gaussian_envelope(scale: Sequence[float]) -> np.ndarray:
    """Diagonal Q with ``Q_ii = -scale_i``."""
    return -np.diag(np.asarray(scale, dtype=float))


def partial(f: TestFunction, axis) -> TestFunction:
    return f.partial(axis)


# ---------------------------------------------------------------------------
# vector fields on the Heisenberg group (variables x, y, z)


def _field(f: TestFunction, axis: int, coeff_axis: int, coeff: float) -> TestFunction:
    # d_axis f + coeff * v_coeff_axis * d_z f
    e = [0] * f.nvars
    e[coeff_axis] = 1
    return f.partial(axis) + f.partial(Z_AXIS) * {tuple(e): coeff}


def field_X(f):
    return _field(f, X_AXIS, Y_AXIS, -0.5)


def field_Y(f):
    return _field(f, Y_AXIS, X_AXIS, 0.5)


def field_Z(f):
    return f.partial(Z_AXIS)


def field_Xhat(f):
    return _field(f, X_AXIS, Y_AXIS, 0.5)


def field_Yhat(f):
    return _field(f, Y_AXIS, X_AXIS, -0.5)


FIELDS: dict[str, Callable[[TestFunction], TestFunction]] = {
    "X": field_X,
    "Y": field_Y,
    "Z": field_Z,
    "Xhat": field_Xhat,
    "Yhat": field_Yhat,
}


def apply_field(f: TestFunction, field: str) -> TestFunction:
    """Apply ``X = d_x - y/2 d_z``, ``Y = d_y + x/2 d_z``, ``Z = d_z`` or the
    right-invariant ``Xhat = d_x + y/2 d_z``, ``Yhat = d_y - x/2 d_z``."""
    if f.nvars != 3:
        raise ValueError("vector fields are defined on three variables")
    try:
        return FIELDS[field](f)
    except KeyError:
        raise ValueError(f"unknown field {field!r}; expected one of {sorted(FIELDS)}") from None


def commutator(f: TestFunction, a: str, b: str) -> TestFunction:
    """``[A, B] f = A(B f) - B(A f)``."""
    return apply_field(apply_field(f, b), a) - apply_field(apply_field(f, a), b)


# ---------------------------------------------------------------------------
# integrability against the law of the endpoint


def is_integrable(f: TestFunction, order: int = 2, horizontal_dims: int | None = None) -> bool:
    """Sufficient check that ``E |f|^order`` is finite under the heat kernel.

    Horizontal coordinates have standard Gaussian tails, so a quadratic
    exponent below ``1/2`` is allowed there. Vertical tails are only
    exponential; the check requires either a negative definite exponent
    overall, or an exponent that does not involve vertical coordinates.
    """
    n = f.nvars
    h = n - 1 if horizontal_dims is None else horizontal_dims
    M = order * f.Q
    vert = slice(h, n)
    if np.any(f.Q[vert, :] != 0.0):
        return bool(np.max(np.linalg.eigvalsh(M)) < 0.0)
    if np.any(f.lin[vert] != 0.0):
        return False
    if h == 0:
        return True
    return bool(np.max(np.linalg.eigvalsh(M[:h, :h])) < 0.5)


# ---------------------------------------------------------------------------
# named suite


@dataclass(frozen=True)
class NamedFunction:
    name: str
    f: TestFunction
    horizontal: bool


def _exp_ax_half(a: float = 0.5, nvars: int = 3) -> TestFunction:
    lin = np.zeros(nvars)
    lin[0] = a / 2
    return TestFunction.make(monomial((0,) * nvars), lin=lin, nvars=nvars)


def _gauss_r(s: float = 0.5, d: int = 2, m: int = 1) -> TestFunction:
    n = d + m
    return TestFunction.make(monomial((0,) * n), Q=gaussian_envelope([s] * d + [0.0] * m), nvars=n)


def _full_gauss(poly: dict, n: int, shift=None) -> TestFunction:
    lin = np.zeros(n)
    const = 0.0
    if shift is not None:
        # exp(-|v - shift|^2 / 4)
        lin = np.asarray(shift, float) / 2
        const = -float(np.dot(shift, shift)) / 4
    return TestFunction.make(poly, Q=gaussian_envelope([0.25] * n), lin=lin, const=const, nvars=n)


def _factories(d: int, m: int) -> dict:
    n = d + m
    zero = (0,) * n

    def e(i, k=1):
        out = [0] * n
        out[i] = k
        return out

    def poly_1pz2():
        p = monomial(zero)
        p.update(monomial(e(d, 2)))
        return p

    return {
        "const": lambda c=1.0: constant(c, n),
        "coord": lambda i=0: coordinate(int(i), n),
        "exp_ax_half": lambda a=0.5: _exp_ax_half(a, n),
        "gauss_r": lambda s=0.5: _gauss_r(s, d, m),
        "z_gauss": lambda: _full_gauss(monomial(e(d)), n),
        "gauss_1pz2": lambda: _full_gauss(poly_1pz2(), n),
        "xz_gauss": lambda: _full_gauss({tuple(a + b for a, b in zip(e(0), e(d))): 1.0}, n),
        "shifted_gauss": lambda c=0.5: _full_gauss(monomial(zero), n, shift=[c] + [0.0] * (n - 1)),
        "xy_gauss": lambda: TestFunction.make(
            {tuple(a + b for a, b in zip(e(0), e(1))): 1.0},
            Q=gaussian_envelope([0.25] * d + [0.0] * m),
            nvars=n,
        ),
    }


_ALIASES = {"x": ("coord", {"i": 0}), "y": ("coord", {"i": 1}), "z": ("coord", {"i": 2})}
_NAME = re.compile(r"^(\w+)(?::(.*))?$")


def resolve(name: str, d: int = 2, m: int = 1) -> NamedFunction:
    """Build a suite member from a name such as ``"exp_ax_half:a=0.5"``."""
    mt = _NAME.match(name.strip())
    if not mt:
        raise KeyError(f"malformed function name {name!r}")
    base, argstr = mt.group(1), mt.group(2)
    kwargs: dict = {}
    if (d, m) == (2, 1) and base in _ALIASES:
        base, kwargs = _ALIASES[base][0], dict(_ALIASES[base][1])
    if argstr:
        for item in argstr.split(","):
            key, sep, val = item.partition("=")
            if not sep:
                raise KeyError(f"malformed parameter {item!r} in {name!r}")
            kwargs[key.strip()] = float(val)
    factories = _factories(d, m)
    if base not in factories:
        raise KeyError(f"unknown function {name!r}")
    try:
        f = factories[base](**kwargs)
    except TypeError as exc:
        raise KeyError(f"bad parameters for {name!r}: {exc}") from None
    horizontal = not any(f.depends_on(i) for i in range(d, d + m))
    return NamedFunction(name, f, horizontal)


def standard_suite(d: int = 2, m: int = 1) -> list[NamedFunction]:
    """Deterministic suite of integrable members, tagged horizontal or full.

    For ``(d, m) = (2, 1)`` this is the Heisenberg suite in ``(x, y, z)``.
    """
    if (d, m) == (2, 1):
        names = ["const:c=1", "x", "y", "z"]
    else:
        names = ["const:c=1", "coord:i=0", f"coord:i={d}"]
    names += [
        "exp_ax_half:a=0.25",
        "exp_ax_half:a=0.5",
        "exp_ax_half:a=1",
        "gauss_r:s=0.25",
        "gauss_r:s=0.5",
        "xy_gauss",
        "z_gauss",
        "gauss_1pz2",
        "xz_gauss",
        "shifted_gauss:c=0.5",
    ]
    return [resolve(nm, d, m) for nm in names]


def random_member(rng: np.random.Generator, nvars: int = 3, degree: int = 3, n_terms: int = 5) -> TestFunction:
    """Random polynomial times a Gaussian envelope with a small linear tilt."""
    poly: dict = {}
    for _ in range(n_terms):
        exps = rng.multinomial(int(rng.integers(0, degree + 1)), [1.0 / nvars] * nvars)
        poly[tuple(int(e) for e in exps)] = float(rng.normal())
    scales = rng.uniform(0.1, 0.5, size=nvars)
    A = rng.normal(scale=0.05, size=(nvars, nvars))
    Q = gaussian_envelope(scales) + 0.5 * (A + A.T)
    lin = rng.normal(scale=0.2, size=nvars)
    return TestFunction.make(poly, Q=Q, lin=lin, nvars=nvars)


def is_constant(f: TestFunction) -> bool:
    return all(not f.depends_on(i) for i in range(f.nvars))

