"""Group arithmetic on the Heisenberg group and on step-two Carnot groups.

Points are stored in exponential coordinates. Every operation accepts
scalars or numpy arrays in the coordinate slots, so the same functions serve
single points and whole Monte Carlo banks.

The matrix coordinates ``M(a, b, c)`` are not implemented; they relate to the
exponential ones through ``a = x``, ``b = y``, ``c = z + x*y/2``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

SKEW_TOL = 1e-12
INDEPENDENCE_TOL = 1e-10


class InvalidPointError(ValueError):
    """Raised when a point has non-finite coordinates."""


class SpecError(ValueError):
    """Raised for an invalid CarnotSpec or a malformed spec file."""


class GroupPoint(NamedTuple):
    """Point ``(x, y, z)`` of the Heisenberg group.

    Fields may be floats or equally shaped arrays (a bank of points).
    """

    x: float | np.ndarray
    y: float | np.ndarray
    z: float | np.ndarray


IDENTITY = GroupPoint(0.0, 0.0, 0.0)


def _check_finite(*points):
    for p in points:
        for c in p:
            if not np.all(np.isfinite(c)):
                raise InvalidPointError(f"non-finite coordinate in {p!r}")


def multiply(g: GroupPoint, h: GroupPoint) -> GroupPoint:
    """Group product ``(x+x', y+y', z+z'+(xy'-yx')/2)``."""
    _check_finite(g, h)
    return GroupPoint(g.x + h.x, g.y + h.y, g.z + h.z + 0.5 * (g.x * h.y - g.y * h.x))


def inverse(g: GroupPoint) -> GroupPoint:
    _check_finite(g)
    return GroupPoint(-g.x, -g.y, -g.z)


def dilate(lam: float, g: GroupPoint) -> GroupPoint:
    """Homogeneous dilation ``(lam*x, lam*y, lam**2*z)``."""
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    _check_finite(g)
    return GroupPoint(lam * g.x, lam * g.y, lam * lam * g.z)


def pseudo_norm_sq(g: GroupPoint):
    """Return ``x**2 + y**2 + |z|``.

    This homogeneous quantity is comparable to the squared Carnot-Caratheodory
    distance from the origin up to two unknown constants; it is used wherever
    that distance appears.
    """
    _check_finite(g)
    return g.x * g.x + g.y * g.y + np.abs(g.z)


# ---------------------------------------------------------------------------
# step-two Carnot groups


class CarnotPoint(NamedTuple):
    """Point ``(x, z)`` with ``x`` of trailing length d and ``z`` of length m."""

    x: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class CarnotSpec:
    """Group law ``(x, z).(x', z') = (x+x', z+z'+<Bx, x'>/2)``.

    ``B`` is a stack of m skew-symmetric d x d matrices. Validation thresholds
    are configurable through ``skew_tol`` and ``independence_tol``.
    """

    B: np.ndarray
    skew_tol: float = SKEW_TOL
    independence_tol: float = INDEPENDENCE_TOL
    # (l, p, q, b_qp) for p < q with b_qp != 0, the terms of the area form
    _pairs: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        if B.ndim == 2:
            B = B[None]
        if B.ndim != 3 or B.shape[1] != B.shape[2] or B.shape[0] < 1:
            raise SpecError(f"B must have shape (m, d, d), got {B.shape}")
        if not np.all(np.isfinite(B)):
            raise SpecError("B has non-finite entries")
        for l, Bl in enumerate(B):
            err = np.max(np.abs(Bl + Bl.T))
            if err > self.skew_tol:
                raise SpecError(f"B{l + 1} is not skew-symmetric (|B+B^T| = {err:.3g})")
        m, d, _ = B.shape
        smin = np.linalg.svd(B.reshape(m, d * d), compute_uv=False)[-1]
        if smin <= self.independence_tol:
            raise SpecError(f"B matrices are linearly dependent (smallest singular value {smin:.3g})")
        B.setflags(write=False)
        object.__setattr__(self, "B", B)
        pairs = tuple(
            (l, p, q, float(B[l, q, p]))
            for l in range(m)
            for p in range(d)
            for q in range(p + 1, d)
            if B[l, q, p] != 0.0
        )
        object.__setattr__(self, "_pairs", pairs)

    @property
    def d(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[0]

    def area_form(self, x, xp):
        """``<B^(l) x, x'>`` for every l, shape ``(..., m)``.

        Written as ``sum_{p<q} b_qp (x_p x'_q - x_q x'_p)`` and accumulated
        term by term, so that the Heisenberg spec reproduces
        ``x y' - y x'`` bit for bit.
        """
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], xp.shape[:-1])
        out = [None] * self.m
        for l, p, q, b in self._pairs:
            term = b * (x[..., p] * xp[..., q] - x[..., q] * xp[..., p])
            out[l] = term if out[l] is None else out[l] + term
        return np.stack(
            [np.zeros(shape) if o is None else np.broadcast_to(o, shape) for o in out], axis=-1
        )

    def check_point(self, g: CarnotPoint) -> None:
        if np.shape(g.x)[-1:] != (self.d,) or np.shape(g.z)[-1:] != (self.m,):
            raise ValueError(
                f"point shapes {np.shape(g.x)}, {np.shape(g.z)} do not match d={self.d}, m={self.m}"
            )
        if not (np.all(np.isfinite(g.x)) and np.all(np.isfinite(g.z))):
            raise InvalidPointError("non-finite coordinate")


HEISENBERG_B = np.array([[0.0, -1.0], [1.0, 0.0]])


def heisenberg_spec() -> CarnotSpec:
    """The d=2, m=1 spec whose law coincides with :func:`multiply`."""
    return CarnotSpec(HEISENBERG_B)


def free_step_two_spec(d: int) -> CarnotSpec:
    """Free step-two group on d generators: one ``E_qp - E_pq`` per pair p < q."""
    mats = []
    for p in range(d):
        for q in range(p + 1, d):
            b = np.zeros((d, d))
            b[q, p], b[p, q] = 1.0, -1.0
            mats.append(b)
    return CarnotSpec(np.array(mats))


def carnot_identity(spec: CarnotSpec) -> CarnotPoint:
    return CarnotPoint(np.zeros(spec.d), np.zeros(spec.m))


def carnot_multiply(spec: CarnotSpec, g: CarnotPoint, h: CarnotPoint) -> CarnotPoint:
    spec.check_point(g)
    spec.check_point(h)
    gx, gz = np.asarray(g.x, float), np.asarray(g.z, float)
    hx, hz = np.asarray(h.x, float), np.asarray(h.z, float)
    return CarnotPoint(gx + hx, gz + hz + 0.5 * spec.area_form(gx, hx))


def carnot_inverse(spec: CarnotSpec, g: CarnotPoint) -> CarnotPoint:
    spec.check_point(g)
    return CarnotPoint(-np.asarray(g.x, float), -np.asarray(g.z, float))


def carnot_dilate(spec: CarnotSpec, lam: float, g: CarnotPoint) -> CarnotPoint:
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    spec.check_point(g)
    return CarnotPoint(lam * np.asarray(g.x, float), lam * lam * np.asarray(g.z, float))


def carnot_pseudo_norm_sq(spec: CarnotSpec, g: CarnotPoint):
    spec.check_point(g)
    return np.sum(np.square(g.x), axis=-1) + np.sum(np.abs(g.z), axis=-1)


# ---------------------------------------------------------------------------
# spec files
#
#   # comment
#   d = 2
#   m = 1
#   B1 =
#     0 -1
#     1  0
#
# Matrix rows follow their ``Bl =`` header, row-major, whitespace separated.

_KEY = re.compile(r"^\s*([A-Za-z]\w*)\s*=\s*(.*?)\s*$")


def parse_spec(text: str, source: str = "<spec>") -> CarnotSpec:
    """Parse a CarnotSpec from its text form, with line-numbered errors."""
    scalars: dict[str, tuple[int, int]] = {}
    blocks: dict[int, list[tuple[int, list[float]]]] = {}
    header_line: dict[int, int] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _KEY.match(line)
        if m:
            key, val = m.group(1), m.group(2)
            bm = re.fullmatch(r"B(\d+)", key)
            if bm:
                idx = int(bm.group(1))
                if idx in blocks:
                    raise SpecError(f"{source}:{lineno}: duplicate block {key}")
                blocks[idx] = []
                header_line[idx] = lineno
                current = idx
                if val:
                    raise SpecError(f"{source}:{lineno}: matrix rows must start on the next line")
            elif key in ("d", "m"):
                try:
                    scalars[key] = (int(val), lineno)
                except ValueError:
                    raise SpecError(f"{source}:{lineno}: {key} must be an integer, got {val!r}") from None
                current = None
            else:
                raise SpecError(f"{source}:{lineno}: unknown key {key!r}")
            continue
        if current is None:
            raise SpecError(f"{source}:{lineno}: matrix row outside a B block")
        try:
            row = [float(tok) for tok in line.split()]
        except ValueError:
            raise SpecError(f"{source}:{lineno}: non-numeric matrix entry in {line!r}") from None
        blocks[current].append((lineno, row))

    for key in ("d", "m"):
        if key not in scalars:
            raise SpecError(f"{source}: missing key {key!r}")
        if scalars[key][0] < 1:
            raise SpecError(f"{source}:{scalars[key][1]}: {key} must be positive")
    d, m = scalars["d"][0], scalars["m"][0]
    if sorted(blocks) != list(range(1, m + 1)):
        raise SpecError(f"{source}: expected blocks B1..B{m}, found {sorted(f'B{i}' for i in blocks)}")
    mats = []
    for idx in range(1, m + 1):
        rows = blocks[idx]
        if len(rows) != d:
            raise SpecError(f"{source}:{header_line[idx]}: B{idx} has {len(rows)} rows, expected {d}")
        for lineno, row in rows:
            if len(row) != d:
                raise SpecError(f"{source}:{lineno}: row has {len(row)} entries, expected {d}")
        mat = np.array([row for _, row in rows])
        err = np.max(np.abs(mat + mat.T))
        if err > SKEW_TOL:
            raise SpecError(f"{source}:{header_line[idx]}: B{idx} is not skew-symmetric (|B+B^T| = {err:.3g})")
        mats.append(mat)
    try:
        return CarnotSpec(np.array(mats))
    except SpecError as exc:
        raise SpecError(f"{source}: {exc}") from None


def load_spec(path) -> CarnotSpec:
    path = Path(path)
    return parse_spec(path.read_text(), source=str(path))


def format_spec(spec: CarnotSpec) -> str:
    lines = [f"d = {spec.d}", f"m = {spec.m}"]
    for l, Bl in enumerate(spec.B, start=1):
        lines.append(f"B{l} =")
        lines.extend("  " + " ".join(repr(float(v)) for v in row) for row in Bl)
    return "\n".join(lines) + "\n"
