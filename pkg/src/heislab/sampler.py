"""Reproducible sampling of random walks and Brownian paths on the groups.

Levy area is produced by composing fine Gaussian increments with the exact
group law: each step applies ``(X, Y, A) . (dx, dy, 0)``, so the area column
is literally the vertical coordinate of the product. As the number of fine
steps grows this converges to Brownian motion with its Levy area.

Stream layout (part of the on-disk reproducibility contract):

* paths are split into chunks of ``SeedPlan.chunk_size``; chunk ``c`` draws
  from ``PCG64(SeedSequence(master_seed, spawn_key=(c,)))``;
* within a chunk of P paths, grid cell k (k = 0..K-1) draws a
  ``(P, substeps, d)`` block of standard normals for the horizontal
  increments, cells in order; the Heisenberg sampler then draws a ``(P, K)``
  block for the vertical Brownian motion;
* random walks draw ``(P, b, 2)`` blocks of ``b = min(n, WALK_BLOCK)``
  horizontal steps, then one ``(P,)`` block for the vertical noise.

The vertical steps ``beta * zeta_i / sqrt(n)`` of a walk are central, so they
only enter through their sum, which is exactly ``beta * N(0, 1)``; one normal
per walk is drawn for it. The same draws serve every beta.

Results depend on the seed plan only, never on the number of worker threads.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .carnot_core import CarnotPoint, CarnotSpec, GroupPoint, multiply

DEFAULT_CHUNK = 4096
DEFAULT_SUBSTEPS = 64
WALK_BLOCK = 256
# banks up to this many stored floats per coordinate are kept in memory
MATERIALIZE_LIMIT = 2e7


@dataclass(frozen=True)
class SeedPlan:
    master_seed: int
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")

    def generator(self, chunk: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(chunk),))
        return np.random.Generator(np.random.PCG64(ss))

    def layout(self, n: int) -> list[tuple[int, int]]:
        """``(chunk_index, count)`` pairs covering n items."""
        out = []
        for c, start in enumerate(range(0, n, self.chunk_size)):
            out.append((c, min(self.chunk_size, n - start)))
        return out


def as_plan(seed) -> SeedPlan:
    return seed if isinstance(seed, SeedPlan) else SeedPlan(int(seed))


def _run_chunks(plan: SeedPlan, n: int, work: Callable, threads: int = 1) -> Iterator:
    """Yield ``work(rng, count)`` for every chunk, in chunk order."""
    layout = plan.layout(n)
    if threads <= 1:
        for c, count in layout:
            yield work(plan.generator(c), count)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for start in range(0, len(layout), threads):
            window = layout[start:start + threads]
            yield from pool.map(lambda cc: work(plan.generator(cc[0]), cc[1]), window)


# ---------------------------------------------------------------------------
# random walk S_n


def area_formula(xs, ys) -> float:
    """Signed area ``(1/2n) sum_ij x_i eps_ij y_j`` of the walk with steps
    ``(x_i, y_i)``, where ``eps_ij = 1[j>i] - 1[j<i]``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size == 0:
        raise ValueError("xs and ys must be non-empty vectors of equal length")
    n = xs.size
    before = np.concatenate(([0.0], np.cumsum(ys)[:-1]))
    after = ys.sum() - before - ys
    return float(np.dot(xs, after - before) / (2 * n))


def _walk_increments(rng: np.random.Generator, count: int, n: int) -> Iterator[np.ndarray]:
    done = 0
    block = min(n, WALK_BLOCK)
    while done < n:
        b = min(block, n - done)
        yield rng.standard_normal((count, b, 2))
        done += b


def _walk_chunk(rng, count, n):
    s = 1.0 / np.sqrt(n)
    x = np.zeros((count, 1))
    y = np.zeros((count, 1))
    a = np.zeros(count)
    for inc in _walk_increments(rng, count, n):
        dx, dy = s * inc[..., 0], s * inc[..., 1]
        xs = np.cumsum(np.concatenate((x, dx), axis=1), axis=1)
        ys = np.cumsum(np.concatenate((y, dy), axis=1), axis=1)
        a = a + 0.5 * np.sum(xs[:, :-1] * dy - ys[:, :-1] * dx, axis=1)
        x, y = xs[:, -1:], ys[:, -1:]
    v = rng.standard_normal(count)
    return x[:, 0], y[:, 0], a, v


@dataclass
class WalkParts:
    """Endpoint pieces of S_n: horizontal position, signed area and the
    standardized vertical noise, so that ``z = area + beta * v``."""

    x: np.ndarray
    y: np.ndarray
    area: np.ndarray
    v: np.ndarray

    def point(self, beta: float) -> GroupPoint:
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        return GroupPoint(self.x, self.y, self.area + beta * self.v)


def walk_parts(n: int, n_walks: int, seed, threads: int = 1) -> WalkParts:
    if n < 1:
        raise ValueError("n must be >= 1")
    plan = as_plan(seed)
    parts = list(_run_chunks(plan, n_walks, lambda rng, c: _walk_chunk(rng, c, n), threads))
    return WalkParts(*(np.concatenate([p[i] for p in parts]) for i in range(4)))


def walk_bank(n: int, beta: float, n_walks: int, seed, threads: int = 1) -> GroupPoint:
    """``n_walks`` independent copies of S_n as a GroupPoint of arrays."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return walk_parts(n, n_walks, seed, threads).point(beta)


def walk_sample(n: int, beta: float, seed) -> GroupPoint:
    """One S_n, built by iterated group products of the scaled increments.

    Uses the same stream as a one-walk :func:`walk_bank`; the central vertical
    noise is applied as a final product with ``(0, 0, beta * v)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    plan = as_plan(seed)
    rng = plan.generator(0)
    s = 1.0 / np.sqrt(n)
    g = GroupPoint(0.0, 0.0, 0.0)
    for inc in _walk_increments(rng, 1, n):
        for xi, yi in inc[0]:
            g = multiply(g, GroupPoint(s * xi, s * yi, 0.0))
    v = float(rng.standard_normal(1)[0])
    g = multiply(g, GroupPoint(0.0, 0.0, beta * v))
    return GroupPoint(float(g.x), float(g.y), float(g.z))


@dataclass
class TriangularArray:
    """S_n together with ``X_{n,i} = -(1/sqrt n) sum_j eps_ij x_j`` and the
    same for y, for every i; shapes ``(count,)`` and ``(count, n)``."""

    end: GroupPoint
    xi: np.ndarray
    yi: np.ndarray


def _triangular_chunk(rng, count, n, beta):
    s = 1.0 / np.sqrt(n)
    inc = np.concatenate(list(_walk_increments(rng, count, n)), axis=1)
    v = rng.standard_normal(count)
    dx, dy = s * inc[..., 0], s * inc[..., 1]
    cx = np.cumsum(dx, axis=1)
    cy = np.cumsum(dy, axis=1)
    px = np.concatenate((np.zeros((count, 1)), cx[:, :-1]), axis=1)
    py = np.concatenate((np.zeros((count, 1)), cy[:, :-1]), axis=1)
    z = 0.5 * np.sum(px * dy - py * dx, axis=1) + beta * v
    # -(sum_{j>i} - sum_{j<i}) = prev + cum - total
    xi = px + cx - cx[:, -1:]
    yi = py + cy - cy[:, -1:]
    return cx[:, -1], cy[:, -1], z, xi, yi


def triangular_array(n: int, beta: float, count: int, seed, threads: int = 1) -> TriangularArray:
    plan = as_plan(seed)
    parts = list(_run_chunks(plan, count, lambda rng, c: _triangular_chunk(rng, c, n, beta), threads))
    cat = [np.concatenate([p[i] for p in parts]) for i in range(5)]
    return TriangularArray(GroupPoint(*cat[:3]), cat[3], cat[4])


# ---------------------------------------------------------------------------
# Brownian paths with Levy area


@dataclass
class PathSample:
    """Trajectories on the uniform grid ``k/K``.

    Columns are indexed by grid time. Arrays are 1-d for a single path and
    ``(n_paths, K+1)`` for a bank. ``order="right"`` marks paths built by
    composing increments on the left (the right-invariant construction).
    """

    grid: np.ndarray
    bx: np.ndarray
    by: np.ndarray
    area: np.ndarray
    w: np.ndarray
    beta: float
    order: str = "left"

    @property
    def K(self) -> int:
        return len(self.grid) - 1

    @property
    def z(self) -> np.ndarray:
        return self.area + self.beta * self.w

    @property
    def n_paths(self) -> int:
        return 1 if self.bx.ndim == 1 else self.bx.shape[0]

    def column(self, t: float) -> int:
        k = int(round(t * self.K))
        if not 0 <= k <= self.K or abs(k - t * self.K) > 1e-9:
            raise ValueError(f"time {t} is not on the grid of size {self.K}")
        return k

    def at(self, t: float) -> GroupPoint:
        k = self.column(t)
        return GroupPoint(self.bx[..., k], self.by[..., k], self.area[..., k] + self.beta * self.w[..., k])

    @property
    def end(self) -> GroupPoint:
        return self.at(1.0)

    def __getitem__(self, rows) -> "PathSample":
        return PathSample(self.grid, self.bx[rows], self.by[rows], self.area[rows], self.w[rows], self.beta, self.order)

    def reflected(self) -> "PathSample":
        """Image under ``x -> -x`` (area changes sign)."""
        return PathSample(self.grid, -self.bx, self.by, -self.area, self.w, self.beta, self.order)


def _path_chunk(rng, count, K, substeps, beta, order):
    N = K * substeps
    s = 1.0 / np.sqrt(N)
    bx = np.zeros((count, K + 1))
    by = np.zeros((count, K + 1))
    area = np.zeros((count, K + 1))
    x = np.zeros((count, 1))
    y = np.zeros((count, 1))
    a = np.zeros((count, 1))
    for k in range(K):
        inc = rng.standard_normal((count, substeps, 2))
        dx = s * inc[..., 0]
        dy = s * inc[..., 1]
        xs = np.cumsum(np.concatenate((x, dx), axis=1), axis=1)
        ys = np.cumsum(np.concatenate((y, dy), axis=1), axis=1)
        if order == "left":
            da = 0.5 * (xs[:, :-1] * dy - ys[:, :-1] * dx)
        else:
            da = 0.5 * (dx * ys[:, :-1] - dy * xs[:, :-1])
        a = np.cumsum(np.concatenate((a, da), axis=1), axis=1)[:, -1:]
        x, y = xs[:, -1:], ys[:, -1:]
        bx[:, k + 1], by[:, k + 1], area[:, k + 1] = x[:, 0], y[:, 0], a[:, 0]
    w = np.zeros((count, K + 1))
    w[:, 1:] = np.cumsum(np.sqrt(1.0 / K) * rng.standard_normal((count, K)), axis=1)
    return bx, by, area, w


def _area_levels_chunk(rng, count, levels):
    fine = max(levels)
    inc = rng.standard_normal((count, fine, 2))
    inc *= 1.0 / np.sqrt(fine)
    cx, cy = np.cumsum(inc[..., 0], axis=1), np.cumsum(inc[..., 1], axis=1)
    out = []
    for sub in levels:
        # coarse positions are every (fine // sub)-th fine position
        step = fine // sub
        xs, ys = cx[:, step - 1::step], cy[:, step - 1::step]
        dx, dy = np.diff(xs, axis=1, prepend=0.0), np.diff(ys, axis=1, prepend=0.0)
        # area = 1/2 sum_k (x_{k-1} dy_k - y_{k-1} dx_k); the dx dy terms cancel
        out.append(0.5 * (np.einsum("ij,ij->i", xs, dy) - np.einsum("ij,ij->i", ys, dx)))
    return out


def area_levels(n_paths: int, levels: Sequence[int], seed, threads: int = 1) -> dict[int, np.ndarray]:
    """Levy area at time 1 with each number of fine steps in ``levels``, all
    built from the same Brownian increments (common random numbers).

    The finest level uses the stream of a one-cell :class:`PathBank` with
    ``substeps = max(levels)`` and agrees with its area column to rounding.
    Every level must divide the finest one.
    """
    levels = sorted(int(v) for v in levels)
    fine = levels[-1]
    if levels[0] < 1 or any(fine % v for v in levels):
        raise ValueError("levels must be positive divisors of the finest level")
    parts = list(_run_chunks(as_plan(seed), n_paths, lambda rng, c: _area_levels_chunk(rng, c, levels), threads))
    return {v: np.concatenate([p[i] for p in parts]) for i, v in enumerate(levels)}


@dataclass
class PathBank:
    """Lazily generated bank of paths with a fixed seed plan.

    Small banks are materialized once and cached; large ones are regenerated
    chunk by chunk on every pass, which is reproducible by construction.
    """

    n_paths: int
    K: int
    substeps: int = DEFAULT_SUBSTEPS
    beta: float = 0.0
    plan: SeedPlan = field(default_factory=lambda: SeedPlan(0))
    order: str = "left"
    threads: int = 1
    _cache: PathSample | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.n_paths < 1 or self.K < 1 or self.substeps < 1:
            raise ValueError("n_paths, K and substeps must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.order not in ("left", "right"):
            raise ValueError("order must be 'left' or 'right'")
        self.plan = as_plan(self.plan)

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.K + 1) / self.K

    @property
    def seed(self) -> int:
        return self.plan.master_seed

    def _wrap(self, arrays) -> PathSample:
        return PathSample(self.grid, *arrays, beta=self.beta, order=self.order)

    def chunks(self) -> Iterator[PathSample]:
        if self._cache is not None:
            yield self._cache
            return
        work = lambda rng, c: _path_chunk(rng, c, self.K, self.substeps, self.beta, self.order)
        for arrays in _run_chunks(self.plan, self.n_paths, work, self.threads):
            yield self._wrap(arrays)

    def materialize(self) -> PathSample:
        if self._cache is not None:
            return self._cache
        parts = list(self.chunks())
        out = PathSample(
            self.grid,
            *(np.concatenate([getattr(p, a) for p in parts]) for a in ("bx", "by", "area", "w")),
            beta=self.beta,
            order=self.order,
        )
        if self.n_paths * (self.K + 1) <= MATERIALIZE_LIMIT:
            self._cache = out
        return out


def iter_chunks(paths) -> Iterator:
    """Chunks of a lazy bank, or a materialized sample as a single chunk."""
    if hasattr(paths, "chunks"):
        yield from paths.chunks()
    else:
        yield paths


def fold(paths, fn: Callable) -> dict:
    """Apply ``fn`` to every chunk and concatenate the returned arrays."""
    out: dict[str, list] = {}
    for chunk in iter_chunks(paths):
        for key, val in fn(chunk).items():
            out.setdefault(key, []).append(np.asarray(val))
    return {k: np.concatenate(v) for k, v in out.items()}


def path_sample(K: int, substeps: int = DEFAULT_SUBSTEPS, beta: float = 0.0, seed=0) -> PathSample:
    """One trajectory on the uniform K-grid (row 0 of the matching bank)."""
    return PathBank(1, K, substeps, beta, as_plan(seed)).materialize()[0]


def path_bank(n_paths: int, K: int, substeps: int = DEFAULT_SUBSTEPS, beta: float = 0.0, seed=0, order: str = "left", threads: int = 1) -> PathBank:
    return PathBank(n_paths, K, substeps, beta, as_plan(seed), order, threads)


def grid_size_for(ts: Sequence[float], max_K: int = 4096) -> int:
    """Smallest K with every t an integer multiple of 1/K."""
    for K in range(1, max_K + 1):
        if all(abs(t * K - round(t * K)) < 1e-9 for t in ts):
            return K
    raise ValueError(f"times {ts} do not fit a uniform grid of size <= {max_K}")


def joint_sample(ts: Sequence[float], beta: float, seed, n_paths: int = 1, substeps: int = DEFAULT_SUBSTEPS, K: int | None = None):
    """``(H_1, [H_t for t in ts])`` read off the same trajectories."""
    ts = list(ts)
    if not ts or any(not 0 < t <= 1 for t in ts) or ts != sorted(ts):
        raise ValueError("ts must be a sorted list inside (0, 1]")
    K = grid_size_for(ts) if K is None else K
    paths = PathBank(n_paths, K, substeps, beta, as_plan(seed)).materialize()
    if n_paths == 1:
        paths = paths[0]
    return paths.end, [paths.at(t) for t in ts]


# ---------------------------------------------------------------------------
# step-two Carnot groups


@dataclass
class CarnotPath:
    """Carnot trajectories: ``x`` has shape ``(n, K+1, d)``, ``z`` ``(n, K+1, m)``."""

    grid: np.ndarray
    x: np.ndarray
    z: np.ndarray

    @property
    def K(self) -> int:
        return len(self.grid) - 1

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    def column(self, t: float) -> int:
        k = int(round(t * self.K))
        if not 0 <= k <= self.K or abs(k - t * self.K) > 1e-9:
            raise ValueError(f"time {t} is not on the grid of size {self.K}")
        return k

    def at(self, t: float) -> CarnotPoint:
        k = self.column(t)
        return CarnotPoint(self.x[:, k], self.z[:, k])

    @property
    def end(self) -> CarnotPoint:
        return self.at(1.0)


def _carnot_chunk(rng, count, spec: CarnotSpec, K, substeps):
    d, m = spec.d, spec.m
    N = K * substeps
    s = 1.0 / np.sqrt(N)
    xs_out = np.zeros((count, K + 1, d))
    zs_out = np.zeros((count, K + 1, m))
    pos = np.zeros((count, 1, d))
    vert = np.zeros((count, 1, m))
    for k in range(K):
        dx = s * rng.standard_normal((count, substeps, d))
        path = np.cumsum(np.concatenate((pos, dx), axis=1), axis=1)
        dz = 0.5 * spec.area_form(path[:, :-1], dx)
        vert = np.cumsum(np.concatenate((vert, dz), axis=1), axis=1)[:, -1:]
        pos = path[:, -1:]
        xs_out[:, k + 1], zs_out[:, k + 1] = pos[:, 0], vert[:, 0]
    return xs_out, zs_out


@dataclass
class CarnotBank:
    spec: CarnotSpec
    n_paths: int
    K: int
    substeps: int = DEFAULT_SUBSTEPS
    plan: SeedPlan = field(default_factory=lambda: SeedPlan(0))
    threads: int = 1
    _cache: CarnotPath | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.n_paths < 1 or self.K < 1 or self.substeps < 1:
            raise ValueError("n_paths, K and substeps must be positive")
        self.plan = as_plan(self.plan)

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.K + 1) / self.K

    @property
    def seed(self) -> int:
        return self.plan.master_seed

    def chunks(self) -> Iterator[CarnotPath]:
        if self._cache is not None:
            yield self._cache
            return
        work = lambda rng, c: _carnot_chunk(rng, c, self.spec, self.K, self.substeps)
        for x, z in _run_chunks(self.plan, self.n_paths, work, self.threads):
            yield CarnotPath(self.grid, x, z)

    def materialize(self) -> CarnotPath:
        if self._cache is not None:
            return self._cache
        parts = list(self.chunks())
        out = CarnotPath(self.grid, np.concatenate([p.x for p in parts]), np.concatenate([p.z for p in parts]))
        if self.n_paths * (self.K + 1) * (self.spec.d + self.spec.m) <= 3 * MATERIALIZE_LIMIT:
            self._cache = out
        return out


def carnot_path_sample(spec: CarnotSpec, K: int, substeps: int = DEFAULT_SUBSTEPS, seed=0, n_paths: int = 1) -> CarnotPath:
    return CarnotBank(spec, n_paths, K, substeps, as_plan(seed)).materialize()


# ---------------------------------------------------------------------------
# sample-bank files: little-endian header then one fixed-width record per
# path holding bx, by, area, w (K+1 doubles each)

BANK_MAGIC = b"HLSB"
BANK_VERSION = 1
_HEADER = struct.Struct("<4sIQIIIdQ")


def write_bank(path, bank: PathBank) -> None:
    sample = bank.materialize()
    header = _HEADER.pack(
        BANK_MAGIC, BANK_VERSION, bank.plan.master_seed, bank.plan.chunk_size,
        bank.K, bank.substeps, float(bank.beta), bank.n_paths,
    )
    records = np.stack([sample.bx, sample.by, sample.area, sample.w], axis=1)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(records, dtype="<f8").tobytes())


def read_bank(path) -> tuple[PathBank, PathSample]:
    """Read a bank file; returns the bank description and its contents."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, seed, chunk, K, substeps, beta, count = _HEADER.unpack_from(raw)
    if magic != BANK_MAGIC:
        raise ValueError(f"{path}: not a sample-bank file")
    if version != BANK_VERSION:
        raise ValueError(f"{path}: unsupported bank version {version}")
    expected = _HEADER.size + count * 4 * (K + 1) * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    rec = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(count, 4, K + 1)
    bank = PathBank(count, K, substeps, beta, SeedPlan(seed, chunk))
    sample = PathSample(bank.grid, *(rec[:, i].astype(float) for i in range(4)), beta=beta)
    bank._cache = sample
    return bank, sample
