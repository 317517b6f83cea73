"""Monte Carlo estimators with bootstrap confidence intervals.

Point values are summed with ``math.fsum`` so they are correctly rounded and
independent of summation order. Confidence half-widths are percentile
bootstrap intervals (200 resamples, 95 % by default) driven by a generator
derived from the sample seed, so every estimate is bit-reproducible.

Wherever the Carnot-Caratheodory distance would appear, the pseudo-norm
``x^2 + y^2 + |z|`` is used instead; the unknown equivalence constants end up
inside the fitted constants reported here.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .carnot_core import GroupPoint, inverse, multiply, pseudo_norm_sq
from .sampler import PathSample, fold
from .testfn import TestFunction, field_X, field_Y, is_integrable

N_BOOT = 200
LEVEL = 0.95
_BOOT_TAG = 0xB0075


@dataclass(frozen=True)
class McEstimate:
    value: float
    ci_half_width: float
    n_samples: int
    seed: int

    @property
    def ci(self) -> float:
        return self.ci_half_width

    def as_dict(self) -> dict:
        return asdict(self)


def fmean(values) -> float:
    values = np.asarray(values, dtype=float).ravel()
    return math.fsum(values) / values.size


def _boot_rng(seed: int, tag: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(_BOOT_TAG, int(tag))))


def bootstrap(columns: Sequence[np.ndarray], statistic: Callable, seed: int = 0, n_boot: int = N_BOOT, level: float = LEVEL, tag: int = 0) -> float:
    """Percentile bootstrap half-width of ``statistic(*columns)``.

    Rows are resampled jointly, so paired columns keep their pairing.
    """
    n = len(columns[0])
    if n < 2:
        return 0.0
    rng = _boot_rng(seed, tag)
    reps = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        reps[b] = statistic(*(c[idx] for c in columns))
    lo, hi = np.quantile(reps, [(1 - level) / 2, (1 + level) / 2])
    return float(max(hi - lo, 0.0) / 2)


def _as_values(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("no samples")
    return v


def _xlogx(v):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)


def entropy_value(v: np.ndarray) -> float:
    """Plug-in ``E[v log v] - E[v] log E[v]`` with ``0 log 0 = 0``."""
    m = fmean(v)
    if m <= 0:
        return 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0) / m), 0.0)
    return max(math.fsum(terms) / v.size, 0.0)


def _entropy_fast(v, phi):
    m = v.mean()
    return phi.mean() - (m * math.log(m) if m > 0 else 0.0)


def entropy(f2_values, seed: int = 0, n_boot: int = N_BOOT) -> McEstimate:
    """Entropy of the empirical law of nonnegative values (usually f^2)."""
    v = _as_values(f2_values)
    if np.any(v < 0):
        raise ValueError("entropy needs nonnegative values")
    phi = _xlogx(v)
    ci = bootstrap([v, phi], _entropy_fast, seed, n_boot, tag=1)
    return McEstimate(entropy_value(v), ci, v.size, int(seed))


def variance(values, seed: int = 0, n_boot: int = N_BOOT) -> McEstimate:
    v = _as_values(values)
    m = fmean(v)
    val = math.fsum((v - m) ** 2) / v.size
    ci = bootstrap([v], lambda a: a.var(), seed, n_boot, tag=2)
    return McEstimate(val, ci, v.size, int(seed))


def mean(values, seed: int = 0, n_boot: int = N_BOOT) -> McEstimate:
    v = _as_values(values)
    ci = bootstrap([v], lambda a: a.mean(), seed, n_boot, tag=3)
    return McEstimate(fmean(v), ci, v.size, int(seed))


def covariance(a, b, seed: int = 0, n_boot: int = N_BOOT) -> McEstimate:
    a, b = _as_values(a), _as_values(b)
    ma, mb = fmean(a), fmean(b)
    val = math.fsum((a - ma) * (b - mb)) / a.size
    stat = lambda u, v: np.mean((u - u.mean()) * (v - v.mean()))
    ci = bootstrap([a, b], stat, seed, n_boot, tag=4)
    return McEstimate(val, ci, a.size, int(seed))


def z_score(est: McEstimate, target: float, level: float = LEVEL) -> float:
    """``|value - target|`` in units of the standard error implied by the
    bootstrap half-width."""
    from scipy.stats import norm

    se = est.ci / norm.ppf((1 + level) / 2)
    diff = abs(est.value - target)
    return diff / se if se > 0 else (0.0 if diff == 0 else math.inf)


# ---------------------------------------------------------------------------
# gradient forms


@dataclass(frozen=True)
class Derivatives:
    """``f`` and its first partials evaluated on a bank of points."""

    f: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    fz: np.ndarray

    @classmethod
    def of(cls, f: TestFunction, p) -> "Derivatives":
        return cls(f(p), f.partial(0)(p), f.partial(1)(p), f.partial(2)(p))


def theorem1_integrand(d: Derivatives, h: GroupPoint, xt, yt, beta: float):
    """``(d_x f - (y - 2y')/2 d_z f)^2 + (d_y f + (x - 2x')/2 d_z f)^2 + beta^2 (d_z f)^2``
    at ``h = (x, y, z)`` with companion horizontal coordinates ``(x', y')``."""
    a = d.fx - (h.y - 2 * yt) / 2 * d.fz
    b = d.fy + (h.x - 2 * xt) / 2 * d.fz
    return a * a + b * b + beta * beta * (d.fz * d.fz)


def pointwise_form(f: TestFunction, form: str, p: GroupPoint, beta: float = 0.0, weight: Callable | None = None, companion=None):
    """Per-point values of a gradient form.

    ``form`` is one of ``horizontal`` (the carre du champ
    ``(Xf)^2 + (Yf)^2 + beta^2 (Zf)^2``), ``vertical`` (``(Zf)^2``),
    ``weighted`` (horizontal plus ``weight(p) (Zf)^2``), ``euclidean``
    (``(d_x f)^2 + (d_y f)^2``) or ``theorem1`` (needs ``companion``, a point
    whose horizontal coordinates enter the integrand).
    """
    d = Derivatives.of(f, p)
    if form == "horizontal":
        Xf, Yf = field_X(f)(p), field_Y(f)(p)
        return Xf * Xf + Yf * Yf + beta * beta * d.fz * d.fz
    if form == "vertical":
        return d.fz * d.fz
    if form == "weighted":
        if weight is None:
            raise ValueError("weighted form needs a weight function")
        Xf, Yf = field_X(f)(p), field_Y(f)(p)
        return Xf * Xf + Yf * Yf + beta * beta * d.fz * d.fz + weight(p) * d.fz * d.fz
    if form == "euclidean":
        return d.fx * d.fx + d.fy * d.fy
    if form == "theorem1":
        if companion is None:
            raise ValueError("theorem1 form needs companion points")
        return theorem1_integrand(d, p, companion[0], companion[1], beta)
    raise ValueError(f"unknown gradient form {form!r}")


def midpoint_nodes(order: int) -> np.ndarray:
    return (np.arange(order) + 0.5) / order


def quadrature_average(paths: PathSample, values_at: Callable, order: int) -> np.ndarray:
    """Per-path midpoint-rule average over t in (0, 1) of ``values_at(k)``,
    where k is the grid column of each node."""
    cols = [paths.column(t) for t in midpoint_nodes(order)]
    acc = None
    for k in cols:
        v = values_at(k)
        acc = v if acc is None else acc + v
    return acc / order


def energy(f: TestFunction, form: str, samples, beta: float = 0.0, weight: Callable | None = None, order: int = 16, seed: int | None = None) -> McEstimate:
    """Monte Carlo mean of a gradient form.

    ``samples`` is a GroupPoint bank for pointwise forms. For ``theorem1`` it
    is a path bank; the t-integral is a midpoint rule with ``order`` nodes and
    the estimate is ``int_0^1 E g(H_1, H_t) dt`` (without the factor 2).
    """
    if not is_integrable(f, 2):
        raise ValueError("test function is not square integrable under the heat kernel")
    if form == "theorem1":
        def per_chunk(ch: PathSample):
            h = ch.end
            d = Derivatives.of(f, h)
            q = quadrature_average(ch, lambda k: theorem1_integrand(d, h, ch.bx[:, k], ch.by[:, k], ch.beta), order)
            return {"q": q}

        vals = fold(samples, per_chunk)["q"]
        seed = getattr(samples, "seed", 0) if seed is None else seed
        return mean(vals, seed)
    vals = pointwise_form(f, form, samples, beta, weight)
    return mean(vals, 0 if seed is None else seed)


# ---------------------------------------------------------------------------
# Brownian bridge moments by nearest-neighbour conditioning


def default_k(n: int) -> int:
    return max(30, int(n ** 0.6 / 10))


def neighbour_distances(target: GroupPoint, end: GroupPoint, conditioning: str = "full"):
    """Conditioning distance from each endpoint to the target.

    ``full`` uses the pseudo-norm of ``target^{-1} . H_1``; ``euclidean``
    ignores the area and uses ``|(X_1, Y_1) - (x, y)|^2``.
    """
    if conditioning == "full":
        n = np.shape(end.x)
        t = GroupPoint(np.full(n, target.x), np.full(n, target.y), np.full(n, target.z))
        return pseudo_norm_sq(multiply(inverse(t), end))
    if conditioning == "euclidean":
        return (end.x - target.x) ** 2 + (end.y - target.y) ** 2
    raise ValueError(f"unknown conditioning {conditioning!r}")


def nearest(target: GroupPoint, end: GroupPoint, k: int, conditioning: str = "full") -> np.ndarray:
    """Indices of the k endpoints closest to target (ties broken by index)."""
    dist = neighbour_distances(target, end, conditioning)
    if k > dist.size:
        raise ValueError(f"k={k} exceeds the number of paths ({dist.size})")
    idx = np.argpartition(dist, k - 1)[:k]
    return np.sort(idx)


def bridge_moment(t: float, target: GroupPoint, paths: PathSample, k: int | None = None, conditioning: str = "full", seed: int = 0) -> McEstimate:
    """Estimate ``E(X_t^2 + Y_t^2 | H_1 = target)`` as the average over the k
    paths whose endpoints are nearest to target."""
    if not 0 <= t <= 1:
        raise ValueError("t must lie in [0, 1]")
    if hasattr(paths, "materialize"):
        paths = paths.materialize()
    k = default_k(paths.n_paths) if k is None else k
    if k < 30:
        raise ValueError("k must be at least 30")
    idx = nearest(target, paths.end, k, conditioning)
    col = paths.column(t)
    r2 = paths.bx[idx, col] ** 2 + paths.by[idx, col] ** 2
    return mean(r2, seed)


def euclidean_bridge_residual(t: float, r: float, paths, k: int | None = None, seed: int = 0) -> tuple[McEstimate, McEstimate]:
    """Compare ``E(X_t^2 + Y_t^2 | (X_1, Y_1))`` with ``t^2 |B_1|^2 + 2t(1-t)``.

    Returns the plain neighbour estimate at target ``(r, 0)`` and the mean of
    ``X_t^2 + Y_t^2 - (t^2 |B_1|^2 + 2t(1-t))`` over the same neighbours,
    with the identity applied at each neighbour's own endpoint. The residual
    has mean zero exactly, whatever the window size.
    """
    if hasattr(paths, "materialize"):
        paths = paths.materialize()
    k = default_k(paths.n_paths) if k is None else k
    target = GroupPoint(float(r), 0.0, 0.0)
    idx = nearest(target, paths.end, k, "euclidean")
    col = paths.column(t)
    r2 = paths.bx[idx, col] ** 2 + paths.by[idx, col] ** 2
    e2 = paths.bx[idx, -1] ** 2 + paths.by[idx, -1] ** 2
    return mean(r2, seed), mean(r2 - (t * t * e2 + 2 * t * (1 - t)), seed)


@dataclass
class BridgeFit:
    """Fitted bridge-control constants.

    ``C`` bounds ``E(X_t^2+Y_t^2 | H_1=h) <= C (t^2 N(h)^2 + t)`` on the grid;
    ``C_integrated`` bounds ``int_0^1 E(...) dt <= C (1 + x^2 + y^2 + |z|)``.
    ``table`` holds ``(t, x, y, z, moment, ci)`` rows.
    """

    C: float
    C_integrated: float
    conditioning: str
    k: int
    n_paths: int
    table: list = field(default_factory=list)

    @property
    def corollary_constant(self) -> float:
        """Weight in front of ``(1 + x^2 + y^2 + |z|) (d_z f)^2`` after
        expanding the Theorem-1 energy: ``1/2 + 2 C_integrated``."""
        return 0.5 + 2.0 * self.C_integrated


def bridge_lemma_fit(paths, t_grid: Sequence[float], target_grid: Sequence[GroupPoint], k: int | None = None, conditioning: str = "full", seed: int = 0) -> BridgeFit:
    t_grid = sorted(float(t) for t in t_grid)
    targets = [GroupPoint(*map(float, h)) for h in target_grid]
    if len(t_grid) < 2 or not targets or t_grid[0] != 0.0 or t_grid[-1] != 1.0:
        raise ValueError("t_grid needs at least two times spanning [0, 1]; target_grid must be non-empty")
    if hasattr(paths, "materialize"):
        paths = paths.materialize()
    k = default_k(paths.n_paths) if k is None else k
    C = 0.0
    C_int = 0.0
    table = []
    for h in targets:
        n2 = float(pseudo_norm_sq(h)) if conditioning == "full" else h.x ** 2 + h.y ** 2
        moments = []
        for t in t_grid:
            est = bridge_moment(t, h, paths, k, conditioning, seed)
            moments.append(est.value)
            table.append((t, h.x, h.y, h.z, est.value, est.ci))
            if t > 0:
                C = max(C, est.value / (t * t * n2 + t))
        integral = float(trapezoid(moments, t_grid))
        weight = 1 + h.x ** 2 + h.y ** 2 + (abs(h.z) if conditioning == "full" else 0.0)
        C_int = max(C_int, integral / weight)
    if not (np.isfinite(C) and C > 0):
        raise ValueError("degenerate grids: no positive moment to fit")
    return BridgeFit(C, C_int, conditioning, k, paths.n_paths, table)


def euclidean_bridge_constant(t_grid, r_grid) -> float:
    """``max (t^2 r^2 + 2t(1-t)) / (t^2 r^2 + t)`` over the grid (t > 0)."""
    best = 0.0
    for t in t_grid:
        if t <= 0:
            continue
        for r in r_grid:
            best = max(best, (t * t * r * r + 2 * t * (1 - t)) / (t * t * r * r + t))
    return best


# ---------------------------------------------------------------------------
# heat-kernel shape


@dataclass
class HeatBoundFit:
    """Constants with ``C1 <= p_1(e,g) sqrt(1 + r N(g)) exp(N(g)^2/4) <= C2``
    on the fitting points, ``N`` the pseudo-norm standing in for d."""

    C1_hat: float
    C2_hat: float
    region: float
    t: float
    decay_slope: float
    coverage: float
    n_eval: int


def _window_points(region: float, n_side: int) -> GroupPoint:
    xs = np.linspace(-region, region, n_side)
    zs = np.linspace(-region ** 2, region ** 2, n_side)
    X, Y, Z = np.meshgrid(xs, xs, zs, indexing="ij")
    p = GroupPoint(X.ravel(), Y.ravel(), Z.ravel())
    keep = pseudo_norm_sq(p) <= region ** 2
    return GroupPoint(p.x[keep], p.y[keep], p.z[keep])


def endpoint_kde(end: GroupPoint):
    from scipy.stats import gaussian_kde

    return gaussian_kde(np.vstack([end.x, end.y, end.z]))


def heat_shape_check(paths, region: float = 1.5, n_side: int = 13, min_samples: int = 1000, kde=None) -> HeatBoundFit:
    """Fit the Gaussian-type sandwich to a kernel density estimate of the
    endpoint law on ``{N(g)^2 <= region^2}``.

    Constants are fitted (min/max) on every other evaluation point and the
    sandwich is then checked on the held-out points; ``coverage`` is the
    held-out fraction inside the band.
    """
    sample = paths.materialize() if hasattr(paths, "materialize") else paths
    if sample.beta != 0:
        raise ValueError("the heat-kernel sandwich is stated for beta = 0")
    end = sample.end
    inside = pseudo_norm_sq(end) <= region ** 2
    if int(np.sum(inside)) < min_samples:
        raise ValueError(f"only {int(np.sum(inside))} samples in the window (need {min_samples})")
    kde = endpoint_kde(end) if kde is None else kde
    pts = _window_points(region, n_side)
    dens = kde(np.vstack(pts))
    N2 = pseudo_norm_sq(pts)
    r = np.sqrt(pts.x ** 2 + pts.y ** 2)
    ratio = dens * np.sqrt(1.0 + r * np.sqrt(N2)) * np.exp(N2 / 4)
    fit, held = ratio[0::2], ratio[1::2]
    c1, c2 = float(fit.min()), float(fit.max())
    coverage = float(np.mean((held >= c1) & (held <= c2)))
    slope = float(np.polyfit(N2, np.log(dens), 1)[0])
    return HeatBoundFit(c1, c2, region, 1.0, slope, coverage, int(ratio.size))


# ---------------------------------------------------------------------------
# reports

CSV_FIELDS = ("estimator", "params", "value", "ci", "n", "seed")


def write_estimates_csv(path, rows: Sequence[tuple[str, str, McEstimate]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for name, params, est in rows:
            w.writerow([name, params, repr(est.value), repr(est.ci_half_width), est.n_samples, est.seed])
