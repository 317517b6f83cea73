"""Command line batch runner.

    heislab [--config FILE] [--threads N] [--out FILE] SUBCOMMAND ...

Subcommands: selftest, clt, lsi, bridge, curvature, carnot, report. Each run
writes a JSON document ``{"schema": 1, "created": ..., "reports": [...]}``
and prints a table. Exit status: 0 when nothing is violated, 1 when some
check is violated, 2 on usage, configuration or parse errors.
"""
from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .carnot_core import (
    GroupPoint,
    SpecError,
    carnot_dilate,
    carnot_inverse,
    carnot_multiply,
    CarnotPoint,
    dilate,
    free_step_two_spec,
    heisenberg_spec,
    inverse,
    load_spec,
    multiply,
)
from .curvature import (
    CD_TOL,
    cd_sweep,
    curvature_functions,
    dual_route_gap,
    gamma_forms,
    random_points,
    write_cd_csv,
)
from .estimators import (
    McEstimate,
    bridge_lemma_fit,
    covariance,
    euclidean_bridge_residual,
    variance,
    z_score,
)
from . import inequalities as ineq
from .sampler import CarnotBank, PathBank, SeedPlan, area_levels, read_bank, walk_parts, write_bank
from .testfn import commutator, field_Z, random_member, resolve, standard_suite

SCHEMA = 1
DILATIONS = (0.37, 2.0)
LSI_NAMES = (
    "theorem1",
    "poincare",
    "corollary",
    "li",
    "li_symmetrized",
    "bg_sublaplacian",
    "bg_weighted",
    "finite_n",
    "best_constant",
)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()]


def _names(s):
    return [v.strip() for v in s.split(",") if v.strip()]


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _auto(conv):
    return lambda s: None if s.strip().lower() == "auto" else conv(s)


# (section, key) -> (attribute, converter)
SCHEMA_KEYS = {
    ("run", "seed"): ("seed", int),
    ("run", "output_dir"): ("output_dir", str),
    ("run", "threads"): ("threads", int),
    ("sampling", "n_paths"): ("n_paths", int),
    ("sampling", "k"): ("K", int),
    ("sampling", "substeps"): ("substeps", int),
    ("sampling", "beta"): ("beta", float),
    ("sampling", "chunk_size"): ("chunk_size", int),
    ("lsi", "functions"): ("functions", _names),
    ("lsi", "order"): ("order", int),
    ("lsi", "richardson"): ("richardson", _bool),
    ("lsi", "nu"): ("nus", _floats),
    ("lsi", "c"): ("C", _auto(float)),
    ("lsi", "c_lsi"): ("c_lsi", float),
    ("lsi", "finite_n"): ("finite_n", _ints),
    ("lsi", "finite_n_samples"): ("finite_n_samples", int),
    ("clt", "n"): ("clt_n", int),
    ("clt", "n_walks"): ("clt_walks", int),
    ("clt", "betas"): ("clt_betas", _floats),
    ("clt", "area_paths"): ("area_paths", int),
    ("clt", "area_levels"): ("area_levels", _ints),
    ("bridge", "n_paths"): ("bridge_paths", int),
    ("bridge", "k"): ("bridge_K", int),
    ("bridge", "substeps"): ("bridge_substeps", int),
    ("bridge", "t_grid"): ("t_grid", _floats),
    ("bridge", "r_grid"): ("r_grid", _floats),
    ("bridge", "z_grid"): ("z_grid", _floats),
    ("bridge", "neighbours"): ("neighbours", _auto(int)),
    ("curvature", "n_functions"): ("curv_functions", int),
    ("curvature", "n_points"): ("curv_points", int),
    ("curvature", "nu"): ("curv_nus", _floats),
    ("carnot", "spec"): ("carnot_spec", str),
    ("carnot", "n_paths"): ("carnot_paths", int),
    ("carnot", "k"): ("carnot_K", int),
    ("carnot", "substeps"): ("carnot_substeps", int),
}


@dataclass
class ExperimentConfig:
    seed: int = 20240601
    output_dir: str = "heislab-out"
    threads: int = 1
    n_paths: int = 20000
    K: int = 64
    substeps: int = 16
    beta: float = 0.0
    chunk_size: int = 4096
    functions: list = field(default_factory=lambda: ["suite"])
    order: int = 16
    richardson: bool = True
    nus: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    C: float | None = None
    c_lsi: float = 4.0
    finite_n: list = field(default_factory=lambda: [1, 2, 4, 8])
    finite_n_samples: int = 20000
    clt_n: int = 4096
    clt_walks: int = 100000
    clt_betas: list = field(default_factory=lambda: [0.0, 1.0])
    area_paths: int = 100000
    area_levels: list = field(default_factory=lambda: [16, 64, 256])
    bridge_paths: int = 100000
    bridge_K: int = 32
    bridge_substeps: int = 16
    t_grid: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    r_grid: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0])
    z_grid: list = field(default_factory=lambda: [0.0, 0.5])
    neighbours: int | None = None
    curv_functions: int = 20
    curv_points: int = 1000
    curv_nus: list = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])
    carnot_spec: str = ""
    carnot_paths: int = 20000
    carnot_K: int = 32
    carnot_substeps: int = 16

    def validate(self, where=lambda key: "") -> None:
        counts = ("threads", "n_paths", "K", "substeps", "chunk_size", "order", "finite_n_samples", "clt_n",
                  "clt_walks", "area_paths", "bridge_paths", "bridge_K", "bridge_substeps", "curv_functions",
                  "curv_points", "carnot_paths", "carnot_K", "carnot_substeps")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{where(name)}{name} must be positive")
        if self.beta < 0:
            raise ConfigError(f"{where('beta')}beta must be nonnegative")
        # midpoint nodes (k + 1/2) / order must fall on the path grid
        step = (4 if self.richardson else 2) * self.order
        if self.K % step:
            raise ConfigError(f"{where('K')}K must be a multiple of {step} for order {self.order}")
        if self.carnot_K % (2 * self.order):
            raise ConfigError(f"{where('carnot_K')}carnot K must be a multiple of {2 * self.order}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"{where('seed')}seed must be a 64-bit unsigned integer")
        if any(v <= 0 for v in self.nus + self.curv_nus) or self.c_lsi <= 0 or (self.C is not None and self.C <= 0):
            raise ConfigError(f"{where('nus')}nu values and constants must be positive")
        for name in self.functions:
            if name != "suite":
                try:
                    resolve(name)
                except KeyError as exc:
                    raise ConfigError(f"{where('functions')}{exc.args[0]}") from None

    def suite(self):
        out = []
        for name in self.functions:
            out.extend(standard_suite() if name == "suite" else [resolve(name)])
        return out

    def plan(self) -> SeedPlan:
        return SeedPlan(self.seed, self.chunk_size)


def _key_lines(text: str) -> dict:
    lines, section = {}, None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip().lower()
            lines[(section, None)] = i
        elif section and "=" in s and not s.startswith(("#", ";")):
            lines[(section, s.split("=", 1)[0].strip().lower())] = i
    return lines


def load_config(path=None, env=None) -> ExperimentConfig:
    """Defaults, overlaid by ``path`` (INI), overlaid by the environment."""
    env = os.environ if env is None else env
    cfg = ExperimentConfig()
    sources = [("<default>", resources.files("heislab").joinpath("default.ini").read_text())]
    if path is not None:
        try:
            sources.append((str(path), Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
    attr_origin = {}
    for source, text in sources:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(str(exc).replace("\n", " ")) from None
        lines = _key_lines(text)
        for section in parser.sections():
            for key, raw in parser.items(section):
                lineno = lines.get((section, key), lines.get((section, None), 0))
                loc = f"{source}:{lineno}: "
                if (section, key) not in SCHEMA_KEYS:
                    raise ConfigError(f"{loc}unknown key {key!r} in section [{section}]")
                attr, conv = SCHEMA_KEYS[(section, key)]
                try:
                    setattr(cfg, attr, conv(raw))
                except ValueError as exc:
                    raise ConfigError(f"{loc}bad value for {key}: {exc}") from None
                attr_origin[attr] = loc
    if "HEISLAB_SEED" in env:
        try:
            cfg.seed = int(env["HEISLAB_SEED"])
        except ValueError:
            raise ConfigError(f"HEISLAB_SEED: not an integer: {env['HEISLAB_SEED']!r}") from None
        attr_origin["seed"] = "HEISLAB_SEED: "
    if "HEISLAB_OUTPUT_DIR" in env:
        cfg.output_dir = env["HEISLAB_OUTPUT_DIR"]
    cfg.validate(lambda a: attr_origin.get(a, ""))
    return cfg


# ---------------------------------------------------------------------------
# records


def _est(e: McEstimate) -> dict:
    return e.as_dict()


def moment_record(name, function, est: McEstimate, oracle: float, sigmas: float = 3.0, **params) -> dict:
    z = z_score(est, oracle)
    return {
        "name": name,
        "function": function,
        "estimate": _est(est),
        "oracle": oracle,
        "z": z if math.isfinite(z) else None,
        "verdict": "holds" if z <= sigmas else "violated",
        "params": params,
    }


def value_record(name, function, value, ok: bool, **params) -> dict:
    return {"name": name, "function": function, "value": value, "verdict": "holds" if ok else "violated", "params": params}


def _ordered(records):
    return sorted(records, key=lambda r: r["name"])


def exit_code(records) -> int:
    return 1 if any(r.get("verdict") == "violated" for r in records) else 0


def document(subcommand, records, cfg: ExperimentConfig | None) -> dict:
    return {
        "schema": SCHEMA,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
        "subcommand": subcommand,
        "config": asdict(cfg) if cfg is not None else None,
        "reports": _ordered(records),
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def format_table(records) -> str:
    rows = [("name", "function", "value", "bound", "deficit/z", "verdict")]
    for r in records:
        if "lhs" in r:
            rows.append((r["name"], r["function"], f"{r['lhs']['value']:.5g}±{r['lhs']['ci_half_width']:.2g}",
                         f"{r['rhs']['value']:.5g}±{r['rhs']['ci_half_width']:.2g}", f"{r['deficit']:.3g}", r["verdict"]))
        elif "estimate" in r:
            z = "inf" if r["z"] is None else f"{r['z']:.2f}"
            rows.append((r["name"], r["function"], f"{r['estimate']['value']:.5g}±{r['estimate']['ci_half_width']:.2g}",
                         f"{r['oracle']:.5g}", z, r["verdict"]))
        else:
            v = r["value"]
            txt = f"{v:.5g}" if isinstance(v, float) else str(v)
            rows.append((r["name"], r["function"], txt, "", "", r["verdict"]))
    widths = [max(len(row[i]) for row in rows) for i in range(6)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def run_selftest(cfg: ExperimentConfig, args) -> list:
    rng = np.random.default_rng(cfg.seed)
    n, tol = 10_000, 1e-12
    out = []
    g, h, k = (GroupPoint(*rng.standard_normal((3, n))) for _ in range(3))
    err = lambda a, b: float(max(np.max(np.abs(np.asarray(u) - np.asarray(v))) for u, v in zip(a, b)))
    e = GroupPoint(0.0, 0.0, 0.0)
    v = err(multiply(multiply(g, h), k), multiply(g, multiply(h, k)))
    out.append(value_record("selftest", "heisenberg:assoc", v, v <= tol))
    v = err(multiply(g, inverse(g)), e)
    out.append(value_record("selftest", "heisenberg:inverse", v, v <= tol))
    v = max(err(multiply(dilate(lam, g), dilate(lam, h)), dilate(lam, multiply(g, h))) for lam in DILATIONS)
    out.append(value_record("selftest", "heisenberg:dilation", v, v <= tol))
    for label, spec in (("heisenberg_spec", heisenberg_spec()), ("free_d3", free_step_two_spec(3))):
        pts = [CarnotPoint(rng.standard_normal((n, spec.d)), rng.standard_normal((n, spec.m))) for _ in range(3)]
        a, b, c = pts
        mul = lambda p, q: carnot_multiply(spec, p, q)
        v = err(mul(mul(a, b), c), mul(a, mul(b, c)))
        out.append(value_record("selftest", f"{label}:assoc", v, v <= tol))
        ident = CarnotPoint(np.zeros(spec.d), np.zeros(spec.m))
        v = err(mul(a, carnot_inverse(spec, a)), ident)
        out.append(value_record("selftest", f"{label}:inverse", v, v <= tol))
        v = max(err(mul(carnot_dilate(spec, lam, a), carnot_dilate(spec, lam, b)), carnot_dilate(spec, lam, mul(a, b)))
                for lam in DILATIONS)
        out.append(value_record("selftest", f"{label}:dilation", v, v <= tol))
    p = GroupPoint(*rng.standard_normal((3, 1000)))
    funcs = [nf.f for nf in standard_suite()] + [random_member(rng) for _ in range(5)]
    worst = {"[X,Y]-Z": 0.0, "[X,Z]": 0.0, "[Y,Z]": 0.0, "[Xhat,Yhat]+Z": 0.0}
    for f in funcs:
        Zf = field_Z(f)(p)
        worst["[X,Y]-Z"] = max(worst["[X,Y]-Z"], float(np.max(np.abs(commutator(f, "X", "Y")(p) - Zf))))
        worst["[X,Z]"] = max(worst["[X,Z]"], float(np.max(np.abs(commutator(f, "X", "Z")(p)))))
        worst["[Y,Z]"] = max(worst["[Y,Z]"], float(np.max(np.abs(commutator(f, "Y", "Z")(p)))))
        worst["[Xhat,Yhat]+Z"] = max(worst["[Xhat,Yhat]+Z"], float(np.max(np.abs(commutator(f, "Xhat", "Yhat")(p) + Zf))))
    out.extend(value_record("selftest", f"testfn:{k}", v, v <= 1e-10) for k, v in worst.items())
    return out


def run_clt(cfg: ExperimentConfig, args) -> list:
    out = []
    n = cfg.clt_n
    parts = walk_parts(n, cfg.clt_walks, cfg.plan(), cfg.threads)
    for beta in cfg.clt_betas:
        s = parts.point(beta)
        params = {"n": n, "beta": beta}
        out.append(moment_record("clt", "var_x", variance(s.x, cfg.seed), 1.0, **params))
        out.append(moment_record("clt", "var_y", variance(s.y, cfg.seed), 1.0, **params))
        out.append(moment_record("clt", "var_z", variance(s.z, cfg.seed), beta * beta + 0.25 * (1 - 1 / n), **params))
        out.append(moment_record("clt", "cov_xz", covariance(s.x, s.z, cfg.seed), 0.0, **params))
    areas = area_levels(cfg.area_paths, cfg.area_levels, cfg.plan(), cfg.threads)
    errors = []
    for level, a in areas.items():
        est = variance(a, cfg.seed)
        errors.append(abs(est.value - 0.25))
        out.append(moment_record("levy_area", f"var_area:substeps={level}", est, 0.25 * (1 - 1 / level), substeps=level))
    monotone = all(x > y for x, y in zip(errors, errors[1:]))
    out.append(value_record("levy_area", "error_decay", errors, monotone, levels=list(areas)))
    return out


def _bank(cfg: ExperimentConfig, args, beta=None):
    if getattr(args, "bank_in", None):
        bank, _ = read_bank(args.bank_in)
        return bank
    b = cfg.beta if beta is None else beta
    bank = PathBank(cfg.n_paths, cfg.K, cfg.substeps, b, cfg.plan(), threads=cfg.threads)
    if getattr(args, "bank_out", None):
        write_bank(args.bank_out, bank)
    return bank


def _bridge_bank(cfg):
    return PathBank(cfg.bridge_paths, cfg.bridge_K, cfg.bridge_substeps, 0.0, cfg.plan(), threads=cfg.threads)


def _targets(cfg):
    return [GroupPoint(r, 0.0, z) for r in cfg.r_grid for z in cfg.z_grid]


def composed_constant(cfg) -> float:
    fit = bridge_lemma_fit(_bridge_bank(cfg), cfg.t_grid, _targets(cfg), cfg.neighbours, "full", cfg.seed)
    return fit.corollary_constant


def run_lsi(cfg: ExperimentConfig, args) -> list:
    name = args.name
    if args.beta is not None:
        cfg.beta = args.beta
        cfg.validate()
    suite = cfg.suite()
    if name == "finite_n":
        out = []
        for n in cfg.finite_n:
            for nf in suite:
                out.append(ineq.check_finite_n(nf, n, cfg.beta, cfg.finite_n_samples, cfg.plan(), cfg.threads).as_dict())
        return out
    bank = _bank(cfg, args)
    beta = bank.beta
    if name == "theorem1":
        return [r.as_dict() for r in ineq.check_theorem1_suite(suite, beta, bank, cfg.order, cfg.richardson)]
    if name == "poincare":
        return [ineq.check_poincare(nf, bank, cfg.order).as_dict() for nf in suite]
    if name == "best_constant":
        horiz = [nf for nf in suite if nf.horizontal]
        bc = ineq.estimate_best_constant("theorem1", horiz, bank, order=cfg.order)
        est = McEstimate(bc.value, bc.ci, bank.n_paths, bank.seed)
        rec = {"name": "best_constant", "function": bc.argmax, "estimate": _est(est), "oracle": 2.0,
               "z": None, "verdict": "holds" if bc.value <= 2.0 + 3 * bc.ci else "violated", "params": {"ratios": bc.ratios}}
        return [rec]
    if beta != 0.0:
        raise ConfigError(f"{name} is stated for beta = 0")
    if name == "corollary":
        C = cfg.C if cfg.C is not None else composed_constant(cfg)
        return [ineq.check_corollary(nf, C, bank).as_dict() for nf in suite]
    if name == "li":
        return [ineq.check_li(nf, bank, cfg.c_lsi).as_dict() for nf in suite]
    if name == "li_symmetrized":
        return [ineq.check_li_symmetrized(nf, bank, cfg.c_lsi).as_dict() for nf in suite]
    variant = name.split("_", 1)[1]
    return [ineq.check_bg(nf, nu, bank, variant).as_dict() for nu in cfg.nus for nf in suite]


def run_bridge(cfg: ExperimentConfig, args) -> list:
    bank = _bridge_bank(cfg)
    sample = bank.materialize()
    out = []
    for t in cfg.t_grid:
        for r in cfg.r_grid:
            plain, resid = euclidean_bridge_residual(t, r, sample, cfg.neighbours, cfg.seed)
            out.append(moment_record("bridge_euclidean", f"t={t:g},r={r:g}", resid, 0.0,
                                     plain=plain.value, closed_form=t * t * r * r + 2 * t * (1 - t)))
    full = bridge_lemma_fit(sample, cfg.t_grid, _targets(cfg), cfg.neighbours, "full", cfg.seed)
    half = bridge_lemma_fit(sample[: sample.n_paths // 2], cfg.t_grid, _targets(cfg), cfg.neighbours, "full", cfg.seed)
    stable = abs(full.C - half.C) <= 0.2 * full.C
    out.append(value_record("bridge_fit", "C", full.C, bool(np.isfinite(full.C)) and stable, C_half=half.C, k=full.k))
    out.append(value_record("bridge_fit", "C_integrated", full.C_integrated, bool(np.isfinite(full.C_integrated)),
                            corollary_constant=full.corollary_constant))
    return out


def run_curvature(cfg: ExperimentConfig, args) -> list:
    funcs = curvature_functions(cfg.curv_functions, cfg.seed)
    pts = random_points(cfg.curv_points, cfg.seed)
    rows = cd_sweep(funcs, pts, cfg.curv_nus)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_cd_csv(out_dir / "curvature.csv", rows)
    out = []
    for nf in funcs:
        m = min(float(r.margin.min()) for r in rows if r.name == nf.name)
        out.append(value_record("cd", nf.name, m, m >= -CD_TOL))
        gap = float(dual_route_gap(nf.f, pts).max())
        out.append(value_record("gamma2_dual_route", nf.name, gap, gap <= 1e-10))
    fz = gamma_forms(resolve("z").f, pts, 1.0)
    out.append(value_record("gamma2_z", "z", float(np.max(np.abs(fz.gamma2_hori - 0.5))), bool(np.all(fz.gamma2_hori == 0.5))))
    return out


def run_carnot(cfg: ExperimentConfig, args) -> list:
    path = args.spec or cfg.carnot_spec
    spec = load_spec(path) if path else free_step_two_spec(3)
    bank = CarnotBank(spec, cfg.carnot_paths, cfg.carnot_K, cfg.carnot_substeps, cfg.plan(), cfg.threads)
    suite = standard_suite(spec.d, spec.m)
    return [r.as_dict() for r in ineq.check_carnot_suite(spec, suite, bank, cfg.order)]


def run_report(args) -> list:
    records = []
    for path in args.files:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if doc.get("schema") != SCHEMA:
            raise ConfigError(f"{path}: unsupported schema {doc.get('schema')!r}")
        records.extend(doc["reports"])
    return records


RUNNERS = {
    "selftest": run_selftest,
    "clt": run_clt,
    "lsi": run_lsi,
    "bridge": run_bridge,
    "curvature": run_curvature,
    "carnot": run_carnot,
}


def _common(defaults: bool) -> argparse.ArgumentParser:
    kw = {} if defaults else {"default": argparse.SUPPRESS}
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="INI configuration file", **kw)
    p.add_argument("--threads", type=int, help="worker threads (never changes results)", **kw)
    p.add_argument("--out", help="JSON output path (default OUTPUT_DIR/SUBCOMMAND.json)", **kw)
    return p


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heislab", description="Heisenberg-group log-Sobolev laboratory",
                                 parents=[_common(True)])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    common = [_common(False)]
    sub.add_parser("selftest", parents=common, help="group axioms and vector-field identities")
    sub.add_parser("clt", parents=common, help="moment panel of the random walk and Levy area")
    p = sub.add_parser("lsi", parents=common, help="run one inequality checker over the configured functions")
    p.add_argument("--name", required=True, choices=LSI_NAMES)
    p.add_argument("--beta", type=float)
    p.add_argument("--bank-in", help="read the path bank from this file")
    p.add_argument("--bank-out", help="write the path bank to this file")
    sub.add_parser("bridge", parents=common, help="bridge moment fit")
    sub.add_parser("curvature", parents=common, help="curvature inequality sweep")
    p = sub.add_parser("carnot", parents=common, help="step-two Carnot inequality from a spec file")
    p.add_argument("--spec", help="CarnotSpec file")
    p = sub.add_parser("report", parents=common, help="merge JSON reports into one table")
    p.add_argument("files", nargs="+")
    return ap


def run(subcommand: str, cfg: ExperimentConfig, args) -> tuple[int, dict]:
    records = run_report(args) if subcommand == "report" else RUNNERS[subcommand](cfg, args)
    doc = document(subcommand, records, None if subcommand == "report" else cfg)
    return exit_code(records), doc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be positive")
            cfg.threads = args.threads
        code, doc = run(args.command, cfg, args)
    except (ConfigError, SpecError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"heislab: error: {msg}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"{args.command}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps(doc))
    sys.stdout.write(format_table(doc["reports"]))
    return code


if __name__ == "__main__":
    raise SystemExit(main())
