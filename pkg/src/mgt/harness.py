"""Experiment configuration, the acceptance suite and plot-data emission.

``run_suite`` evaluates checks AC01 to AC11 in id order.  Every check is
isolated: an exception inside one check marks it failed and the suite moves
on.  The report holds no timings, paths or thread counts, so identical
configurations produce byte-identical JSON and CSV.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.sparse.csgraph import shortest_path

from . import __version__
from .chart import (Chart, DetectedSet, affine_chart, build_chart, check_404, check_image_positive,
                    check_preimage_vertical, detected_from_nodes, verify_normal_form, _box_nodes)
from .content import content_greedy, content_oracle_exact, content_pixel_euclidean
from .density import DensityProfile, LadderSpec
from .errors import ConfigError
from .gallery import (MapSpec, coarea_lhs, coarea_rhs, fold_K_bound, fold_slice_capacity, gallery_spec, make_map)
from .io import dumps, load_manifest, write_csv, write_json
from .jacobian import check_density_equals_jacobian
from .metric import MetricSpace, SampledMap, kuratowski_embed, lipschitz_estimate, pairwise
from .partition import PartitionResult, check_prop51, cube_terms, dyadic_dp, enumerate_cut_sets

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# configuration


@dataclass
class DensityConfig:
    grid: int = 129
    stride: int = 8
    tol: float = 0.05
    fraction: float = 0.95
    runtime_budget: float = 60.0
    ladder_count: int = 8
    ladder_factor: float = 0.5


@dataclass
class PartitionConfig:
    grid: int = 65
    depth: int = 5
    stride: int = 8
    factor: float = 1.1
    dp_maps: int = 20
    dp_grid: int = 9


@dataclass
class ChartConfig:
    grid: int = 129
    tau_k: Optional[float] = None  # None means 10 h
    tol_img: float = 1e-6
    fold_N: int = 2


@dataclass
class CapacityConfig:
    grid: int = 256
    N: int = 3
    lam: float = 1.000001
    y: float = 0.25


@dataclass
class PropertyConfig:
    greedy_sets: int = 100
    scaling_seeds: int = 20
    kuratowski_seeds: int = 50


@dataclass
class ExperimentConfig:
    seed: int = 42
    out: str = "results"
    threads: int = 1
    extra_maps: list = field(default_factory=list)
    density: DensityConfig = field(default_factory=DensityConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    chart: ChartConfig = field(default_factory=ChartConfig)
    capacity: CapacityConfig = field(default_factory=CapacityConfig)
    properties: PropertyConfig = field(default_factory=PropertyConfig)

    def fingerprint(self) -> dict:
        """Everything that determines the results (not where they go or how many threads)."""
        d = dataclasses.asdict(self)
        d.pop("out")
        d.pop("threads")
        d["extra_maps"] = [Path(p).name for p in self.extra_maps]
        d["version"] = __version__
        return d


SECTIONS = {"density": DensityConfig, "partition": PartitionConfig, "chart": ChartConfig,
            "capacity": CapacityConfig, "properties": PropertyConfig}
# positive tolerances; tau_k may be zero (it then empties K-hat on purpose)
POSITIVE = {"density.tol", "density.fraction", "density.runtime_budget", "density.ladder_factor",
            "partition.factor", "chart.tol_img", "capacity.lam"}


def _line_of(text: str, key: str) -> Optional[int]:
    pat = re.compile(r'^\s*"?' + re.escape(key) + r'"?\s*[=:]')
    for i, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return i
    return None


def _coerce(value, default, typ, name, text):
    want = typ if default is None else type(default)
    if value is None and default is None:
        return None
    if want is bool or isinstance(value, bool):
        raise ConfigError(f"expected a number, got {value!r}", name, _line_of(text, name.split(".")[-1]))
    if want is int:
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", name, _line_of(text, name.split(".")[-1]))
        return value
    if isinstance(value, (int, float)):
        return float(value)
    raise ConfigError(f"expected a number, got {value!r}", name, _line_of(text, name.split(".")[-1]))


def config_from_mapping(data: dict, text: str = "", base_dir: Optional[Path] = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for key, value in data.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError("expected a table", key, _line_of(text, key))
            section = getattr(cfg, key)
            fields = {f.name: f for f in dataclasses.fields(section)}
            for sub, v in value.items():
                name = f"{key}.{sub}"
                if sub not in fields:
                    raise ConfigError("unknown field", name, _line_of(text, sub))
                default = getattr(section, sub)
                typ = float if sub == "tau_k" else type(default)
                v = _coerce(v, default, typ, name, text)
                if name in POSITIVE and not v > 0:
                    raise ConfigError(f"must be positive, got {v}", name, _line_of(text, sub))
                if name == "chart.tau_k" and v is not None and v < 0:
                    raise ConfigError(f"must be >= 0, got {v}", name, _line_of(text, sub))
                setattr(section, sub, v)
        elif key == "seed":
            cfg.seed = _coerce(value, 0, int, key, text)
        elif key == "threads":
            cfg.threads = _coerce(value, 1, int, key, text)
        elif key == "out":
            cfg.out = str(value)
        elif key == "maps":
            extra = value.get("extra", []) if isinstance(value, dict) else value
            paths = []
            for p in extra:
                path = Path(p) if base_dir is None else base_dir / p
                if not path.exists():
                    raise ConfigError(f"manifest {p} does not exist", "maps.extra", _line_of(text, "extra"))
                paths.append(str(path))
            cfg.extra_maps = paths
        else:
            raise ConfigError("unknown field", key, _line_of(text, key))
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1", "threads", _line_of(text, "threads"))
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read a TOML config (or its JSON mirror, by ``.json`` suffix)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, line=exc.lineno) from exc
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigError(str(exc), line=int(m.group(1)) if m else None) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be a table")
    return config_from_mapping(data, text, path.parent)


# ---------------------------------------------------------------------------
# report types


@dataclass
class Part:
    """One measured quantity compared against its bound."""

    name: str
    measured: float
    bound: float
    sense: str = "<="

    @property
    def slack(self) -> float:
        return self.bound - self.measured if self.sense == "<=" else self.measured - self.bound

    @property
    def ok(self) -> bool:
        return bool(self.slack >= 0)

    def to_dict(self) -> dict:
        return {"name": self.name, "measured": self.measured, "bound": self.bound, "sense": self.sense,
                "slack": self.slack, "ok": self.ok}


class Skip(Exception):
    """Raised by a check whose inputs are unavailable under the configuration."""


@dataclass
class CheckResult:
    id: str
    title: str
    status: str
    measured: Optional[float] = None
    bound: Optional[float] = None
    slack: Optional[float] = None
    reason: str = ""
    parts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.id, "title": self.title, "status": self.status, "measured": self.measured,
                "bound": self.bound, "slack": self.slack, "reason": self.reason,
                "parts": [p.to_dict() for p in self.parts]}


@dataclass
class VerifyReport:
    checks: list
    fingerprint: dict

    @property
    def failed(self) -> bool:
        return any(c.status == "fail" for c in self.checks)

    def summary(self) -> dict:
        out = {"pass": 0, "fail": 0, "skip": 0}
        for c in self.checks:
            out[c.status] += 1
        return out

    def to_dict(self) -> dict:
        return {"fingerprint": self.fingerprint, "summary": self.summary(),
                "checks": [c.to_dict() for c in self.checks]}

    def save(self, out_dir) -> tuple:
        out_dir = Path(out_dir)
        js = write_json(self.to_dict(), out_dir / "verify_report.json")
        rows = [c.to_dict() for c in self.checks]
        cs = write_csv(rows, ["id", "status", "measured", "bound", "slack", "title", "reason"],
                       out_dir / "verify_report.csv")
        return js, cs


# ---------------------------------------------------------------------------
# the checks


class SuiteContext:
    """Shared, lazily computed inputs (charts and their detected sets)."""

    def __init__(self, cfg: ExperimentConfig, threads: int):
        self.cfg = cfg
        self.threads = threads
        self._charts = None

    def ladder(self) -> LadderSpec:
        d = self.cfg.density
        return LadderSpec(count=d.ladder_count, factor=d.ladder_factor)

    def charts(self) -> dict:
        """name -> (map, chart, residual report, K-hat) for the three certified charts."""
        if self._charts is None:
            c = self.cfg.chart
            N = c.fold_N
            entries = {
                "projection": (gallery_spec("projection", c.grid), (0.5, 0.5), 1e-10),
                "square": (gallery_spec("square", c.grid), (1.0, 0.5), 1e-8),
                "fold": (gallery_spec("fold", c.grid, N), (1.5 * 2.0 ** -N,) * 2, 1e-10),
            }
            out = {}
            for name, (spec, x0, tol) in entries.items():
                fmap = make_map(spec)
                chart = build_chart(fmap, x0)
                report, K = verify_normal_form(chart, fmap, tau=c.tau_k)
                out[name] = (fmap, chart, report, K, tol)
            self._charts = out
        return self._charts

    def charts_or_skip(self) -> dict:
        charts = self.charts()
        empty = [name for name, entry in charts.items() if len(entry[3]) == 0]
        if empty:
            tau = self.cfg.chart.tau_k
            raise Skip(f"K-hat is empty for {', '.join(empty)} (tau_K = {tau})")
        return charts


def ac01_density_jacobian(ctx: SuiteContext) -> list:
    d = ctx.cfg.density
    parts = []
    t0 = time.perf_counter()
    for name in ("projection", "diagonal", "fold"):
        fmap = make_map(gallery_spec(name, d.grid, 3 if name == "fold" else None))
        r = check_density_equals_jacobian(fmap, d.stride, ctx.ladder(), tol=d.tol, threads=ctx.threads)
        parts.append(Part(f"{name}: fraction of {r['count']} points with gap <= {d.tol}",
                          r["fraction_within_tol"], d.fraction, ">="))
    elapsed = time.perf_counter() - t0
    log.info("AC01 density/Jacobian sweep took %.1f s", elapsed)
    parts.append(Part(f"runtime within {d.runtime_budget:g} s", float(elapsed <= d.runtime_budget), 1.0, ">="))
    return parts


def ac02_pixel_consistency(ctx: SuiteContext) -> list:
    parts = []
    for k, grid, lo, hi in ((2, 257, 0.97, 1.03), (1, 513, 0.99, 1.01)):
        spec = MapSpec("linear", {"matrix": np.eye(k).tolist()}, [[0.0, 1.0]] * k, grid)
        fmap = make_map(spec)
        h = fmap.h_max
        est = content_pixel_euclidean(fmap.values(), math.sqrt(k) * fmap.grid_lipschitz * h, k)
        parts.append(Part(f"[0,1]^{k} at n={k}, grid {grid}: >= {lo}", est.upper, lo, ">="))
        parts.append(Part(f"[0,1]^{k} at n={k}, grid {grid}: <= {hi}", est.upper, hi, "<="))
    return parts


def _prop51_maps(ctx: SuiteContext) -> list:
    g = ctx.cfg.partition.grid
    maps = [(name, make_map(gallery_spec(name, g, 3 if name == "fold" else None)))
            for name in ("projection", "diagonal", "square", "fold", "constant", "kuratowski")]
    for path in ctx.cfg.extra_maps:
        maps.append((Path(path).stem, load_manifest(path)))
    return maps


def ac03_prop51(ctx: SuiteContext) -> list:
    p = ctx.cfg.partition
    parts = []
    for name, fmap in _prop51_maps(ctx):
        r = check_prop51(fmap, 1, 1, p.depth, ctx.ladder(), p.stride, p.factor, ctx.threads)
        parts.append(Part(f"{name}: dyadic content <= {p.factor} x density bound", r["lhs"], p.factor * r["rhs"]))
        if name == "projection":
            parts.append(Part("projection: lhs >= 0.95", r["lhs"], 0.95, ">="))
            parts.append(Part("projection: lhs <= 1.05", r["lhs"], 1.05))
        if name == "fold":
            parts.append(Part("fold(3): lhs <= 0.15", r["lhs"], 0.15))
    return parts


def ac04_dp_optimality(ctx: SuiteContext) -> list:
    p = ctx.cfg.partition
    rng = np.random.default_rng(ctx.cfg.seed)
    g = p.dp_grid
    worst = 0.0
    for _ in range(p.dp_maps):
        vals = rng.uniform(-1.0, 1.0, size=(g, g))
        fmap = SampledMap([0.0, 0.0], [1.0, 1.0], (g, g), MetricSpace.euclidean(1), 1, samples=vals)
        for depth in (1, 2):
            terms = cube_terms(fmap, 1, 1, depth)
            value, _ = dyadic_dp(terms, 2, depth)
            brute = min(sum(terms[key].term for key in cut) for cut in enumerate_cut_sets(2, depth))
            worst = max(worst, abs(value - brute))
    return [Part(f"max |DP - enumeration| over {p.dp_maps} maps, depths 1-2", worst, 1e-9)]


def ac05_normal_form(ctx: SuiteContext) -> list:
    parts = []
    for name, (fmap, chart, report, K, tol) in ctx.charts_or_skip().items():
        parts.append(Part(f"{name}: max residual on K-hat", report["max_residual_on_K"], tol))
        parts.append(Part(f"{name}: measure fraction", report["measure_fraction"], 0.9, ">="))
    return parts


def _constant_negative() -> int:
    fmap = make_map(gallery_spec("constant", 17))
    nodes = np.array([[0.25, 0.5], [0.75, 0.5]])
    chart = Chart(center=np.array([0.5, 0.5]), n=1, rows=(0,), cols=(0,), box_lo=np.zeros(2),
                  box_hi=np.ones(2), minor_det=0.0)
    K = DetectedSet(nodes, nodes.copy(), fmap.evaluate(nodes), np.zeros(2), 1.0, 2)
    return check_404(chart, fmap, K)["violations"]


def _cross_fold(ctx: SuiteContext) -> int:
    fmap, chart, _, _, _ = ctx.charts()["fold"]
    s = 2.0 ** -ctx.cfg.chart.fold_N
    nodes = _box_nodes(fmap, np.array([s, s]), np.array([3 * s, 2 * s]))
    K = detected_from_nodes(affine_chart(chart), fmap, nodes)
    return check_preimage_vertical(chart, fmap, K, ctx.cfg.chart.tol_img)["violations"]


def ac06_slices(ctx: SuiteContext) -> list:
    parts = []
    tol_img = ctx.cfg.chart.tol_img
    for name, (fmap, chart, _, K, _) in ctx.charts_or_skip().items():
        parts.append(Part(f"{name}: slice inequality violations", check_404(chart, fmap, K)["violations"], 0))
        parts.append(Part(f"{name}: verticality violations",
                          check_preimage_vertical(chart, fmap, K, tol_img)["violations"], 0))
    parts.append(Part("constant map, two points on one slice: violations", _constant_negative(), 1, ">="))
    parts.append(Part("single chart across a fold: verticality violations", _cross_fold(ctx), 1, ">="))
    return parts


def ac07_image_content(ctx: SuiteContext) -> list:
    charts = ctx.charts_or_skip()
    N = ctx.cfg.chart.fold_N
    parts = []
    for name, expected in (("projection", 1.0), ("fold", 2.0 ** -N)):
        fmap, _, _, K, _ = charts[name]
        parts.append(Part(f"{name}: content of f(K-hat) vs 0.2 x {expected:g}",
                          check_image_positive(fmap, K), 0.2 * expected, ">="))
    return parts


def ac08_fold_capacity(ctx: SuiteContext) -> list:
    c = ctx.cfg.capacity
    fmap = make_map(gallery_spec("fold", c.grid, c.N))
    h = 1.0 / (c.grid - 1)
    cap = fold_slice_capacity(fmap, c.lam, c.y)
    target = 2.0 ** -c.N
    reference = [(1.0 + 1e-15, 1, math.sqrt(2.0)), (1.0 + 1e-15, 4, 0.17677669529663687),
                 (2.0, 10, 0.04419417382415922)]
    err = max(abs(fold_K_bound(lam, N) - want) for lam, N, want in reference)
    return [
        Part(f"slice capacity <= 2^-{c.N} (1 + 5h)", cap, target * (1 + 5 * h)),
        Part(f"slice capacity >= 0.9 x 2^-{c.N}", cap, 0.9 * target, ">="),
        Part(f"slice capacity <= 1.1 x 2^-{c.N}", cap, 1.1 * target),
        Part("fold_K_bound max deviation from tabulated values", err, 1e-12),
    ]


def ac09_coarea(ctx: SuiteContext) -> list:
    parts = []
    for name in ("projection", "diagonal"):
        spec = gallery_spec(name, 33)
        L = lipschitz_estimate(make_map(spec), "moore")
        parts.append(Part(f"{name}: fibre integral <= coarea bound (L = {L:.6g})",
                          coarea_lhs(spec), coarea_rhs(2, 1, L, 1.0)))
    return parts


def _random_metric(rng, p: int) -> np.ndarray:
    if rng.random() < 0.5:
        X = rng.normal(size=(p, int(rng.integers(1, 4))))
        return pairwise(MetricSpace.euclidean(X.shape[1]), X)
    W = rng.uniform(0.1, 1.0, size=(p, p))
    W = np.triu(W, 1)
    return shortest_path(W + W.T, method="FW", directed=False)


def ac10_content_properties(ctx: SuiteContext) -> list:
    pc = ctx.cfg.properties
    rng = np.random.default_rng(ctx.cfg.seed)
    worst_gap = math.inf
    for _ in range(pc.greedy_sets):
        p, d, n = int(rng.integers(2, 11)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        X = rng.uniform(0.0, 1.0, size=(p, d))
        rho = 0.0 if rng.random() < 0.3 else float(rng.uniform(0.0, 0.2))
        o = content_oracle_exact(X, rho, n).upper
        g = content_greedy(X, rho, n).upper
        worst_gap = min(worst_gap, (g - o) / max(o, 1e-300))
    worst_scale = 0.0
    for _ in range(pc.scaling_seeds):
        p, d, n = int(rng.integers(2, 11)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        X = rng.uniform(0.0, 1.0, size=(p, d))
        rho, t = float(rng.uniform(0.0, 0.2)), float(rng.uniform(0.1, 10.0))
        base = content_oracle_exact(X, rho, n).upper
        scaled = content_oracle_exact(t * X, t * rho, n).upper
        worst_scale = max(worst_scale, abs(scaled - t ** n * base) / max(t ** n * base, 1e-300))
    worst_iso = 0.0
    for _ in range(pc.kuratowski_seeds):
        p = int(rng.integers(2, 9))
        D = _random_metric(rng, p)
        space = MetricSpace.explicit(D)
        E = kuratowski_embed(space, int(rng.integers(0, p)), landmarks=list(range(p)))
        worst_iso = max(worst_iso, float(np.max(np.abs(pairwise(MetricSpace.sup_norm(p), E) - D))))
    return [
        Part(f"min relative (greedy - oracle) over {pc.greedy_sets} sets", worst_gap, -1e-12, ">="),
        Part(f"max relative scaling error over {pc.scaling_seeds} seeds", worst_scale, 1e-12),
        Part(f"max Kuratowski distortion over {pc.kuratowski_seeds} spaces", worst_iso, 1e-12),
    ]


def ac11_thread_determinism(ctx: SuiteContext) -> list:
    other = SuiteContext(ctx.cfg, 2 if ctx.threads == 1 else 1)
    mismatches = 0
    for fn in (ac01_density_jacobian, ac03_prop51):
        a = [p.to_dict() for p in fn(ctx) if not p.name.startswith("runtime")]
        b = [p.to_dict() for p in fn(other) if not p.name.startswith("runtime")]
        mismatches += int(dumps(a) != dumps(b))
    # the part name avoids thread counts so the report itself stays thread independent
    return [Part("serialised AC01/AC03 results differing under another thread count", mismatches, 0)]


CHECKS: list = [
    ("AC01", "density matches the Jacobian away from creases", ac01_density_jacobian),
    ("AC02", "pixel content of sampled unit cubes", ac02_pixel_consistency),
    ("AC03", "dyadic (n,m)-content below the density integral bound", ac03_prop51),
    ("AC04", "dyadic DP equals exhaustive enumeration", ac04_dp_optimality),
    ("AC05", "normal-form charts certify with small residual", ac05_normal_form),
    ("AC06", "slice inequality and verticality on detected sets", ac06_slices),
    ("AC07", "image of the detected set has positive content", ac07_image_content),
    ("AC08", "fold slice capacity and K bound", ac08_fold_capacity),
    ("AC09", "coarea inequality for gallery maps", ac09_coarea),
    ("AC10", "content oracle properties", ac10_content_properties),
    ("AC11", "results independent of thread count", ac11_thread_determinism),
]


def run_check(check_id: str, title: str, fn: Callable, ctx: SuiteContext) -> CheckResult:
    try:
        parts = fn(ctx)
    except Skip as exc:
        return CheckResult(check_id, title, "skip", reason=str(exc))
    except Exception as exc:  # a failing module never aborts the suite
        log.exception("%s raised", check_id)
        return CheckResult(check_id, title, "fail", reason=f"{type(exc).__name__}: {exc}")
    worst = min(parts, key=lambda p: p.slack)
    status = "pass" if all(p.ok for p in parts) else "fail"
    reason = "" if status == "pass" else "; ".join(p.name for p in parts if not p.ok)
    return CheckResult(check_id, title, status, worst.measured, worst.bound, worst.slack, reason, parts)


def run_suite(cfg: ExperimentConfig, threads: Optional[int] = None, only: Optional[list] = None) -> VerifyReport:
    ctx = SuiteContext(cfg, threads or cfg.threads)
    results = []
    for check_id, title, fn in CHECKS:
        if only and check_id not in only:
            continue
        t0 = time.perf_counter()
        res = run_check(check_id, title, fn, ctx)
        log.info("%s %s (%.1f s)", check_id, res.status, time.perf_counter() - t0)
        results.append(res)
    return VerifyReport(results, cfg.fingerprint())


# ---------------------------------------------------------------------------
# plot data


def emit_plot_data(obj, path) -> Path:
    """Tidy CSV for a density field (list of profiles), one ladder, or a partition."""
    if isinstance(obj, PartitionResult):
        return write_csv([c.to_dict() for c in obj.per_cube], ["address", "side", "content", "term"], path)
    if isinstance(obj, DensityProfile):
        return write_csv([{"r": r, "ratio": q} for r, q in obj.ladder], ["r", "ratio"], path)
    profiles = list(obj)
    if not profiles:
        return write_csv([], ["r", "ratio"], path)
    k = len(profiles[0].x)
    names = ["x", "y", "z"][:k] if k <= 3 else [f"x{i}" for i in range(k)]
    rows = []
    for prof in profiles:
        for r, q in prof.ladder:
            row = dict(zip(names, (float(v) for v in prof.x)))
            row.update(r=r, ratio=q, theta_upper=prof.theta_upper, theta_lower=prof.theta_lower)
            rows.append(row)
    return write_csv(rows, names + ["r", "ratio", "theta_upper", "theta_lower"], path)
