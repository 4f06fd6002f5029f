"""Config-driven convergence studies: run metric x N cells, persist CSV/JSON, fit slopes."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from kacsphere import _rng, alip, chaos, rates
from kacsphere.densities import DensityModel, Functionals, make_density, moment, rel_fisher_gaussian
from kacsphere.errors import KacSphereError, PreconditionError, UnsupportedError
from kacsphere.estimates import EstimateWithError
from kacsphere.fitting import DegenerateFitError, fit_loglog
from kacsphere.rescaled import CONDITIONED_CAP, ConditionedState, RescaledLaw, SphericalDensityKernel

CSV_HEADER = ["study_id", "metric", "N", "estimate", "stderr", "method", "samples", "seed", "bound", "violation"]
DEFAULT_GRID = [4, 8, 16, 32, 64, 128, 256, 512, 1024]
DEFAULT_CAPS = {"conditioned_entropy": CONDITIONED_CAP, "fisher": 128}
WORKERS_ENV = "KACSPHERE_WORKERS"
MIN_MC_SAMPLES = 1000

# metric name -> (parameter defaults, needs Monte Carlo samples, per-N)
METRICS = {
    "w2": ({}, True, True),
    "wr": ({"r": 3.0}, True, True),
    "l1_k1": ({}, True, True),
    "entropy": ({}, True, True),
    "entropy_gap": ({}, True, True),
    "fisher": ({}, True, True),
    "fisher_n2": ({}, False, False),
    "conditioned_entropy": ({}, True, True),
    "tail_prob": ({"k": 1, "q": 0.25}, True, True),
    "alip_step": ({"h_min": 1e-3, "h_max": 1.0, "points": 7}, False, False),
    "alip_power": ({"a": -0.5, "h_min": 1e-7, "h_max": 1e-1, "points": 7}, False, False),
    "alip_mollify": ({"alpha": 0.5, "beta": 2.0, "delta_min": 10**-4.5, "delta_max": 10**-0.5, "points": 9},
                     False, False),
}
IDENTIFYING = {"wr": ("r",), "tail_prob": ("k", "q"), "alip_power": ("a",), "alip_mollify": ("alpha", "beta")}


class ConfigError(KacSphereError, ValueError):
    """Invalid study configuration; names the offending field."""

    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name
        self.reason = reason


@dataclass(frozen=True)
class MetricSpec:
    name: str
    params: dict = field(default_factory=dict)

    @property
    def id(self) -> str:
        """Name plus identifying and non-default parameters, e.g. ``wr(r=3)``."""
        defaults = METRICS[self.name][0]
        keep = {k: v for k, v in self.params.items()
                if k in IDENTIFYING.get(self.name, ()) or v != defaults.get(k)}
        if not keep:
            return self.name
        return self.name + "(" + ",".join(f"{k}={v:g}" for k, v in sorted(keep.items())) + ")"

    @classmethod
    def parse(cls, spec) -> MetricSpec:
        if isinstance(spec, MetricSpec):
            return spec
        if isinstance(spec, str):
            m = re.fullmatch(r"\s*(\w+)\s*(?:\((.*)\))?\s*", spec)
            if not m:
                raise ConfigError("metrics", f"cannot parse {spec!r}")
            name, body = m.group(1), m.group(2)
            given = {}
            if body:
                for i, part in enumerate(p.strip() for p in body.split(",") if p.strip()):
                    if "=" in part:
                        k, v = part.split("=", 1)
                        given[k.strip()] = float(v)
                    elif i == 0 and name in METRICS and METRICS[name][0]:
                        given[next(iter(METRICS[name][0]))] = float(part)
                    else:
                        raise ConfigError("metrics", f"cannot parse parameter {part!r} of {name}")
        elif isinstance(spec, dict):
            name = spec.get("name")
            given = {k: v for k, v in spec.items() if k != "name"}
        else:
            raise ConfigError("metrics", f"unsupported metric entry {spec!r}")
        if name not in METRICS:
            raise ConfigError("metrics", f"unknown metric {name!r}; known: {sorted(METRICS)}")
        defaults = METRICS[name][0]
        unknown = set(given) - set(defaults)
        if unknown:
            raise ConfigError("metrics", f"{name} does not take {sorted(unknown)}")
        params = {**defaults, **{k: float(v) for k, v in given.items()}}
        return cls(name, params)


@dataclass(frozen=True)
class StudyConfig:
    study_id: str
    density: dict
    metrics: tuple
    N: tuple = tuple(DEFAULT_GRID)
    M: int = 10_000
    M_mix: int = 100_000
    quad_nodes: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "results"
    caps: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> StudyConfig:
        d = dict(d)
        allowed = {"study_id", "density", "metrics", "N", "M", "M_mix", "quad_nodes", "seed", "output_dir", "caps"}
        extra = set(d) - allowed
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown field")
        for req in ("study_id", "density", "metrics"):
            if req not in d:
                raise ConfigError(req, "missing")
        dens = d["density"]
        if isinstance(dens, str):
            dens = {"name": dens, "params": {}}
        if not isinstance(dens, dict) or "name" not in dens:
            raise ConfigError("density", "expected {name, params}")
        metrics = d["metrics"]
        if isinstance(metrics, (str, dict)):
            metrics = [metrics]
        cfg = cls(
            study_id=str(d["study_id"]),
            density={"name": dens["name"], "params": dict(dens.get("params") or {})},
            metrics=tuple(MetricSpec.parse(m) for m in metrics),
            N=tuple(d.get("N", DEFAULT_GRID)),
            M=d.get("M", 10_000),
            M_mix=d.get("M_mix", 100_000),
            quad_nodes=dict(d.get("quad_nodes") or {}),
            seed=d.get("seed", 0),
            output_dir=str(d.get("output_dir", "results")),
            caps=dict(d.get("caps") or {}),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> StudyConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"study_id": self.study_id, "density": self.density,
                "metrics": [{"name": m.name, **m.params} for m in self.metrics], "N": list(self.N),
                "M": self.M, "M_mix": self.M_mix, "quad_nodes": self.quad_nodes, "seed": self.seed,
                "output_dir": self.output_dir, "caps": self.caps}

    @property
    def base(self) -> DensityModel:
        return make_density(self.density)

    def nodes(self, what: str) -> int:
        return int(self.quad_nodes.get(what, {"kernel": 256, "l1": 16, "n2": 48}[what]))

    def cap(self, metric: str) -> int | None:
        return self.caps.get(metric, DEFAULT_CAPS.get(metric))

    def validate(self) -> None:
        """Check every field and every metric's preconditions before any computation."""
        if not re.fullmatch(r"[\w.-]+", self.study_id):
            raise ConfigError("study_id", "use letters, digits, '.', '_' or '-'")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed", "must be a nonnegative integer")
        grid = self.N
        if not grid or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 2 for n in grid):
            raise ConfigError("N", "must be a nonempty list of integers >= 2")
        if any(b <= a for a, b in zip(grid[:-1], grid[1:])):
            raise ConfigError("N", "grid must be strictly increasing")
        for name, val in (("M", self.M), ("M_mix", self.M_mix)):
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise ConfigError(name, "must be a positive integer")
        for k, v in self.quad_nodes.items():
            if k not in ("kernel", "l1", "n2"):
                raise ConfigError("quad_nodes", f"unknown key {k!r}")
            if not isinstance(v, int) or v < 4 or v % 2:
                raise ConfigError("quad_nodes", f"{k} must be an even integer >= 4")
        for k, v in self.caps.items():
            if k not in METRICS or not isinstance(v, int) or v < 2:
                raise ConfigError("caps", f"invalid cap {k}={v!r}")
        if self.caps.get("conditioned_entropy", CONDITIONED_CAP) > CONDITIONED_CAP:
            raise ConfigError("caps", f"conditioned_entropy cannot exceed N = {CONDITIONED_CAP}")
        try:
            base = self.base
        except (TypeError, ValueError) as exc:
            raise ConfigError("density", str(exc)) from exc
        ids = [m.id for m in self.metrics]
        if len(set(ids)) != len(ids):
            raise ConfigError("metrics", "duplicate metric")
        for m in self.metrics:
            _validate_metric(self, base, m)


def _validate_metric(cfg: StudyConfig, base: DensityModel, m: MetricSpec) -> None:
    name, p = m.name, m.params
    field_name = f"metrics[{m.id}]"
    if METRICS[name][1] and cfg.M < MIN_MC_SAMPLES:
        raise ConfigError("M", f"{m.id} needs M >= {MIN_MC_SAMPLES}")
    if name.startswith("alip"):
        lo, hi = (p["h_min"], p["h_max"]) if "h_min" in p else (p["delta_min"], p["delta_max"])
        if not (0 < lo < hi) or p["points"] < 6:
            raise ConfigError(field_name, "ALip fit needs at least 6 sweep points over an increasing range")
        if name == "alip_power" and not -1 < p["a"] <= 1:
            raise ConfigError(field_name, "power exponent a must lie in (-1, 1]")
        if name == "alip_step" and p["h_max"] > 1:
            raise ConfigError(field_name, "ramp width h must lie in (0, 1]")
        return
    sup = base.moment_sup
    if name != "tail_prob" and not base.unit_energy:
        raise ConfigError("density", f"{m.id} [chaos theorems] needs E X^2 = 1; {base.name} has "
                          f"{base.second_moment():.6g}")
    if name == "w2" and not sup > 2:
        raise ConfigError(field_name, "[rescaled-tensor chaos] needs p > 2 moments")
    if name == "wr" and not 2 < p["r"] < sup:
        raise ConfigError(field_name, f"[W_r corollary] needs 2 < r < p; p = {sup:g}")
    if name == "l1_k1" and not sup > 2:
        raise ConfigError(field_name, "[L1 marginal chaos] needs 2 + delta moments with delta > 0")
    if name in ("entropy", "entropy_gap") and not sup > 4:
        raise ConfigError(field_name, f"[entropic chaos] needs k > 4 moments; p = {sup:g}")
    if name == "conditioned_entropy" and not sup > 4:
        raise ConfigError(field_name, f"[conditioned product] needs 4 + r moments; p = {sup:g}")
    if name in ("fisher", "fisher_n2"):
        if not base.differentiable:
            raise ConfigError(field_name, "fisher requires differentiable base with finite I(f|gamma): "
                              f"{base.name} is not differentiable")
        try:
            val = rel_fisher_gaussian(base).value
        except (UnsupportedError, KacSphereError) as exc:
            raise ConfigError(field_name, "fisher requires differentiable base with finite I(f|gamma): "
                              f"quadrature check failed ({exc})") from exc
        if not math.isfinite(val):
            raise ConfigError(field_name, "fisher requires differentiable base with finite I(f|gamma): "
                              "quadrature check failed")
    if name == "tail_prob":
        k, q = int(p["k"]), p["q"]
        if k != p["k"] or k < 1 or not 0 < q < 1:
            raise ConfigError(field_name, "[von Bahr-Esseen corollary] needs integer k >= 1 and q in (0, 1)")
        if rates.default_delta(sup) <= 0:
            raise ConfigError(field_name, "[von Bahr-Esseen corollary] needs 2 + delta moments")
        n0 = rates.vonbahr_n_min(k, q, base.second_moment())
        small = [n for n in cfg.N if n < n0 or n <= k]
        if small:
            raise ConfigError("N", f"{m.id} [von Bahr-Esseen corollary] needs N >= {n0:.4g}; got {small}")


# ---------------------------------------------------------------------------
# cells


@dataclass(frozen=True)
class Cell:
    metric: MetricSpec
    N: int


@dataclass
class Row:
    study_id: str
    metric: str
    N: int
    estimate: EstimateWithError
    seed: str
    bound: float | None = None
    lower: bool = False

    @property
    def violation(self) -> bool:
        if self.bound is None:
            return False
        e = self.estimate
        if self.lower:
            return e.value + 3 * e.error < self.bound
        return e.value - 3 * e.error > self.bound

    def csv_fields(self) -> list[str]:
        e = self.estimate
        return [self.study_id, self.metric, str(self.N), _fmt(e.value), _fmt(e.error), e.method, str(e.samples),
                self.seed, "" if self.bound is None else _fmt(self.bound), "true" if self.violation else "false"]

    def to_dict(self) -> dict:
        return {"study_id": self.study_id, "metric": self.metric, "N": self.N, "estimate": self.estimate.value,
                "stderr": self.estimate.error, "method": self.estimate.method, "samples": self.estimate.samples,
                "seed": self.seed, "bound": self.bound, "bound_side": "lower" if self.lower else "upper",
                "violation": self.violation, "detail": self.estimate.to_dict()}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def plan(cfg: StudyConfig) -> tuple[list[Cell], list[dict]]:
    """The cells to run, and those skipped by a per-metric N cap."""
    cells, skipped = [], []
    for m in cfg.metrics:
        if not METRICS[m.name][2]:
            cells.append(Cell(m, 2 if m.name == "fisher_n2" else 0))
            continue
        cap = cfg.cap(m.name)
        for n in cfg.N:
            if cap is not None and n > cap:
                skipped.append({"metric": m.id, "N": n, "reason": f"above cap {cap}"})
            else:
                cells.append(Cell(m, n))
    return cells, skipped


def cell_seed(cfg: StudyConfig, cell: Cell) -> tuple[int, ...]:
    return _rng.child(cfg.seed, cell.metric.id, cell.N)


def _alip_row(p: dict, name: str) -> tuple[EstimateWithError, float]:
    n = int(p["points"])
    if name == "alip_step":
        fams = alip.sweep(alip.approx_step, np.geomspace(p["h_min"], p["h_max"], n))
        table = 1.0
    elif name == "alip_power":
        a = p["a"]
        fams = alip.sweep(lambda h: alip.approx_power(a, h), np.geomspace(p["h_min"], p["h_max"], n))
        table = (1 - a) / (1 + a)
    else:
        target = alip.weierstrass_target(p["alpha"], p["beta"])
        fams = alip.sweep(lambda d: alip.approx_mollify(target, d), np.geomspace(p["delta_min"], p["delta_max"], n))
        table = (1 + p["beta"]) / (p["alpha"] * p["beta"])
    fit = alip.fit_r(fams)
    se = (fit.ci[1] - fit.r) / 1.96 if fit.ci[1] > fit.r else 0.0
    est = EstimateWithError(fit.r, se, samples=n, method=f"{name}-fit",
                            extra={"L0": fit.L0, "ci_low": fit.ci[0], "ci_high": fit.ci[1], "table_exponent": table})
    return est, table


def run_cell(cfg_dict: dict, metric: dict, N: int) -> dict:
    """Compute one cell; a pure function of its arguments (so it can run in a worker)."""
    cfg = StudyConfig.from_dict(cfg_dict)
    m = MetricSpec.parse(metric)
    cell = Cell(m, N)
    key = cell_seed(cfg, cell)
    base = cfg.base
    p = m.params
    bound, lower = None, False
    if m.name == "w2":
        est = chaos.w2_coupling_estimate(RescaledLaw(base, N), cfg.M, key)
    elif m.name == "wr":
        est = chaos.wr_coupling_estimate(RescaledLaw(base, N), p["r"], cfg.M, key)
    elif m.name == "l1_k1":
        est = chaos.l1_marginal_distance(RescaledLaw(base, N), cfg.M_mix, cfg.nodes("l1"), key)
    elif m.name in ("entropy", "entropy_gap"):
        dec = chaos.entropy_decomposition(SphericalDensityKernel(base, N, nodes=cfg.nodes("kernel")), cfg.M, key)
        if m.name == "entropy":
            est, bound = dec.per_particle, Functionals.of(base).rel_entropy_gaussian
        else:
            est, bound, lower = dec.gap, 0.0, True
    elif m.name == "fisher":
        est = chaos.fisher_per_particle(SphericalDensityKernel(base, N, nodes=cfg.nodes("kernel")), cfg.M, key)
        bound = (1 - 1 / N) * rel_fisher_gaussian(base).value
    elif m.name == "fisher_n2":
        est = chaos.fisher_n2_exact(base, cfg.nodes("n2"))
        bound = 0.5 * rel_fisher_gaussian(base).value
    elif m.name == "conditioned_entropy":
        est = chaos.conditioned_entropy_per_particle(ConditionedState(base, N), cfg.M, key)
    elif m.name == "tail_prob":
        chk = chaos.tail_probability_check(base, N, int(p["k"]), p["q"], cfg.M, key)
        est, bound = chk.empirical, chk.bound
    else:
        est, _ = _alip_row(p, m.name)
    return {"estimate": est, "bound": bound, "lower": lower}


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(WORKERS_ENV, f"not an integer: {raw!r}") from exc
    if n < 1:
        raise ConfigError(WORKERS_ENV, "must be >= 1")
    return n


# ---------------------------------------------------------------------------
# results


@dataclass
class StudyResult:
    config: StudyConfig
    rows: list
    skipped: list
    errors: list
    references: dict
    predictions: dict
    slopes: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    csv_path: Path | None = None
    json_path: Path | None = None

    @property
    def violations(self) -> list:
        return [r for r in self.rows if r.violation]

    @property
    def exit_code(self) -> int:
        return 1 if (self.errors or self.violations) else 0

    def metric_rows(self, metric: str) -> list:
        rows = [r for r in self.rows if r.metric == metric]
        if not rows:
            raise KeyError(f"metric {metric!r} not in result; have {sorted({r.metric for r in self.rows})}")
        return rows

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(r.csv_fields())
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "rows": [r.to_dict() for r in self.rows],
                "skipped": self.skipped, "errors": self.errors, "references": self.references,
                "predictions": self.predictions, "slopes": self.slopes, "timing": self.timing,
                "exit_code": self.exit_code}


def _references(base: DensityModel) -> dict:
    f = Functionals.of(base)
    out = {"second_moment": f.second_moment, "rel_entropy_gaussian": f.rel_entropy_gaussian,
           "rel_fisher_gaussian": f.rel_fisher_gaussian,
           "moment_sup": None if math.isinf(f.moment_sup) else f.moment_sup}
    for p in (4.0, 6.0):
        mom = moment(base, p)
        out[f"moment_{p:g}"] = mom.value if math.isfinite(mom.value) else None
    return out


def _predictions(cfg: StudyConfig, base: DensityModel) -> dict:
    sup = base.moment_sup
    out = {}
    for m in cfg.metrics:
        try:
            if m.name == "w2":
                pred = rates.w2_prediction(sup if math.isfinite(sup) else math.inf)
            elif m.name == "wr":
                pred = rates.wr_prediction(sup, m.params["r"])
            elif m.name == "l1_k1":
                pred = rates.l1_prediction(1, rates.default_delta(sup), 0.0)
            elif m.name in ("entropy", "entropy_gap"):
                pred = rates.entropic_rate(min(sup, 1e6))
            elif m.name == "conditioned_entropy":
                pred = rates.conditioned_rate(min(2.0, sup - 4.0 - 0.01))
            else:
                continue
        except PreconditionError:
            continue
        out[m.id] = pred.to_dict()
    return out


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_study(config, workers: int | None = None, write: bool = True) -> StudyResult:
    """Run every metric x N cell of ``config`` and write ``<study_id>.csv`` and ``.json``.

    Cells run in a process pool (``KACSPHERE_WORKERS`` or ``workers``); every
    cell's random stream is keyed by ``(seed, metric, N)`` so the output does
    not depend on the worker count.  Estimator failures are recorded with the
    cell coordinates and make :attr:`StudyResult.exit_code` nonzero.
    """
    cfg = config if isinstance(config, StudyConfig) else StudyConfig.from_dict(config)
    base = cfg.base
    cells, skipped = plan(cfg)
    nworkers = workers if workers is not None else _workers()
    cfg_dict = cfg.to_dict()
    args = [(cfg_dict, {"name": c.metric.name, **c.metric.params}, c.N) for c in cells]
    t0 = time.perf_counter()
    outcomes = []
    if nworkers <= 1 or len(cells) <= 1:
        for a in args:
            outcomes.append(_guard(*a))
    else:
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            outcomes = list(pool.map(_guard_star, args))
    rows, errors = [], []
    for c, out in zip(cells, outcomes):
        if "error" in out:
            errors.append({"metric": c.metric.id, "N": c.N, "error": out["error"]})
            continue
        seed = ":".join(str(k) for k in cell_seed(cfg, c))
        rows.append(Row(cfg.study_id, c.metric.id, c.N, out["estimate"], seed, out["bound"], out["lower"]))
    result = StudyResult(cfg, rows, skipped, errors, _references(base), _predictions(cfg, base),
                         timing={"seconds": time.perf_counter() - t0, "workers": nworkers})
    result.slopes = fit_slopes(result)
    if write:
        out_dir = Path(cfg.output_dir)
        result.csv_path = out_dir / f"{cfg.study_id}.csv"
        result.json_path = out_dir / f"{cfg.study_id}.json"
        _write_atomic(result.csv_path, result.csv_text())
        _write_atomic(result.json_path, json.dumps(result.to_dict(), indent=2, sort_keys=True, default=_json_default)
                      + "\n")
    return result


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _guard(cfg_dict, metric, N) -> dict:
    try:
        return run_cell(cfg_dict, metric, N)
    except (KacSphereError, ValueError, ArithmeticError) as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


def _guard_star(a):
    return _guard(*a)


# ---------------------------------------------------------------------------
# slopes and plot data


def _reference_for(result: StudyResult, metric: str):
    refs = result.references
    name = metric.split("(")[0]
    if name in ("entropy", "conditioned_entropy"):
        return lambda N: refs["rel_entropy_gaussian"]
    if name == "fisher" and refs["rel_fisher_gaussian"] is not None:
        return lambda N: refs["rel_fisher_gaussian"]
    return None


def fit_slopes(result: StudyResult) -> dict:
    """SE-weighted log-log slope per N-indexed metric, next to the predicted exponent.

    Metrics that converge to a nonzero limit are fitted on their deficit
    ``reference - estimate``.
    """
    table = {}
    metrics = []
    for r in result.rows:
        if r.metric not in metrics and r.N >= 2 and not r.metric.startswith(("alip", "fisher_n2")):
            metrics.append(r.metric)
    for metric in metrics:
        rows = result.metric_rows(metric)
        N = [r.N for r in rows]
        ref = _reference_for(result, metric)
        vals = [(ref(r.N) - r.estimate.value) if ref else r.estimate.value for r in rows]
        errs = [r.estimate.error for r in rows]
        pred = result.predictions.get(metric)
        entry = {"quantity": "reference - estimate" if ref else "estimate",
                 "predicted_exponent": None if pred is None else -pred["exponent"]}
        try:
            entry.update(fit_loglog(N, vals, errs).to_dict())
        except DegenerateFitError as exc:
            entry.update({"slope": None, "refused": str(exc)})
        except PreconditionError as exc:
            entry.update({"slope": None, "insufficient": str(exc)})
        table[metric] = entry
    return table


def format_slopes(table: dict) -> str:
    lines = [f"{'metric':<28}{'predicted':>10}{'slope':>10}  95% CI"]
    for metric, e in table.items():
        pred = "-" if e.get("predicted_exponent") is None else f"{e['predicted_exponent']:.4g}"
        if e.get("slope") is None:
            lines.append(f"{metric:<28}{pred:>10}{'-':>10}  ({e.get('refused') or e.get('insufficient')})")
        else:
            lines.append(f"{metric:<28}{pred:>10}{e['slope']:>10.4f}  [{e['ci'][0]:.3f}, {e['ci'][1]:.3f}]")
    return "\n".join(lines)


def load_result(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def emit_plot_data(result, metric: str, path) -> Path:
    """Write ``(N, estimate, SE)`` rows and ``(N, bound-shape)`` rows as two text blocks.

    Shapes with unknown constants are scaled through the last grid point and
    are for display only.
    """
    data = result.to_dict() if isinstance(result, StudyResult) else result
    rows = [r for r in data["rows"] if r["metric"] == metric]
    if not rows:
        raise KeyError(f"metric {metric!r} not in result; have {sorted({r['metric'] for r in data['rows']})}")
    refs = data["references"]
    name = metric.split("(")[0]
    N = np.array([r["N"] for r in rows], dtype=float)
    est = np.array([r["estimate"] for r in rows])
    lines = [f"# metric {metric}", "# block 1: N estimate stderr"]
    lines += [f"{int(r['N'])} {_fmt(r['estimate'])} {_fmt(r['stderr'])}" for r in rows]
    lines += ["", "", "# block 2: N reference columns"]
    cols, vals = [], []
    if name in ("entropy", "conditioned_entropy"):
        cols.append("H(f|gamma)")
        vals.append(np.full_like(N, refs["rel_entropy_gaussian"]))
    elif name in ("fisher", "fisher_n2") and refs.get("rel_fisher_gaussian") is not None:
        i = refs["rel_fisher_gaussian"]
        cols += ["I(f|gamma)", "(1-1/N)I(f|gamma)"]
        vals += [np.full_like(N, i), (1 - 1 / N) * i]
    pred = data["predictions"].get(metric)
    if pred is not None:
        shape = N ** (-pred["exponent"]) * (np.log(N) if pred["log_factor"] else 1.0)
        if pred.get("constant") is None and est[-1] > 0:
            shape = shape * est[-1] / shape[-1]
        cols.append(f"shape N^-{pred['exponent']:.6g}" + (" log N" if pred["log_factor"] else ""))
        vals.append(shape)
    bounds = [r["bound"] for r in rows]
    if any(b is not None for b in bounds) and name not in ("entropy", "fisher"):
        cols.append("bound")
        vals.append(np.array([np.nan if b is None else b for b in bounds]))
    lines.append("# columns: N " + " | ".join(cols))
    for j, n in enumerate(N):
        lines.append(" ".join([str(int(n))] + [_fmt(v[j]) for v in vals]))
    path = Path(path)
    _write_atomic(path, "\n".join(lines) + "\n")
    return path
