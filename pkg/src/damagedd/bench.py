"""Benchmark harness for the notched-plate tension problems.

A run is described by a :class:`RunConfig` (JSON-serializable, with every
benchmark default baked in so an empty config reproduces the standard
settings), executed by :func:`run`, and summarized by a :class:`RunReport`.
Each run writes four files into its output directory:

``reaction.csv``
    One row per accepted increment:
    ``load_factor,reaction,iterations,lambda,ms_total,ms_imaging``.
``decomposition.json``
    Decomposition events (adaptive mode) and the per-increment digest of
    the cleaned binary image, for cross-colormap comparisons.
``report.txt``
    Human-readable summary; flagged ``PARTIAL`` when the analysis stopped
    before the full load.
``run.json``
    The resolved configuration plus the summary numbers, machine readable.

:func:`compare` takes the reports of a plain and an accelerated run of the
same problem and emits the speedup ratio, the per-increment time series and
the reaction discrepancy.  The warm-up increment of each run is excluded
from the speedup ratio, since it pays one-off set-up costs (first assembly,
symbolic factorization) that say nothing about the steady-state methods.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time

import numpy as np

from .assembly import Constraints, Operators
from .constitutive import MaterialParams, NonlocalTable
from .decomposition import AdaptiveDecomposition
from .imaging import RasterConfig
from .mesh import (LoadProgram, PROBLEMS, REFINEMENTS,
                   generate_benchmark_mesh)
from .solver import Analysis, MonolithicSystem, SolverConfig
from .tracking import TrackConfig

SD = "sd"
DD = "dd"
MODES = (SD, DD)

CSV_HEADER = "load_factor,reaction,iterations,lambda,ms_total,ms_imaging"

#: Damage-law constants per problem family.  The single-notch plates use a
#: lower threshold and a sharper post-peak slope than the double-notch
#: strips; both sets keep the elastic constants at the common defaults
#: (shear modulus 125 N/mm^2, Poisson 0.2).
_SNT_MATERIAL = dict(eps_d=1.0e-4, beta=2.0e4, l_c=2.0)
_STRIP_MATERIAL = dict(eps_d=2.0e-4, beta=1.0e4, l_c=1.5)
MATERIAL_PRESETS = {
    "snt-struct": _SNT_MATERIAL,
    "snt-unstruct": _SNT_MATERIAL,
    "sdnt": _STRIP_MATERIAL,
    "adnt": _STRIP_MATERIAL,
}

#: Solver settings shared by both modes.  The tolerance is deliberately
#: tighter than the general-purpose default: late in the softening phase
#: the band widens through near-indifferent equilibria, and a loose
#: fixed-point tail is enough to push two otherwise identical runs onto
#: different branches.  1e-6 keeps plain and accelerated runs on the same
#: branch on all four benchmarks while staying affordable.
_BENCH_SOLVER = dict(rel_tol=1.0e-6, max_iter=1000)


def _material_preset(problem):
    if problem not in MATERIAL_PRESETS:
        raise ValueError(
            f"unknown problem '{problem}', expected one of {PROBLEMS}")
    return MaterialParams(**MATERIAL_PRESETS[problem])


@dataclasses.dataclass
class RunConfig:
    """Everything one benchmark run depends on.

    ``material``, ``raster``, ``tracking``, ``solver`` and ``load`` carry
    the component configurations; :meth:`preset` fills them with the
    benchmark defaults for a problem and :meth:`from_json` applies partial
    overrides on top.  ``seed`` is carried along for tooling that wants to
    randomize around a run; the analyses themselves are deterministic.
    """

    problem: str
    mode: str
    refinement: str
    material: MaterialParams
    raster: RasterConfig
    tracking: TrackConfig
    solver: SolverConfig
    load: LoadProgram
    out: str
    seed: int = 0
    snapshots: bool = False
    debug_schur: bool = False

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(
                f"unknown problem '{self.problem}', expected one of {PROBLEMS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.refinement not in REFINEMENTS:
            raise ValueError(
                f"unknown refinement '{self.refinement}', "
                f"expected one of {REFINEMENTS}")

    @classmethod
    def preset(cls, problem, mode=SD, refinement="coarse", out=None, **kw):
        """Benchmark defaults for ``problem``; keywords override fields."""
        if out is None:
            out = os.path.join("runs", f"{problem}-{refinement}-{mode}")
        base = dict(
            problem=problem,
            mode=mode,
            refinement=refinement,
            material=_material_preset(problem),
            raster=RasterConfig(),
            tracking=TrackConfig(),
            solver=SolverConfig(**_BENCH_SOLVER),
            load=LoadProgram(),
            out=out,
        )
        base.update(kw)
        return cls(**base)

    @classmethod
    def from_json(cls, source, **overrides):
        """Build a config from a JSON file path, JSON text or dict.

        Top-level keys mirror the dataclass fields; the nested sections
        (``material``, ``raster``, ``tracking``, ``solver``, ``load``)
        may be partial and are applied on top of the problem's preset.
        ``overrides`` (typically command-line flags) win over the file.
        Unknown keys anywhere raise ``ValueError`` before anything runs.
        """
        if isinstance(source, dict):
            doc = dict(source)
        else:
            text = source
            if not source.lstrip().startswith("{"):
                with open(source, "r", encoding="utf-8") as fh:
                    text = fh.read()
            doc = json.loads(text)
        doc.update({k: v for k, v in overrides.items() if v is not None})

        sections = {
            "material": MaterialParams,
            "raster": RasterConfig,
            "tracking": TrackConfig,
            "solver": SolverConfig,
            "load": LoadProgram,
        }
        scalars = {"problem", "mode", "refinement", "out", "seed",
                   "snapshots", "debug_schur"}
        unknown = set(doc) - scalars - set(sections)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")

        problem = doc.get("problem", "snt-struct")
        if problem not in PROBLEMS:
            raise ValueError(
                f"unknown problem '{problem}', expected one of {PROBLEMS}")
        config = cls.preset(problem,
                            mode=doc.get("mode", SD),
                            refinement=doc.get("refinement", "coarse"),
                            out=doc.get("out"),
                            seed=doc.get("seed", 0),
                            snapshots=bool(doc.get("snapshots", False)),
                            debug_schur=bool(doc.get("debug_schur", False)))
        for name, kind in sections.items():
            part = doc.get(name)
            if part is None:
                continue
            if not isinstance(part, dict):
                raise ValueError(f"config section '{name}' must be an object")
            base = getattr(config, name)
            bad = set(part) - {f.name for f in dataclasses.fields(kind)}
            if bad:
                raise ValueError(
                    f"unknown keys in config section '{name}': {sorted(bad)}")
            setattr(config, name, dataclasses.replace(base, **part))
        return config

    def to_dict(self):
        doc = dataclasses.asdict(self)
        return doc


@dataclasses.dataclass
class RunReport:
    """Summary of one finished run, backed by the files in ``out``."""

    problem: str
    mode: str
    refinement: str
    out: str
    csv_path: str
    completed: bool
    reason: str
    n_increments: int
    wall_s: float
    imaging_s: float
    n_events: int
    peak_unhealthy_dofs: int
    peak_reaction: float
    final_load_factor: float
    final_reaction: float
    records: list = dataclasses.field(default_factory=list, repr=False)

    def summary_dict(self):
        doc = dataclasses.asdict(self)
        doc.pop("records")
        return doc

    def text(self):
        status = "COMPLETED" if self.completed else f"PARTIAL ({self.reason})"
        lines = [
            f"problem:             {self.problem}",
            f"refinement:          {self.refinement}",
            f"mode:                {self.mode}",
            f"status:              {status}",
            f"increments:          {self.n_increments}",
            f"final load factor:   {self.final_load_factor:.6g}",
            f"peak reaction:       {self.peak_reaction:.6g}",
            f"final reaction:      {self.final_reaction:.6g}",
            f"wall time:           {self.wall_s:.2f} s",
            f"imaging overhead:    {self.imaging_s:.2f} s",
            f"decomposition events:{self.n_events:2d}",
            f"peak unhealthy dofs: {self.peak_unhealthy_dofs}",
            f"reaction curve:      {self.csv_path}",
        ]
        return "\n".join(lines) + "\n"


def _sanitize(value):
    """Make a nested structure strictly JSON-compatible (no NaN/inf)."""
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    if isinstance(value, np.ndarray):
        return _sanitize(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def run(config):
    """Execute one benchmark run and persist its outputs.

    Returns the :class:`RunReport`; a non-convergent analysis still
    produces a report (and all output files), flagged as partial.
    """
    mesh = generate_benchmark_mesh(config.problem, config.refinement)
    params = config.material
    ops = Operators(mesh, params)
    table = NonlocalTable(ops.gauss_xy, ops.gauss_w, params.l_c)
    constraints = Constraints.from_mesh(mesh)
    reaction_dofs = 2 * np.asarray(mesh.dirichlet_sets["top"].nodes) + 1

    os.makedirs(config.out, exist_ok=True)
    observer = None
    if config.mode == DD:
        snapshot_dir = None
        if config.snapshots:
            snapshot_dir = os.path.join(config.out, "snapshots")
            os.makedirs(snapshot_dir, exist_ok=True)
        observer = AdaptiveDecomposition(
            ops, constraints, reaction_dofs, table, params,
            config.raster, config.tracking,
            snapshot_dir=snapshot_dir, debug_direct=config.debug_schur)

    system = MonolithicSystem(ops, constraints, table, params, reaction_dofs)
    analysis = Analysis(system, config.load, config.solver, observer)
    t0 = time.perf_counter()
    result = analysis.run()
    wall_s = time.perf_counter() - t0

    csv_path = os.path.join(config.out, "reaction.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for record in result.records:
            fh.write(record.csv_row() + "\n")

    events = observer.events if observer is not None else []
    digests = observer.digests if observer is not None else []
    with open(os.path.join(config.out, "decomposition.json"), "w",
              encoding="utf-8") as fh:
        json.dump(_sanitize({"events": events, "digests": digests}),
                  fh, indent=2, allow_nan=False)
        fh.write("\n")

    peak_unhealthy = max((e["n_unhealthy_free_dofs"] for e in events),
                         default=0)
    reactions = result.reactions
    report = RunReport(
        problem=config.problem,
        mode=config.mode,
        refinement=config.refinement,
        out=config.out,
        csv_path=csv_path,
        completed=result.completed,
        reason=result.reason,
        n_increments=len(result.records),
        wall_s=wall_s,
        imaging_s=sum(r.ms_imaging for r in result.records) / 1000.0,
        n_events=len(events),
        peak_unhealthy_dofs=int(peak_unhealthy),
        peak_reaction=float(reactions.max()) if reactions.size else 0.0,
        final_load_factor=(result.records[-1].load_factor
                           if result.records else 0.0),
        final_reaction=float(reactions[-1]) if reactions.size else 0.0,
        records=list(result.records),
    )
    with open(os.path.join(config.out, "report.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(report.text())
    with open(os.path.join(config.out, "run.json"), "w",
              encoding="utf-8") as fh:
        json.dump(_sanitize({"config": config.to_dict(),
                             "summary": report.summary_dict()}),
                  fh, indent=2, allow_nan=False)
        fh.write("\n")
    return report


def load_report(out_dir):
    """Rebuild a :class:`RunReport` from a finished run's directory."""
    with open(os.path.join(out_dir, "run.json"), "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    summary = doc["summary"]
    summary["out"] = out_dir
    summary["csv_path"] = os.path.join(out_dir, "reaction.csv")
    report = RunReport(**summary)
    data = np.genfromtxt(report.csv_path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    report.records = [
        _CsvRecord(float(r["load_factor"]), float(r["reaction"]),
                   float(r["ms_total"]), float(r["ms_imaging"]))
        for r in data
    ]
    return report


@dataclasses.dataclass
class _CsvRecord:
    load_factor: float
    reaction: float
    ms_total: float
    ms_imaging: float


@dataclasses.dataclass
class Comparison:
    """Plain-vs-accelerated comparison of two runs of the same problem."""

    speedup: float
    wall_sd_s: float
    wall_dd_s: float
    max_reaction_diff: float
    rel_l2: float
    same_grid: bool
    table: list

    def csv_text(self):
        lines = ["increment,load_factor_sd,ms_total_sd,"
                 "load_factor_dd,ms_total_dd,ms_imaging_dd"]
        for row in self.table:
            lines.append(",".join("" if v is None else f"{v:.10g}"
                                  for v in row))
        return "\n".join(lines) + "\n"

    def text(self):
        grid = "identical" if self.same_grid else "interpolated"
        return (
            f"wall time sd:          {self.wall_sd_s:.2f} s\n"
            f"wall time dd:          {self.wall_dd_s:.2f} s\n"
            f"speedup (sd/dd):       {self.speedup:.3f}\n"
            f"load grids:            {grid}\n"
            f"max reaction diff:     {self.max_reaction_diff:.6e}\n"
            f"reaction curve rel L2: {self.rel_l2:.6e}\n"
        )


def compare(report_sd, report_dd):
    """Compare a plain run against an accelerated run of the same problem.

    The speedup ratio uses per-increment solver times with the first
    increment of each run excluded (warm-up);  the reaction discrepancy is
    exact when both runs accepted the same load factors and interpolated
    onto the plain run's grid otherwise.
    """
    for field in ("problem", "refinement"):
        a, b = getattr(report_sd, field), getattr(report_dd, field)
        if a != b:
            raise ValueError(f"runs disagree on {field}: '{a}' vs '{b}'")
    if (report_sd.mode, report_dd.mode) != (SD, DD):
        raise ValueError("compare expects a plain run and an "
                         "accelerated run, in that order")

    lf_sd = np.array([r.load_factor for r in report_sd.records])
    lf_dd = np.array([r.load_factor for r in report_dd.records])
    r_sd = np.array([r.reaction for r in report_sd.records])
    r_dd = np.array([r.reaction for r in report_dd.records])
    same_grid = lf_sd.size == lf_dd.size and np.allclose(
        lf_sd, lf_dd, rtol=0.0, atol=1e-12)
    if same_grid:
        diff = r_dd - r_sd
    else:
        diff = np.interp(lf_sd, lf_dd, r_dd) - r_sd
    denom = np.linalg.norm(r_sd)
    rel_l2 = float(np.linalg.norm(diff) / denom) if denom > 0.0 else 0.0

    def _steady(records):
        return sum(r.ms_total for r in records[1:]) / 1000.0

    wall_sd = _steady(report_sd.records)
    wall_dd = _steady(report_dd.records)
    speedup = wall_sd / wall_dd if wall_dd > 0.0 else float("inf")

    table = []
    for i in range(max(len(report_sd.records), len(report_dd.records))):
        rs = report_sd.records[i] if i < len(report_sd.records) else None
        rd = report_dd.records[i] if i < len(report_dd.records) else None
        table.append((
            i,
            None if rs is None else rs.load_factor,
            None if rs is None else rs.ms_total,
            None if rd is None else rd.load_factor,
            None if rd is None else rd.ms_total,
            None if rd is None else rd.ms_imaging,
        ))
    return Comparison(
        speedup=float(speedup),
        wall_sd_s=wall_sd,
        wall_dd_s=wall_dd,
        max_reaction_diff=float(np.abs(diff).max()) if diff.size else 0.0,
        rel_l2=rel_l2,
        same_grid=bool(same_grid),
        table=table,
    )
