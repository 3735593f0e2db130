"""Case orchestration: build -> crop -> resample -> couple -> march -> report.

Every run directory receives the resolved config, a version stamp, the
per-step CSV log, and the configured field/surface/probe exports, so results
are reproducible from the artifacts alone.
"""

from __future__ import annotations

import csv
import logging
import os
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import CaseConfig, save_config
from .errors import ConfigurationError
from .grid import BoxDomain, EulerianGrid, build_grid, crop_active_region
from .ipcs import (BoundaryConditionSet, BoundaryPatch, FluidProperties,
                   Stepper, TimeControls, HISTORY_COLUMNS)
from .post import (ErrorReport, WSSField, build_dcpse, error_norms,
                   export_fields, make_wss_cloud, poiseuille_exact, probe_line,
                   wall_shear_stress, write_probe_csv)
from .kernel import build_coupling, interpolate
from .shapes import make_bend_tube, make_cylinder_tube
from .surface import (LagrangianCloud, TriangleSurface, facet_stats,
                      load_surface, nearest_neighbor_spacing, resample_uniform,
                      write_cloud_csv)

logger = logging.getLogger(__name__)


@dataclass
class CaseResult:
    config: CaseConfig
    grid: EulerianGrid
    run: object                       # ipcs.RunResult
    cloud: LagrangianCloud | None = None
    solid: TriangleSurface | None = None
    error_report: ErrorReport | None = None
    wss: WSSField | None = None
    max_axial_velocity: float | None = None
    inside_fraction: float | None = None
    outputs: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def state(self):
        return self.run.state


def build_geometry(config: CaseConfig):
    """Closed solid surface for the case, or None when no body is immersed."""
    geo = config.geometry
    h = config.grid.h
    margin = config.markers.end_margin_cells * h
    if geo.kind == "none":
        return None
    if geo.kind == "cylinder":
        p = geo.params
        edge = config.markers.target_ds or h
        return make_cylinder_tube(
            radius=p["radius"], x_start=p["x_start"], x_end=p["x_end"],
            target_edge=edge, axis=int(p.get("axis", 0)),
            center=tuple(p.get("center", (0.0, 0.0))), wall_margin=margin,
        )
    if geo.kind == "bend":
        p = geo.params
        edge = config.markers.target_ds or h
        return make_bend_tube(
            tube_radius=p["tube_radius"], bend_radius=p["bend_radius"],
            inlet_point=p["inlet_point"], leg_in=p["leg_in"],
            leg_out=p["leg_out"], target_edge=edge, wall_margin=margin,
        )
    if geo.kind == "stl":
        return load_surface(geo.params["path"])
    raise ConfigurationError(f"unknown geometry kind {geo.kind!r}")


def build_case(config: CaseConfig):
    """Construct (grid, solid, cloud, stepper) for a case without running it."""
    g = config.grid
    box = BoxDomain(np.asarray(g.box_min), np.asarray(g.box_max))
    grid = build_grid(box, g.h)
    solid = build_geometry(config)

    cloud = None
    if solid is not None and config.ib_enabled:
        ds = config.markers.target_ds or g.h
        wall = solid.facet_groups.get("wall")
        cloud = resample_uniform(solid, ds, seed=config.markers.seed, facets=wall)
        _spacing_check(cloud, g.h)

    if solid is not None and g.crop_band_cells is not None:
        band = g.crop_band_cells * g.h
        grid = crop_active_region(
            grid, solid, band,
            support_points=None if cloud is None else cloud.points,
        )

    props = FluidProperties(rho=config.fluid.rho, mu=config.fluid.mu)
    tc = TimeControls(dt=config.time.dt, t_end=config.time.t_end,
                      max_steps=config.time.max_steps,
                      steady_tol=config.time.steady_tol,
                      monitor=config.time.monitor)
    patches = [
        BoundaryPatch(kind=p.kind, face=p.face, disk=p.disk, value=p.value,
                      profile=p.profile,
                      table=None if p.table is None else np.asarray(p.table),
                      name=p.name)
        for p in config.bcs
    ]
    stepper = Stepper(
        grid, props, BoundaryConditionSet(patches), tc, cloud=cloud,
        momentum_tol=config.solver.momentum_tol,
        poisson_tol=config.solver.poisson_tol,
        poisson_mode=config.solver.poisson,
        advection=config.solver.advection,
    )
    return grid, solid, cloud, stepper


def _spacing_check(cloud: LagrangianCloud, h: float):
    ratio = float(np.sqrt(cloud.areas.mean()) / h)
    if not 0.1 <= ratio <= 2.5:
        logger.warning(
            "Lagrangian spacing ratio sqrt(dS)/h = %.3f outside [0.1, 2.5]; "
            "expect leakage (too coarse) or an ill-conditioned force matrix "
            "(too fine)", ratio,
        )


def run_case(config: CaseConfig, output_dir: str | None = None) -> CaseResult:
    """Execute a case end to end and write its artifacts."""
    t0 = _time.perf_counter()
    grid, solid, cloud, stepper = build_case(config)
    logger.info("case %s: %d active nodes, %s Lagrangian points",
                config.name, grid.N, "no" if cloud is None else cloud.M)

    log_writer = _LogWriter(output_dir)
    run = stepper.run(on_step=log_writer)
    log_writer.close()

    result = CaseResult(config=config, grid=grid, run=run, cloud=cloud,
                        solid=solid)
    result.inside_fraction = getattr(grid, "inside_fraction", None)
    _postprocess(result, stepper, output_dir)
    result.elapsed = _time.perf_counter() - t0
    logger.info("case %s finished in %.1f s (%s after %d steps)",
                config.name, result.elapsed, run.reason, run.state.step)
    return result


def _postprocess(result: CaseResult, stepper: Stepper, output_dir):
    config = result.config
    grid, state = result.grid, result.run.state

    if config.error_check is not None:
        result.error_report, result.max_axial_velocity = _poiseuille_errors(
            config, grid, state
        )

    if config.wss and result.cloud is not None:
        result.wss = compute_wss(grid, result.cloud, state,
                                 config.fluid.mu, config.grid.h)

    if output_dir is None:
        return
    os.makedirs(output_dir, exist_ok=True)
    save_config(config, os.path.join(output_dir, "config.yaml"))
    with open(os.path.join(output_dir, "version.txt"), "w") as fh:
        import numpy as _np
        import scipy as _sp
        fh.write(f"ibflow {__version__}\nnumpy {_np.__version__}\nscipy {_sp.__version__}\n")
    if config.output.fields:
        result.outputs["fields"] = export_fields(
            state, grid, cloud=result.cloud if config.output.surface else None,
            outdir=output_dir, wss=result.wss,
        )
    if result.cloud is not None and config.output.surface:
        path = os.path.join(output_dir, "cloud.csv")
        write_cloud_csv(result.cloud, path)
        result.outputs["cloud"] = path
    for p in config.output.probes:
        probe = probe_line(grid, {"u": state.u_n, "p": state.p_n},
                           p["start"], p["end"], p["n"])
        path = os.path.join(output_dir, f"probe_{p['name']}.csv")
        write_probe_csv(probe, path)
        result.outputs.setdefault("probes", []).append(path)
    if config.error_check is not None and result.error_report is not None:
        path = os.path.join(output_dir, "error_report.txt")
        rep = result.error_report
        with open(path, "w") as fh:
            fh.write(f"samples {rep.n_samples}\nl_inf {rep.l_inf:.8e}\n"
                     f"l_2 {rep.l_2:.8e}\n")
            if rep.per_component is not None:
                for c, row in zip("xyz", rep.per_component):
                    fh.write(f"l_inf_{c} {row[0]:.8e}\nl_2_{c} {row[1]:.8e}\n")
            if result.max_axial_velocity is not None:
                fh.write(f"max_axial_velocity {result.max_axial_velocity:.8e}\n")
        result.outputs["error_report"] = path


def _poiseuille_errors(config: CaseConfig, grid: EulerianGrid, state):
    ec = config.error_check
    coords = grid.coords()
    center = np.asarray(ec.center)
    tang = [a for a in range(3) if a != ec.axis]
    r = np.sqrt(sum((coords[:, a] - center[a]) ** 2 for a in tang))
    flow = r <= ec.radius * (1 + 1e-12)
    exact = np.zeros((int(flow.sum()), 3))
    exact[:, ec.axis] = poiseuille_exact(r[flow], ec.radius, config.fluid.mu, ec.dpdz)
    report = error_norms(state.u_n[flow], exact)
    u_max = float(state.u_n[flow, ec.axis].max())
    return report, u_max


def compute_wss(grid: EulerianGrid, cloud: LagrangianCloud, state,
                mu: float, h: float) -> WSSField:
    """Wall shear stress on the Lagrangian points from the final velocity field.

    Samples the grid velocity on the wall points and two interior collar
    layers (1h and 2h inward along the normals) via the transfer kernel, then
    differentiates with the meshless operators.
    """
    pts, eval_idx = make_wss_cloud(cloud, h)
    coupling = build_coupling(grid, pts)
    u_samples = interpolate(coupling, state.u_n)
    ops = build_dcpse(pts, order=2, h_local=h, eval_idx=eval_idx)
    return wall_shear_stress(ops, u_samples, cloud.normals, mu)


class _LogWriter:
    def __init__(self, output_dir):
        self._fh = None
        self._writer = None
        if output_dir is not None:
            os.makedirs(output_dir, exist_ok=True)
            self._fh = open(os.path.join(output_dir, "log.csv"), "w", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(HISTORY_COLUMNS)

    def __call__(self, state, diag):
        if self._writer is None:
            return
        self._writer.writerow([
            diag.step, f"{diag.time:.10g}",
            *(f"{v:.6e}" for v in diag.nrmse),
            f"{diag.enforcement:.6e}", f"{diag.enforcement_post:.6e}",
            f"{diag.div_ustar:.6e}", f"{diag.div_ucorr:.6e}",
            f"{diag.div_unext:.6e}", diag.momentum_iters,
            f"{diag.momentum_residual:.3e}",
        ])

    def close(self):
        if self._fh is not None:
            self._fh.close()


@dataclass
class StudyRow:
    h: float
    l_inf: float
    l_2: float
    n_samples: int


@dataclass
class StudyResult:
    rows: list
    order_l_inf: list
    order_l_2: list
    results: list


def convergence_study(config: CaseConfig, resolutions, output_dir=None) -> StudyResult:
    """Run the case at each resolution and tabulate error norms and orders.

    Requires an exact solution in the config; resolutions must be distinct
    and are processed coarsest first.
    """
    res = [float(h) for h in resolutions]
    if len(set(res)) != len(res):
        raise ConfigurationError("duplicate resolutions in convergence study")
    if config.error_check is None:
        raise ConfigurationError("convergence study needs an error_check section")
    res = sorted(res, reverse=True)
    rows, results = [], []
    for h in res:
        cfg = CaseConfig.from_dict({**config.to_dict(),
                                    "name": f"{config.name}-h{h:g}"})
        cfg.grid.h = h
        if config.markers.target_ds is not None and config.grid.h:
            cfg.markers.target_ds = config.markers.target_ds * h / config.grid.h
        sub = None if output_dir is None else os.path.join(output_dir, f"h_{h:g}")
        r = run_case(cfg, output_dir=sub)
        rows.append(StudyRow(h=h, l_inf=r.error_report.l_inf,
                             l_2=r.error_report.l_2,
                             n_samples=r.error_report.n_samples))
        results.append(r)
    order_inf, order_l2 = [], []
    for a, b in zip(rows[:-1], rows[1:]):
        ratio = a.h / b.h
        order_inf.append(float(np.log(a.l_inf / b.l_inf) / np.log(ratio)))
        order_l2.append(float(np.log(a.l_2 / b.l_2) / np.log(ratio)))
    if output_dir is not None:
        with open(os.path.join(output_dir, "study.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "l_inf", "l_2", "n_samples", "order_l_inf", "order_l_2"])
            for i, row in enumerate(rows):
                w.writerow([row.h, f"{row.l_inf:.6e}", f"{row.l_2:.6e}",
                            row.n_samples,
                            "" if i == 0 else f"{order_inf[i-1]:.3f}",
                            "" if i == 0 else f"{order_l2[i-1]:.3f}"])
    return StudyResult(rows=rows, order_l_inf=order_inf, order_l_2=order_l2,
                       results=results)
