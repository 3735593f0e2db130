"""Built-in verification cases.

Geometry is generated analytically (no mesh assets): a straight circular tube
for the pressure-driven verification case and a 90-degree bend tube for the
curved-flow smoke case. Presets return full :class:`CaseConfig` objects that
can be serialized, edited, and rerun.
"""

from __future__ import annotations

from .config import (CaseConfig, ErrorCheckSection, FluidSection,
                     GeometrySection, GridSection, MarkersSection,
                     OutputSection, PatchSection, SolverSection, TimeSection)
from .errors import ConfigurationError

TUBE_RADIUS = 0.005
TUBE_LENGTH = 0.05          # 10 R
TUBE_BOX_HALF = 0.006

BEND_TUBE_RADIUS = 0.002    # D_i = 4 mm
BEND_RADIUS = 0.024
BEND_EXTENSION = 0.001
BEND_INLET = (0.007, 0.0, 0.0)
BEND_PEAK_VELOCITY = 0.122625
BEND_REYNOLDS = 300.0


def poiseuille_case(h: float = 1e-3, p_inlet: float = 1.0,
                    crop_band_cells: float | None = 3.0,
                    target_ds: float | None = None, dt: float = 2.5e-3,
                    steady_tol: float = 1e-8, max_steps: int = 40_000,
                    seed: int = 0, name: str | None = None) -> CaseConfig:
    """Pressure-driven flow in a straight circular tube immersed in a box.

    rho = 1050 kg/m^3, mu = 3.45e-3 Pa s; inlet/outlet pressure disks on the
    x faces drive dp/dx = -p_inlet / L; the exact developed profile is
    u(r) = U_max (1 - (r/R)^2).
    """
    R, L = TUBE_RADIUS, TUBE_LENGTH
    ds = h if target_ds is None else target_ds
    return CaseConfig(
        name=name or f"poiseuille-h{h:g}-p{p_inlet:g}",
        grid=GridSection(
            box_min=[0.0, -TUBE_BOX_HALF, -TUBE_BOX_HALF],
            box_max=[L, TUBE_BOX_HALF, TUBE_BOX_HALF],
            h=h, crop_band_cells=crop_band_cells,
        ),
        geometry=GeometrySection(kind="cylinder", params={
            "radius": R, "x_start": 0.0, "x_end": L, "axis": 0,
            "center": [0.0, 0.0],
        }),
        markers=MarkersSection(target_ds=ds, seed=seed, end_margin_cells=2.0),
        fluid=FluidSection(rho=1050.0, mu=0.00345),
        bcs=[
            PatchSection(kind="pressure", face="xmin", value=p_inlet,
                         disk={"center": [0.0, 0.0, 0.0], "radius": R},
                         name="inlet"),
            PatchSection(kind="pressure", face="xmax", value=0.0,
                         disk={"center": [L, 0.0, 0.0], "radius": R},
                         name="outlet"),
        ],
        time=TimeSection(dt=dt, max_steps=max_steps, steady_tol=steady_tol),
        solver=SolverSection(),
        output=OutputSection(probes=[{
            "name": "centerline",
            "start": [0.5 * L, -R, 0.0], "end": [0.5 * L, R, 0.0], "n": 101,
        }]),
        error_check=ErrorCheckSection(kind="poiseuille", radius=R,
                                      dpdz=-p_inlet / L, axis=0,
                                      center=[0.0, 0.0, 0.0]),
        wss=True,
    )


def ubend_case(h: float = 4e-4, crop_band_cells: float | None = 3.0,
               target_ds: float | None = None, dt: float = 2e-3,
               t_end: float = 3.0, steady_tol: float = 1e-8,
               extension: float = BEND_EXTENSION, seed: int = 0,
               name: str | None = None) -> CaseConfig:
    """90-degree tube bend at Re = 300 (inner diameter 4 mm, bend radius 24 mm).

    A parabolic profile enters through the ymin face, zero pressure leaves
    through the xmax face; the curved section produces a secondary (Dean)
    circulation that skews the axial peak toward the outer wall.
    """
    r, Rb = BEND_TUBE_RADIUS, BEND_RADIUS
    x0, y0, z0 = BEND_INLET
    mean_u = 0.5 * BEND_PEAK_VELOCITY
    rho = 1000.0
    mu = rho * mean_u * (2 * r) / BEND_REYNOLDS
    outlet_center = [x0 + Rb + extension, y0 + extension + Rb, z0]
    ds = 1.3 * h if target_ds is None else target_ds
    return CaseConfig(
        name=name or f"ubend-h{h:g}",
        grid=GridSection(
            box_min=[-0.0064, 0.0, -0.0064],
            box_max=[0.032, 0.0384, 0.0064],
            h=h, crop_band_cells=crop_band_cells,
        ),
        geometry=GeometrySection(kind="bend", params={
            "tube_radius": r, "bend_radius": Rb,
            "inlet_point": [x0, y0, z0],
            "leg_in": extension, "leg_out": extension,
        }),
        markers=MarkersSection(target_ds=ds, seed=seed, end_margin_cells=2.0),
        fluid=FluidSection(rho=rho, mu=mu),
        bcs=[
            PatchSection(kind="velocity", face="ymin",
                         disk={"center": [x0, y0, z0], "radius": r},
                         profile={"type": "parabolic", "peak": BEND_PEAK_VELOCITY,
                                  "direction": [0.0, 1.0, 0.0]},
                         name="inlet"),
            PatchSection(kind="pressure", face="xmax", value=0.0,
                         disk={"center": outlet_center, "radius": r},
                         name="outlet"),
        ],
        time=TimeSection(dt=dt, t_end=t_end, steady_tol=steady_tol,
                         max_steps=200_000),
        solver=SolverSection(),
        output=OutputSection(probes=[{
            # vertical diameter at the start of the outlet extension
            "name": "outlet_profile",
            "start": [x0 + Rb, y0 + extension + Rb - r, z0],
            "end": [x0 + Rb, y0 + extension + Rb + r, z0],
            "n": 81,
        }]),
        wss=False,
    )


def lid_cavity_case(n_cells: int = 16, lid_speed: float = 1.0,
                    reynolds: float = 100.0, dt: float = 0.01,
                    t_end: float = 2.0, name: str = "lid-cavity") -> CaseConfig:
    """Plain-box regression case with the immersed boundary disabled."""
    rho = 1.0
    mu = rho * lid_speed * 1.0 / reynolds
    h = 1.0 / n_cells
    return CaseConfig(
        name=name,
        grid=GridSection(box_min=[0.0, 0.0, 0.0], box_max=[1.0, 1.0, 1.0],
                         h=h, crop_band_cells=None),
        geometry=GeometrySection(kind="none"),
        fluid=FluidSection(rho=rho, mu=mu),
        bcs=[PatchSection(kind="velocity", face="ymax",
                          value=[lid_speed, 0.0, 0.0], name="lid")],
        time=TimeSection(dt=dt, t_end=t_end, steady_tol=1e-10),
        ib_enabled=False,
        output=OutputSection(fields=False, surface=False),
    )


PRESETS = {
    "poiseuille-coarse": lambda: poiseuille_case(h=1e-3),
    "poiseuille-coarse-re1102": lambda: poiseuille_case(h=1e-3, p_inlet=2.0),
    "poiseuille-coarse-fullbox": lambda: poiseuille_case(h=1e-3, crop_band_cells=None),
    "poiseuille-medium": lambda: poiseuille_case(h=5e-4),
    "ubend-coarse": lambda: ubend_case(h=4e-4),
    "lid-cavity": lambda: lid_cavity_case(),
}


def get_preset(name: str) -> CaseConfig:
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}"
        )
    return PRESETS[name]()
