"""Incremental pressure-correction time stepping with implicit boundary forcing.

One step runs: (1) semi-implicit tentative velocity, (2-3) boundary-force
assembly/solve/spread, (4) velocity correction, (5) pressure-increment Poisson
solve on the corrected velocity, (6) projection and pressure update, (7) state
rotation. The Poisson operator is assembled as the exact composition of the
discrete divergence and a gradient whose rows are zeroed at velocity-Dirichlet
nodes, so the projection annihilates the discrete divergence at every interior
node to solver tolerance.

Sign conventions (consistent units): pressure in Pa, increment phi in Pa,
projection u <- u - (dt/rho) grad(phi), Poisson source (rho/dt) div(u).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .grid import EulerianGrid, FieldState
from .ibforce import apply_boundary_force, build_force_system
from .kernel import CouplingMatrix, build_coupling, interpolate
from .linsolve import SparseFactorization, krylov_solve
from .surface import LagrangianCloud

logger = logging.getLogger(__name__)

_FACES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


@dataclass(frozen=True)
class FluidProperties:
    rho: float      # kg/m^3
    mu: float       # Pa s

    def __post_init__(self):
        if self.rho <= 0 or self.mu <= 0:
            raise ConfigurationError("fluid density and viscosity must be positive")

    @property
    def nu(self) -> float:
        """Kinematic viscosity m^2/s."""
        return self.mu / self.rho


@dataclass(frozen=True)
class TimeControls:
    dt: float
    t_end: float | None = None
    max_steps: int | None = None
    steady_tol: float = 1e-8
    monitor: str = "verbatim"      # "verbatim" (1/N under the radical) or "rms"

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.steady_tol <= 0:
            raise ConfigurationError("steady_tolerance must be positive")
        if self.monitor not in ("verbatim", "rms"):
            raise ConfigurationError(f"unknown monitor variant {self.monitor!r}")
        if self.t_end is None and self.max_steps is None:
            raise ConfigurationError("need t_end or max_steps (or both)")


@dataclass
class BoundaryPatch:
    """One boundary condition on a box face (or the default wall catch-all).

    kind: "noslip" | "velocity" | "pressure". The region is the whole face or
    a disk {center, radius}; disk membership is strict (the rim stays with the
    wall patch). ``table`` is an optional (k, 2) time/scale array applied to
    the value/profile by linear interpolation.
    """

    kind: str
    face: str | None = None
    disk: dict | None = None            # {"center": (3,), "radius": r}
    value: object = None                # velocity 3-vector or pressure scalar
    profile: dict | None = None         # {"type": "parabolic", "peak": u, "direction": (3,)}
    table: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("noslip", "velocity", "pressure"):
            raise ConfigurationError(f"unknown boundary kind {self.kind!r}")
        if self.face is not None and self.face not in _FACES:
            raise ConfigurationError(f"unknown face {self.face!r}")
        if self.kind == "pressure" and self.face is None:
            raise ConfigurationError("pressure patches must sit on a box face")
        if not self.name:
            self.name = f"{self.kind}@{self.face or 'walls'}"
        if self.table is not None:
            self.table = np.asarray(self.table, dtype=float).reshape(-1, 2)

    def scale(self, t: float) -> float:
        if self.table is None:
            return 1.0
        return float(np.interp(t, self.table[:, 0], self.table[:, 1]))


class BoundaryConditionSet:
    """Ordered patches; unclaimed boundary nodes fall to a no-slip wall patch.

    Binding to a grid assigns every boundary node of the active region to
    exactly one patch (first match wins) and precomputes per-node base values.
    """

    def __init__(self, patches):
        self.patches = list(patches)

    def bind(self, grid: EulerianGrid) -> "BoundBC":
        return BoundBC(grid, self.patches)


class BoundBC:
    def __init__(self, grid: EulerianGrid, patches):
        self.grid = grid
        ops = grid.ops
        boundary = np.flatnonzero(ops.boundary_mask)
        i, j, k = grid.global_ijk(grid.active_to_global)
        on_face = {
            "xmin": i == 0, "xmax": i == grid.dims[0] - 1,
            "ymin": j == 0, "ymax": j == grid.dims[1] - 1,
            "zmin": k == 0, "zmax": k == grid.dims[2] - 1,
        }
        coords = grid.coords()
        claimed = np.zeros(grid.N, dtype=bool)

        vel_nodes, vel_base, vel_patch = [], [], []
        prs_nodes, prs_base, prs_patch = [], [], []
        neu_nodes, neu_axis = [], []

        for p in patches:
            mask = ops.boundary_mask.copy()
            if p.face is not None:
                mask &= on_face[p.face]
            if p.disk is not None:
                center = np.asarray(p.disk["center"], dtype=float)
                radius = float(p.disk["radius"])
                d = np.linalg.norm(coords - center[None, :], axis=1)
                mask &= d < radius * (1.0 - 1e-12)
            mask &= ~claimed
            nodes = np.flatnonzero(mask)
            if nodes.size == 0:
                logger.warning("boundary patch %s claims no nodes", p.name)
                continue
            claimed[nodes] = True
            if p.kind == "pressure":
                prs_nodes.append(nodes)
                prs_base.append(np.full(nodes.size, float(p.value)))
                prs_patch.append(p)
                neu_nodes.append(nodes)
                neu_axis.append(np.full(nodes.size, _FACES.index(p.face) // 2))
            else:
                base = self._velocity_values(p, coords[nodes])
                vel_nodes.append(nodes)
                vel_base.append(base)
                vel_patch.append(p)

        rest = np.flatnonzero(ops.boundary_mask & ~claimed)
        if rest.size:
            wall = BoundaryPatch(kind="noslip", name="walls-default")
            vel_nodes.append(rest)
            vel_base.append(np.zeros((rest.size, 3)))
            vel_patch.append(wall)

        self.vel_nodes = np.concatenate(vel_nodes) if vel_nodes else np.empty(0, dtype=int)
        self._vel_base = np.concatenate(vel_base) if vel_base else np.empty((0, 3))
        self._vel_slices = _slices(vel_nodes)
        self._vel_patches = vel_patch
        self.prs_nodes = np.concatenate(prs_nodes) if prs_nodes else np.empty(0, dtype=int)
        self._prs_base = np.concatenate(prs_base) if prs_base else np.empty(0)
        self._prs_slices = _slices(prs_nodes)
        self._prs_patches = prs_patch
        self.neu_nodes = np.concatenate(neu_nodes) if neu_nodes else np.empty(0, dtype=int)
        self.neu_axis = np.concatenate(neu_axis) if neu_axis else np.empty(0, dtype=int)
        self.pinned_node = None
        if self.prs_nodes.size == 0:
            # all-Neumann pressure: declare the nullspace and pin one node
            interior = np.flatnonzero(~ops.boundary_mask)
            self.pinned_node = int(interior[0]) if interior.size else 0
            logger.info("no pressure patch: pinning phi at node %d", self.pinned_node)

    @staticmethod
    def _velocity_values(p: BoundaryPatch, pts: np.ndarray) -> np.ndarray:
        if p.kind == "noslip" or (p.value is None and p.profile is None):
            return np.zeros((len(pts), 3))
        if p.profile is not None:
            if p.profile.get("type") != "parabolic":
                raise ConfigurationError(f"unknown profile type in patch {p.name}")
            center = np.asarray(p.disk["center"], dtype=float)
            radius = float(p.disk["radius"])
            peak = float(p.profile["peak"])
            direction = np.asarray(p.profile["direction"], dtype=float)
            d = np.linalg.norm(pts - center[None, :], axis=1)
            mag = peak * np.clip(1.0 - (d / radius) ** 2, 0.0, None)
            return mag[:, None] * direction[None, :]
        return np.broadcast_to(np.asarray(p.value, dtype=float), (len(pts), 3)).copy()

    def velocity_values(self, t: float) -> np.ndarray:
        out = self._vel_base.copy()
        for sl, p in zip(self._vel_slices, self._vel_patches):
            s = p.scale(t)
            if s != 1.0:
                out[sl] *= s
        return out

    def pressure_values(self, t: float) -> np.ndarray:
        out = self._prs_base.copy()
        for sl, p in zip(self._prs_slices, self._prs_patches):
            s = p.scale(t)
            if s != 1.0:
                out[sl] *= s
        return out


def _slices(chunks):
    out = []
    start = 0
    for c in chunks:
        out.append(slice(start, start + len(c)))
        start += len(c)
    return out


def steady_monitor(u_prev: np.ndarray, u_next: np.ndarray,
                   mode: str = "verbatim") -> np.ndarray:
    """Normalized RMS change between consecutive steps, per velocity component.

    verbatim: sqrt(sum(du^2) / N^2) / (max(u_prev) - min(u_prev));
    rms variant replaces N^2 by N. A constant component (zero range) returns
    0 by convention.
    """
    du2 = ((u_next - u_prev) ** 2).sum(axis=0)
    n = u_prev.shape[0]
    num = np.sqrt(du2 / n ** 2) if mode == "verbatim" else np.sqrt(du2 / n)
    rng = u_prev.max(axis=0) - u_prev.min(axis=0)
    out = np.zeros(3)
    ok = rng > 0
    out[ok] = num[ok] / rng[ok]
    return out


@dataclass
class StepDiagnostics:
    time: float = 0.0
    step: int = 0
    nrmse: np.ndarray = field(default_factory=lambda: np.full(3, np.nan))
    enforcement: float = 0.0          # max |interp(u) - U_B| right after correction
    enforcement_post: float = 0.0     # same, after the projection
    div_ustar: float = 0.0            # ||div u*||_2 over interior nodes
    div_ucorr: float = 0.0
    div_unext: float = 0.0
    momentum_iters: int = 0
    momentum_residual: float = 0.0


class Stepper:
    """Owns the assembled operators and advances a FieldState in time.

    The grid, boundary binding, Poisson factorization, and boundary-force
    factorization are built once; only the advection part of the momentum
    matrix is reassembled each step.
    """

    def __init__(self, grid: EulerianGrid, props: FluidProperties,
                 bc: BoundaryConditionSet, time: TimeControls,
                 cloud: LagrangianCloud | None = None,
                 momentum_tol: float = 1e-8, poisson_tol: float = 1e-10,
                 poisson_mode: str = "direct", advection: str = "central"):
        self.grid = grid
        self.props = props
        self.time = time
        if advection not in ("central", "upwind"):
            raise ConfigurationError(f"unknown advection scheme {advection!r}")
        self.advection = advection
        self.momentum_tol = momentum_tol
        self.poisson_tol = poisson_tol
        self.bc = bc.bind(grid)
        ops = grid.ops
        n = grid.N
        dt, nu, rho = time.dt, props.nu, props.rho
        self.dt, self.rho = dt, rho

        # --- momentum operator. Velocity-Dirichlet nodes get identity rows.
        # Pressure-patch (open face) nodes get, for the face-normal velocity
        # component, a developed-flow momentum row: time term, in-face
        # (transverse) diffusion, and the forward pressure gradient, which is
        # how the patch pressure value drives the flow. One-sided
        # normal-diffusion and advection closures are omitted there: their
        # extrapolative stencils destabilize open faces, and both terms
        # vanish for developed in/outflow. Tangential components at patch
        # nodes copy their first inward neighbour (zero normal gradient to
        # first order).
        vel_d = self.bc.vel_nodes
        prs = self.bc.prs_nodes
        pde_mask = np.ones(n, dtype=bool)
        pde_mask[vel_d] = False
        pde_mask[prs] = False
        self.pde_mask = pde_mask
        self.adv_mask = pde_mask
        eye = sp.identity(n, format="csr")
        self._mom_shared = (eye - dt * nu * ops.lap_compact).tocsr()
        self._keep = []
        self._bc_rows = []
        self._rhs_keep = []
        for c in range(3):
            normal = prs[self.bc.neu_axis == c]
            rows = sp.lil_matrix((n, n))
            rows[vel_d, vel_d] = 1.0
            for node, axis in zip(prs, self.bc.neu_axis):
                if axis == c:
                    continue
                rows[node, node] = 1.0
                nb = ops.inward_neighbor(node, axis)
                if nb >= 0:
                    rows[node, nb] = -1.0
            if normal.size:
                sel = sp.diags(np.isin(np.arange(n), normal).astype(float))
                face_mom = eye - dt * nu * sum(
                    ops.D2[b] for b in range(3) if b != c
                )
                rows = rows.tocsr() + (sel @ face_mom).tocsr()
            self._keep.append(sp.diags(pde_mask.astype(float)).tocsr())
            self._bc_rows.append(rows.tocsr() if sp.issparse(rows) else rows)
            rhs_keep = pde_mask.copy()
            rhs_keep[normal] = True
            self._rhs_keep.append(rhs_keep)
        self._G = ops.G
        self._adv_scale = dt

        # --- pressure coupling operators. A central-difference pressure
        # gradient plus any projection pair leaves odd/even (checkerboard)
        # modes marginally unstable on a collocated grid, so the pressure is
        # coupled through a forward-gradient / backward-divergence pair used
        # consistently in the momentum right-hand side, the Poisson operator
        # (their composition: the compact Laplacian, which couples all
        # parities), and the velocity update. The per-step pressure transfer
        # is then exactly self-consistent, and one-sided differences are
        # exact on the linear pressure fields of developed internal flow.
        # All public stencils stay second-order central. Gradient rows are
        # zeroed at velocity-Dirichlet nodes so the projection never touches
        # prescribed velocities.
        gmask = np.ones(n)
        gmask[vel_d] = 0.0
        Zv = sp.diags(gmask).tocsr()
        G_bwd = [ops.one_sided(a)[0] for a in range(3)]
        G_fwd = [ops.one_sided(a)[1] for a in range(3)]
        self._G_press = G_fwd
        self._G_proj = [(Zv @ G_fwd[a]).tocsr() for a in range(3)]
        self._G_div = G_bwd
        L_ppe = sum(G_bwd[a] @ self._G_proj[a] for a in range(3)).tocsr()

        prs = self.bc.prs_nodes
        interior_mask = np.ones(n, dtype=bool)
        interior_mask[vel_d] = False
        interior_mask[prs] = False
        if self.bc.pinned_node is not None:
            interior_mask[self.bc.pinned_node] = False
        self.ppe_interior = interior_mask
        Ri = sp.diags(interior_mask.astype(float)).tocsr()
        # wall closure: dphi/dn = 0 as a mirror row (phi_wall = mean of the
        # inward axis neighbours). First order, strictly diagonally dominant;
        # one-sided second-order rows form dependent clusters at box edges.
        ppe_rows = sp.lil_matrix((n, n))
        ppe_rows[prs, prs] = 1.0
        if self.bc.pinned_node is not None:
            ppe_rows[self.bc.pinned_node, self.bc.pinned_node] = 1.0
        miss_lo, miss_hi = ops.missing_lo, ops.missing_hi
        for node in vel_d:
            inward = []
            for a in range(3):
                if miss_lo[node, a] != miss_hi[node, a]:
                    nb = ops.inward_neighbor(node, a)
                    if nb >= 0:
                        inward.append(nb)
            ppe_rows[node, node] = 1.0
            for nb in inward:
                ppe_rows[node, nb] = ppe_rows[node, nb] - 1.0 / len(inward)
        self._ppe = (Ri @ L_ppe + ppe_rows.tocsr()).tocsr()
        self.poisson_mode = poisson_mode
        if poisson_mode == "direct":
            self._ppe_solver = SparseFactorization(self._ppe)
        elif poisson_mode == "iterative":
            self._ppe_solver = None
        else:
            raise ConfigurationError(f"unknown poisson mode {poisson_mode!r}")

        # --- boundary force system (rigid boundary: factor once)
        self.cloud = cloud
        self.coupling: CouplingMatrix | None = None
        self.force_system = None
        if cloud is not None:
            self.coupling = build_coupling(grid, cloud)
            self.force_system = build_force_system(self.coupling, cloud, dt, rho)

    # -- individual operations --------------------------------------------

    def initial_state(self) -> FieldState:
        """Zero velocity with boundary values imposed and pressure warm-started
        by a Laplace solve against the pressure patches."""
        state = FieldState.zeros(self.grid)
        state.u_n[self.bc.vel_nodes] = self.bc.velocity_values(0.0)
        rhs = np.zeros(self.grid.N)
        rhs[self.bc.prs_nodes] = self.bc.pressure_values(0.0)
        state.p_n = self._poisson_solve(rhs)
        return state

    def tentative_velocity(self, state: FieldState, t_new: float):
        """Semi-implicit momentum solve for u*.

        u* + dt (u^n . grad) u* - dt nu lap(u*) = u^n - (dt/rho) grad(p^n),
        velocity Dirichlet imposed strongly, d(u)/dn = 0 on pressure patches.
        """
        dt, rho = self.dt, self.rho
        pde = self._mom_shared + self._advection_matrix(state.u_n)
        vals = self.bc.velocity_values(t_new)
        u_star = np.empty_like(state.u_n)
        iters = 0
        resid = 0.0
        for c in range(3):
            A = (self._keep[c] @ pde + self._bc_rows[c]).tocsr()
            rhs = state.u_n[:, c] - (dt / rho) * (self._G_press[c] @ state.p_n)
            rhs[~self._rhs_keep[c]] = 0.0
            rhs[self.bc.vel_nodes] = vals[:, c]
            x0 = state.u_star[:, c] if state.step > 0 else None
            u_star[:, c], rep = krylov_solve(A, rhs, tol=self.momentum_tol, x0=x0)
            iters += rep.iterations
            resid = max(resid, rep.residual)
        return u_star, iters, resid

    def _advection_matrix(self, u: np.ndarray):
        dt = self._adv_scale
        m = self.adv_mask.astype(float)
        if self.advection == "central":
            return sum(
                sp.diags(dt * m * u[:, a]) @ self._G[a] for a in range(3)
            ).tocsr()
        ops = self.grid.ops
        parts = []
        for a in range(3):
            up = np.clip(u[:, a], 0.0, None)
            dn = np.clip(u[:, a], None, 0.0)
            gb, gf = ops.one_sided(a)
            parts.append(sp.diags(dt * m * up) @ gb + sp.diags(dt * m * dn) @ gf)
        return sum(parts).tocsr()

    def projection_divergence(self, u: np.ndarray) -> np.ndarray:
        """Divergence in the projection metric (the one the solve annihilates)."""
        return sum(self._G_div[a] @ u[:, a] for a in range(3))

    def pressure_poisson(self, u_corrected: np.ndarray, t_new: float | None = None,
                         p_n: np.ndarray | None = None) -> np.ndarray:
        """Solve for the pressure increment phi driven by (rho/dt) div(u)."""
        rhs = np.zeros(self.grid.N)
        rhs[self.ppe_interior] = (self.rho / self.dt) * self.projection_divergence(
            u_corrected
        )[self.ppe_interior]
        if t_new is not None and self.bc.prs_nodes.size:
            p_now = p_n if p_n is not None else np.zeros(self.grid.N)
            rhs[self.bc.prs_nodes] = (
                self.bc.pressure_values(t_new) - p_now[self.bc.prs_nodes]
            )
        return self._poisson_solve(rhs)

    def _poisson_solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._ppe_solver is not None:
            return self._ppe_solver.solve(rhs)
        x, _ = krylov_solve(self._ppe, rhs, tol=self.poisson_tol)
        return x

    def update_velocity_pressure(self, u: np.ndarray, phi: np.ndarray,
                                 p_n: np.ndarray):
        """Projection u <- u - (dt/rho) grad(phi) (masked at velocity-Dirichlet
        nodes) and pressure accumulation p <- p + phi."""
        scale = self.dt / self.rho
        u_next = u.copy()
        for a in range(3):
            u_next[:, a] -= scale * (self._G_proj[a] @ phi)
        return u_next, p_n + phi

    # -- one full step -------------------------------------------------------

    def advance_timestep(self, state: FieldState):
        """Advance one dt; returns (new_state, StepDiagnostics)."""
        t_new = state.time + self.dt
        diag = StepDiagnostics(time=t_new, step=state.step + 1)

        u_star, diag.momentum_iters, diag.momentum_residual = \
            self.tentative_velocity(state, t_new)

        if self.force_system is not None:
            u_corr, F, f_body, diag.enforcement = apply_boundary_force(
                self.coupling, self.cloud, self.force_system, u_star
            )
        else:
            u_corr, f_body = u_star, np.zeros_like(u_star)

        phi = self.pressure_poisson(u_corr, t_new, state.p_n)
        u_next, p_next = self.update_velocity_pressure(u_corr, phi, state.p_n)

        inter = self.ppe_interior
        diag.div_ustar = float(np.linalg.norm(self.projection_divergence(u_star)[inter]))
        diag.div_ucorr = float(np.linalg.norm(self.projection_divergence(u_corr)[inter]))
        diag.div_unext = float(np.linalg.norm(self.projection_divergence(u_next)[inter]))
        if self.coupling is not None:
            diag.enforcement_post = float(
                np.abs(interpolate(self.coupling, u_next) - self.cloud.velocity).max()
            )

        new = FieldState(
            u_n=u_next, u_star=u_star, u_next=u_next, p_n=p_next, phi=phi,
            f_body=f_body, time=t_new, step=state.step + 1,
        )
        return new, diag

    # -- run loop -------------------------------------------------------------

    def run(self, state: FieldState | None = None, on_step=None):
        """March until steady (all three monitor components below tol), t_end,
        or max_steps. Returns a RunResult with the per-step history."""
        tc = self.time
        state = self.initial_state() if state is None else state
        history = []
        reason = "max_steps"
        max_steps = tc.max_steps if tc.max_steps is not None else np.iinfo(np.int64).max
        while state.step < max_steps:
            prev_u = state.u_n
            state, diag = self.advance_timestep(state)
            diag.nrmse = steady_monitor(prev_u, state.u_n, tc.monitor)
            history.append(diag)
            if on_step is not None:
                on_step(state, diag)
            # a still-zero field has a degenerate range (monitor 0 by
            # convention); it must not count as a converged flow
            developed = (prev_u.max(axis=0) - prev_u.min(axis=0)).max() > 0
            if developed and np.all(diag.nrmse < tc.steady_tol):
                reason = "steady"
                break
            if tc.t_end is not None and state.time >= tc.t_end - 1e-12 * tc.dt:
                reason = "t_end"
                break
        logger.info("run finished after %d steps (%s), max NRMSE %.3e",
                    state.step, reason, float(np.max(history[-1].nrmse)) if history else np.nan)
        return RunResult(state=state, history=history, reason=reason, stepper=self)


@dataclass
class RunResult:
    state: FieldState
    history: list
    reason: str
    stepper: Stepper

    def history_array(self) -> np.ndarray:
        """Structured history as a plain float array (see HISTORY_COLUMNS)."""
        rows = [
            [d.step, d.time, *d.nrmse, d.enforcement, d.enforcement_post,
             d.div_ustar, d.div_ucorr, d.div_unext, d.momentum_iters,
             d.momentum_residual]
            for d in self.history
        ]
        return np.asarray(rows)


HISTORY_COLUMNS = (
    "step", "time", "nrmse_x", "nrmse_y", "nrmse_z", "enforcement",
    "enforcement_post_projection", "div_u_star", "div_u_corrected",
    "div_u_next", "momentum_iterations", "momentum_residual",
)
