"""Limit flows and the deterministic hydrodynamic solver.

The initial/boundary set carries initial points (z, 0) and upstream boundary
points (0, t0), totally ordered with later boundary times largest, then the
shared corner (0, 0), then initial points with smaller z larger.  A flow
assigns to an admissible pair (gamma, t >= t0) a position in [0, 1]; it is
non-increasing in gamma, non-decreasing in t, and starts at y0(gamma).

The limit distribution function phi_theta integrates, over the population
measure restricted to [y0, 1], the no-arrival probability of the point
process whose hazard reads the class rate field along the flow.  The limit
flow y_C is the unique fixed point of theta = 1 - phi_theta(W, ., .), found
here by damped Picard iteration on a grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, DomainError
from .intensity import PopulationSpec
from .latp import LatpIntensity, SurvivalTable

log = logging.getLogger(__name__)

_TOL = 1e-12


@dataclass(frozen=True)
class BoundaryPoint:
    """A point of the initial/boundary set: (z, 0) or (0, t0)."""

    kind: str  # "initial" | "boundary"
    coord: float

    def __post_init__(self):
        if self.kind not in ("initial", "boundary"):
            raise ConfigError(f"unknown boundary point kind {self.kind!r}")
        if self.coord < -_TOL:
            raise ConfigError(f"negative coordinate {self.coord}")

    @property
    def y0(self) -> float:
        return self.coord if self.kind == "initial" else 0.0

    @property
    def t0(self) -> float:
        return self.coord if self.kind == "boundary" else 0.0

    def order_key(self):
        # boundary points with t0 > 0 sit above the corner; the corner
        # (0, 0) is the same point whether tagged initial or boundary
        if self.kind == "boundary" and self.coord > 0:
            return (1, self.coord)
        return (0, -self.y0)

    def __str__(self):
        return f"({self.kind[0]}:{self.coord:g})"


def initial(z: float) -> BoundaryPoint:
    return BoundaryPoint("initial", float(z))


def boundary(t0: float) -> BoundaryPoint:
    return BoundaryPoint("boundary", float(t0))


def gamma_compare(a: BoundaryPoint, b: BoundaryPoint) -> int:
    """Total order: +1 if a is larger, -1 if smaller, 0 if the same point."""
    ka, kb = a.order_key(), b.order_key()
    return (ka > kb) - (ka < kb)


class FlowGrid:
    """A flow sampled on initial points z_j = j/n_z and boundary times l*dt.

    Interpolation is linear in time and linear in the gamma coordinate.
    Boundary rows are stored zero-padded before their start time, which
    extends curves continuously by 0 below their start; strict queries
    reject inadmissible (gamma, t) pairs.
    """

    def __init__(self, horizon: float, init_values: np.ndarray,
                 bdry_values: np.ndarray, check: bool = True):
        init_values = np.ascontiguousarray(init_values, dtype=float)
        bdry_values = np.ascontiguousarray(bdry_values, dtype=float)
        n_zp, n_tp = init_values.shape
        if bdry_values.shape != (n_tp, n_tp):
            raise ConfigError(
                f"boundary table must be ({n_tp},{n_tp}), got {bdry_values.shape}")
        if n_zp < 2 or n_tp < 2:
            raise ConfigError("flow grid needs at least 2 nodes per axis")
        self.horizon = float(horizon)
        self.n_z = n_zp - 1
        self.n_t = n_tp - 1
        self.dt = self.horizon / self.n_t
        self.z_nodes = np.arange(n_zp) / self.n_z
        self.t_nodes = np.arange(n_tp) * self.dt
        self.init_values = init_values
        self.bdry_values = bdry_values
        if check:
            self._check()
        init_values.flags.writeable = False
        bdry_values.flags.writeable = False

    def _check(self):
        iv, bv = self.init_values, self.bdry_values
        tol = 1e-9
        if np.any(iv < -tol) or np.any(iv > 1 + tol) or \
                np.any(bv < -tol) or np.any(bv > 1 + tol):
            raise ConfigError("flow values escape [0,1]")
        if np.max(np.abs(iv[:, 0] - self.z_nodes)) > tol:
            raise ConfigError("initial rows must start at their z")
        if np.any(np.abs(np.diag(bv)) > tol):
            raise ConfigError("boundary rows must start at 0")
        if np.max(np.abs(bv[0] - iv[0])) > tol:
            raise ConfigError("corner rows (0,0) disagree")
        if np.any(np.diff(iv, axis=1) < -tol):
            raise ConfigError("flow not non-decreasing in t (initial rows)")
        for l in range(self.n_t + 1):
            if np.any(np.diff(bv[l, l:]) < -tol):
                raise ConfigError("flow not non-decreasing in t (boundary rows)")
        if np.any(np.diff(iv, axis=0) < -tol):
            raise ConfigError("flow not non-decreasing in z across initial rows")
        for j in range(self.n_t + 1):
            col = bv[: j + 1, j]
            if np.any(np.diff(col) > tol):
                raise ConfigError("flow not monotone across boundary rows")
            if col[0] > iv[0, j] + tol:
                raise ConfigError("boundary rows exceed the corner curve")

    # -- strict evaluation ------------------------------------------------

    def theta(self, gamma: BoundaryPoint, t: float) -> float:
        t0 = gamma.t0
        if t < t0 - 1e-12 or t > self.horizon + 1e-9:
            raise DomainError(f"(gamma={gamma}, t={t}) not admissible")
        if gamma.kind == "initial":
            if gamma.coord > 1 + 1e-12:
                raise DomainError(f"initial coordinate {gamma.coord} > 1")
            return self._eval_initial(gamma.coord, t)
        return self._eval_boundary(t0, t)

    # -- lenient vector evaluation (engines and kernels) -------------------

    def _t_weights(self, t):
        t = np.asarray(t, dtype=float)
        j = np.clip((t / self.dt).astype(int), 0, self.n_t - 1)
        mu = np.clip(t / self.dt - j, 0.0, 1.0)
        return j, mu

    def _eval_initial(self, z, t):
        iz = min(int(z * self.n_z), self.n_z - 1)
        a = z * self.n_z - iz
        j, mu = self._t_weights(t)
        iv = self.init_values
        lo = iv[iz, j] * (1 - mu) + iv[iz, j + 1] * mu
        hi = iv[iz + 1, j] * (1 - mu) + iv[iz + 1, j + 1] * mu
        out = lo * (1 - a) + hi * a
        return float(out) if np.ndim(out) == 0 else out

    def _eval_boundary(self, t0, t):
        l = min(int(t0 / self.dt), self.n_t - 1)
        lam = np.clip(t0 / self.dt - l, 0.0, 1.0)
        j, mu = self._t_weights(t)
        bv = self.bdry_values
        lo = bv[l, j] * (1 - mu) + bv[l, j + 1] * mu
        hi = bv[l + 1, j] * (1 - mu) + bv[l + 1, j + 1] * mu
        out = lo * (1 - lam) + hi * lam
        return float(out) if np.ndim(out) == 0 else out

    def _eval_boundary_many(self, s, t):
        """Boundary curves for vector start times s (zero-extended)."""
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        l = np.clip((s / self.dt).astype(int), 0, self.n_t - 1)
        lam = np.clip(s / self.dt - l, 0.0, 1.0)
        j, mu = self._t_weights(t)
        bv = self.bdry_values
        lo = bv[l, j] * (1 - mu) + bv[l, j + 1] * mu
        hi = bv[l + 1, j] * (1 - mu) + bv[l + 1, j + 1] * mu
        return lo * (1 - lam) + hi * lam

    def eval_gamma(self, gamma: BoundaryPoint, t):
        """Lenient vector evaluation along one curve."""
        if gamma.kind == "initial":
            return self._eval_initial(gamma.coord, t)
        return self._eval_boundary(gamma.coord, t)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def identity(horizon: float, n_z: int, n_t: int) -> "FlowGrid":
        """theta(gamma, t) = y0(gamma): frozen initial positions."""
        init = np.tile((np.arange(n_z + 1) / n_z)[:, None], (1, n_t + 1))
        bdry = np.zeros((n_t + 1, n_t + 1))
        return FlowGrid(horizon, init, bdry)

    @staticmethod
    def from_function(fn, horizon: float, n_z: int, n_t: int) -> "FlowGrid":
        """Sample theta(gamma, t) from a callable on the grid."""
        dt = horizon / n_t
        init = np.empty((n_z + 1, n_t + 1))
        bdry = np.zeros((n_t + 1, n_t + 1))
        for jz in range(n_z + 1):
            g = initial(jz / n_z)
            for jt in range(n_t + 1):
                init[jz, jt] = fn(g, jt * dt)
        for l in range(n_t + 1):
            g = boundary(l * dt)
            for jt in range(l, n_t + 1):
                bdry[l, jt] = fn(g, jt * dt)
        return FlowGrid(horizon, init, bdry)

    def gamma_grid(self):
        """All grid gamma points, ascending in the total order."""
        gammas = [initial(z) for z in self.z_nodes[::-1]]
        gammas += [boundary(l * self.dt) for l in range(1, self.n_t + 1)]
        return gammas

    def ordered_values(self) -> np.ndarray:
        """theta on the ordered gamma grid; NaN where inadmissible."""
        rows = [self.init_values[::-1]]
        bd = self.bdry_values[1:].copy()
        for l in range(1, self.n_t + 1):
            bd[l - 1, :l] = np.nan
        rows.append(bd)
        return np.concatenate(rows, axis=0)

    def save(self, path) -> None:
        np.savez(path, horizon=self.horizon, init_values=self.init_values,
                 bdry_values=self.bdry_values)

    @staticmethod
    def load(path) -> "FlowGrid":
        with np.load(path) as data:
            return FlowGrid(float(data["horizon"]), data["init_values"],
                            data["bdry_values"])

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("kind,coord,t,theta\n")
            for jz, z in enumerate(self.z_nodes):
                for jt, t in enumerate(self.t_nodes):
                    fh.write(f"initial,{float(z)!r},{float(t)!r},"
                             f"{float(self.init_values[jz, jt])!r}\n")
            for l in range(self.n_t + 1):
                for jt in range(l, self.n_t + 1):
                    fh.write(f"boundary,{float(self.t_nodes[l])!r},"
                             f"{float(self.t_nodes[jt])!r},"
                             f"{float(self.bdry_values[l, jt])!r}\n")


def tilde_w(flow: FlowGrid, field, z: float) -> LatpIntensity:
    """Rate field read along the flow: the hazard kernel of one particle.

    The s = 0 row follows the initial curve from z; rows s > 0 follow the
    boundary curve started at s and are independent of z.  The s -> 0+
    limit (the corner curve) is supplied for renewal-kernel quadrature,
    because the kernel is discontinuous at s = 0 whenever z > 0.
    """
    if not 0.0 <= z <= 1.0 + _TOL:
        raise DomainError(f"z must lie in [0,1], got {z}")

    def fn(s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(s.shape, t.shape)
        s = np.broadcast_to(s, shape)
        t = np.broadcast_to(t, shape)
        y_init = flow._eval_initial(z, t)
        y_bdry = flow._eval_boundary_many(s, t)
        y = np.where(s == 0.0, y_init, y_bdry)
        return field._values(y, t)

    return LatpIntensity(
        fn, min(flow.horizon, field.horizon), sup_norm=field.sup_norm,
        s0_limit=lambda t: field._values(
            np.asarray(flow._eval_boundary(0.0, t)), np.asarray(t, dtype=float)),
        label=f"tilde[{field.kind},z={z:g}]")


def _h_vector(h, spec: PopulationSpec) -> np.ndarray:
    if h is None:
        return np.ones(spec.n_classes)
    if hasattr(h, "per_class"):
        return np.asarray(h.per_class(spec), dtype=float)
    arr = np.asarray(h, dtype=float)
    if arr.shape != (spec.n_classes,):
        raise ConfigError(f"h must have one value per class, got shape {arr.shape}")
    return arr


class PhiEvaluator:
    """Limit distribution functions for one flow and one population spec.

    Position cells are the n_z flow cells; within a cell the survival
    probability is evaluated at the midpoint curve, and the class density
    contributes its exact cell mass, so the quadrature is exact at
    histogram-cell resolution.  The boundary-row Volterra kernel is shared
    across cells per class (it does not depend on the initial position);
    only the pre-first-arrival row differs per cell.
    """

    def __init__(self, flow: FlowGrid, spec: PopulationSpec):
        if abs(flow.horizon - spec.horizon) > 1e-9:
            raise ConfigError("flow and spec horizons disagree")
        self.flow = flow
        self.spec = spec
        n_c, n_tp = flow.n_z, flow.n_t + 1
        h = flow.dt
        tn = flow.t_nodes
        K = spec.n_classes

        edges = flow.z_nodes
        self.mass = np.empty((K, n_c))
        for k, cls in enumerate(spec.classes):
            self.mass[k] = cls.weight * cls.density.cell_masses(edges)

        # midpoint initial curves; linear-in-z interpolation makes the
        # midpoint value the row average
        theta_mid = 0.5 * (flow.init_values[:-1] + flow.init_values[1:])
        tt_cells = np.broadcast_to(tn, theta_mid.shape)

        diag = np.arange(n_tp)
        self.s0 = np.empty((K, n_c, n_tp))
        self.p_tables = []
        self.f = np.empty((K, n_c, n_tp))
        for k, cls in enumerate(spec.classes):
            w_mid = cls.field._values(theta_mid, tt_cells)
            inc0 = 0.5 * h * (w_mid[:, 1:] + w_mid[:, :-1])
            expo0 = np.concatenate([np.zeros((n_c, 1)), np.cumsum(inc0, axis=1)],
                                   axis=1)
            s0 = np.exp(-expo0)
            self.s0[k] = s0

            w_b = cls.field._values(flow.bdry_values,
                                    np.broadcast_to(tn, flow.bdry_values.shape))
            incb = 0.5 * h * (w_b[:, 1:] + w_b[:, :-1])
            expob = np.concatenate([np.zeros((n_tp, 1)), np.cumsum(incb, axis=1)],
                                   axis=1)
            expob -= expob[diag, diag][:, None]
            e_b = np.exp(-np.triu(expob))
            kern = w_b * e_b

            b = w_mid * s0
            f = np.zeros((n_c, n_tp))
            f[:, 0] = b[:, 0]
            denom = 1.0 - 0.5 * h * np.diag(kern)
            for j in range(1, n_tp):
                acc = 0.5 * f[:, 0] * kern[0, j]
                if j > 1:
                    acc = acc + f[:, 1:j] @ kern[1:j, j]
                f[:, j] = (b[:, j] + h * acc) / denom[j]
            self.f[k] = f

            g = f[:, :, None] * e_b[None, :, :]
            cum = np.cumsum(g, axis=1)
            trap = h * (cum - 0.5 * (g + g[:, :1, :]))
            p = s0[:, None, :] + trap
            valid = np.triu(np.ones((n_tp, n_tp))) > 0
            p = np.where(valid[None, :, :], np.clip(p, 0.0, 1.0), np.nan)
            p[:, diag, diag] = 1.0
            self.p_tables.append(p)

    # -- grids for the solver ----------------------------------------------

    def phi_grids_per_class(self):
        """(init_phi, bdry_phi) per class, class weight included.

        init_phi[k, r, j] = phi(1_k, (z_r, 0), t_j); bdry_phi[k, l, j] for
        j >= l is phi(1_k, (0, t_l), t_j).
        """
        K = self.spec.n_classes
        n_zp = self.flow.n_z + 1
        n_tp = self.flow.n_t + 1
        init_phi = np.zeros((K, n_zp, n_tp))
        bdry_phi = np.zeros((K, n_tp, n_tp))
        for k in range(K):
            weighted = self.mass[k][:, None] * self.s0[k]
            suffix = np.zeros((n_zp, n_tp))
            suffix[:-1] = np.cumsum(weighted[::-1], axis=0)[::-1]
            init_phi[k] = suffix
            bdry_phi[k] = np.einsum("c,cij->ij", self.mass[k],
                                    np.nan_to_num(self.p_tables[k]))
        return init_phi, bdry_phi

    def phi_grid(self, h=None):
        hv = _h_vector(h, self.spec)
        init_phi, bdry_phi = self.phi_grids_per_class()
        return (np.tensordot(hv, init_phi, axes=1),
                np.tensordot(hv, bdry_phi, axes=1))

    # -- point queries -------------------------------------------------------

    def phi(self, h, gamma: BoundaryPoint, t: float) -> float:
        hv = _h_vector(h, self.spec)
        t0 = gamma.t0
        if t < t0 - 1e-12 or t > self.flow.horizon + 1e-9:
            raise DomainError(f"(gamma={gamma}, t={t}) not admissible")
        t = min(max(t, 0.0), self.flow.horizon)
        if gamma.kind == "initial":
            return self._phi_initial(hv, gamma.coord, t)
        return self._phi_boundary(hv, t0, t)

    def _t_interp(self, t):
        h = self.flow.dt
        j = min(int(t / h), self.flow.n_t - 1)
        return j, np.clip(t / h - j, 0.0, 1.0)

    def _phi_initial(self, hv, y0, t):
        j, mu = self._t_interp(t)
        edges = self.flow.z_nodes
        total = 0.0
        for k, cls in enumerate(self.spec.classes):
            s0_t = self.s0[k][:, j] * (1 - mu) + self.s0[k][:, j + 1] * mu
            for c in range(self.flow.n_z):
                if edges[c + 1] <= y0 + 1e-15:
                    continue
                m = cls.weight * cls.density.mass(max(y0, edges[c]), edges[c + 1])
                total += hv[k] * m * s0_t[c]
        return float(total)

    def _phi_boundary(self, hv, t0, t):
        h = self.flow.dt
        l, lam = self._t_interp(t0)
        j, mu = self._t_interp(t)

        def cell(k, li, ji):
            # survival p(t_li, t_ji) summed over cells with masses
            if ji < li:
                ji = li
            p = self.p_tables[k][:, li, ji]
            return float(np.dot(self.mass[k], p))

        total = 0.0
        for k in range(self.spec.n_classes):
            if l == j:
                # same grid cell: interpolate from p = 1 on the diagonal
                # (l + 1 <= n_t always, since _t_interp clips to n_t - 1)
                base = cell(k, l, l + 1)
                slope = (float(np.sum(self.mass[k])) - base) / h
                val = float(np.sum(self.mass[k])) - slope * (t - t0)
            else:
                top = cell(k, l, j) * (1 - mu) + cell(k, l, j + 1) * mu
                bot = cell(k, l + 1, j) * (1 - mu) + cell(k, l + 1, j + 1) * mu
                val = top * (1 - lam) + bot * lam
            total += hv[k] * val
        return float(total)

    def survival_table(self, class_k: int, cell: int) -> SurvivalTable:
        """Per (class, cell) no-arrival table, as a latp SurvivalTable."""
        p = self.p_tables[class_k][cell]
        return SurvivalTable(grid=self.flow.t_nodes, p=p,
                             f=self.f[class_k, cell],
                             sup_norm=self.spec.classes[class_k].field.sup_norm,
                             label=f"class{class_k}/cell{cell}")


def phi_theta(flow: FlowGrid, spec: PopulationSpec, h, gamma: BoundaryPoint,
              t: float) -> float:
    """One-off phi_theta query; builds the evaluator, so prefer PhiEvaluator
    when querying many points."""
    return PhiEvaluator(flow, spec).phi(h, gamma, t)


def _project(horizon, init, bdry, n_z, n_t):
    """Clamp a flow iterate back into the admissible class; returns the
    projected arrays and the largest correction applied."""
    init = np.clip(init, 0.0, 1.0)
    bdry = np.clip(bdry, 0.0, 1.0)
    before = (init.copy(), bdry.copy())
    init[:, 0] = np.arange(n_z + 1) / n_z
    for l in range(n_t + 1):
        bdry[l, :l + 1] = 0.0
    init = np.maximum.accumulate(init, axis=1)
    bdry = np.maximum.accumulate(bdry, axis=1)
    for l in range(n_t + 1):
        bdry[l, :l] = 0.0
    init = np.maximum.accumulate(init, axis=0)
    for j in range(n_t + 1):
        bdry[: j + 1, j] = np.minimum.accumulate(
            np.minimum(bdry[: j + 1, j], init[0, j]))
    moved = max(float(np.max(np.abs(init - before[0]))),
                float(np.max(np.abs(bdry - before[1]))))
    return init, bdry, moved


@dataclass
class LimitSolution:
    """Solved limit flow with its cached phi evaluator."""

    spec: PopulationSpec
    flow: FlowGrid
    evaluator: PhiEvaluator
    residual: float
    residual_history: list
    iterations: int
    damping_used: float

    @property
    def spec_hash(self) -> str:
        return self.spec.fingerprint()

    def y(self, gamma: BoundaryPoint, t: float) -> float:
        return self.flow.theta(gamma, t)

    def phi(self, h, gamma: BoundaryPoint, t: float) -> float:
        return self.evaluator.phi(h, gamma, t)

    def to_csv(self, path) -> None:
        self.flow.to_csv(path)

    def save(self, path) -> None:
        np.savez(path, horizon=self.flow.horizon,
                 init_values=self.flow.init_values,
                 bdry_values=self.flow.bdry_values,
                 residual=self.residual,
                 residual_history=np.asarray(self.residual_history),
                 spec_hash=np.bytes_(self.spec_hash.encode()))

    @staticmethod
    def load(path, spec: PopulationSpec) -> "LimitSolution":
        with np.load(path) as data:
            stored = bytes(data["spec_hash"]).decode()
            if stored != spec.fingerprint():
                raise ConfigError(
                    f"cache was solved for spec {stored}, not {spec.fingerprint()}")
            flow = FlowGrid(float(data["horizon"]), data["init_values"],
                            data["bdry_values"])
            history = [float(r) for r in data["residual_history"]]
            return LimitSolution(spec=spec, flow=flow,
                                 evaluator=PhiEvaluator(flow, spec),
                                 residual=float(data["residual"]),
                                 residual_history=history,
                                 iterations=len(history),
                                 damping_used=float("nan"))


def _residual(flow: FlowGrid, upd_init, upd_bdry) -> float:
    res = float(np.max(np.abs(flow.init_values - upd_init)))
    for l in range(flow.n_t + 1):
        row = np.abs(flow.bdry_values[l, l:] - upd_bdry[l, l:])
        if len(row):
            res = max(res, float(np.max(row)))
    return res


def solve_y_c(spec: PopulationSpec, n_z: int = 20, n_t: int = 200,
              tol: float = 1e-8, max_iter: int = 80,
              damping: float = 1.0) -> LimitSolution:
    """Picard iteration for the unique flow with theta = 1 - phi_theta(W).

    Starts from the frozen flow theta_0(gamma, t) = y0(gamma).  On a
    residual increase the damping factor drops to 0.5 once.  Raises
    ConvergenceError with the residual history when the budget runs out.
    """
    if not 0 < damping <= 1:
        raise ConfigError(f"damping must lie in (0,1], got {damping}")
    flow = FlowGrid.identity(spec.horizon, n_z, n_t)
    alpha = damping
    history = []
    for it in range(1, max_iter + 1):
        ev = PhiEvaluator(flow, spec)
        phi_init, phi_bdry = ev.phi_grid()
        upd_init = 1.0 - phi_init
        upd_bdry = 1.0 - phi_bdry
        res = _residual(flow, upd_init, upd_bdry)
        history.append(res)
        log.debug("picard iteration %d: residual %.3e (alpha=%.2f)", it, res, alpha)
        if res < tol:
            flow._check()
            return LimitSolution(spec=spec, flow=flow, evaluator=ev,
                                 residual=res, residual_history=history,
                                 iterations=it, damping_used=alpha)
        if len(history) > 1 and res > history[-2] and alpha > 0.5:
            alpha = 0.5
            log.info("residual increased (%.3e -> %.3e); damping to %.2f",
                     history[-2], res, alpha)
        new_init = (1 - alpha) * flow.init_values + alpha * upd_init
        new_bdry = (1 - alpha) * flow.bdry_values + alpha * upd_bdry
        new_init, new_bdry, moved = _project(spec.horizon, new_init, new_bdry,
                                             n_z, n_t)
        if moved > 1e-10:
            log.info("isotonic projection active: moved %.3e", moved)
        flow = FlowGrid(spec.horizon, new_init, new_bdry, check=False)
    raise ConvergenceError(
        f"no fixed point after {max_iter} iterations "
        f"(last residual {history[-1]:.3e})", history)


@dataclass(frozen=True)
class OdeFormReport:
    max_residual: float
    argmax_gamma: str
    argmax_t: float
    n_z: int
    n_t: int


def verify_ode_form(sol: LimitSolution) -> OdeFormReport:
    """Residual of the integral form of the limit flow.

    Both sides of
      y_C(gamma, t) = y0 + int_{t0}^{t} int_{z >= y_C(gamma,s)} w dmu_s ds
    are evaluated on the grid, with mu_s read off through differences of
    phi along the gamma grid.  The quadrature is first order in dt.
    """
    flow, spec = sol.flow, sol.spec
    n_t = flow.n_t
    gammas = flow.gamma_grid()
    yvals = flow.ordered_values()
    n_rows = len(gammas)

    init_phi, bdry_phi = sol.evaluator.phi_grids_per_class()
    K = spec.n_classes
    phi_rows = np.empty((K, n_rows, n_t + 1))
    for k in range(K):
        phi_rows[k] = np.concatenate([init_phi[k][::-1], bdry_phi[k][1:]], axis=0)

    # integrand I[q, j] = flux through [y_C(gamma_q, t_j), 1]
    integrand = np.zeros((n_rows, n_t + 1))
    for j in range(n_t + 1):
        n_adm = flow.n_z + 1 + j  # ordered rows admissible at t_j
        y = yvals[:n_adm, j]
        mids = 0.5 * (y[1:] + y[:-1])
        flux = np.zeros(n_adm - 1)
        for k in range(K):
            w_mid = spec.classes[k].field._values(
                np.clip(mids, 0.0, 1.0), np.full(n_adm - 1, flow.t_nodes[j]))
            dm = phi_rows[k, 1:n_adm, j] - phi_rows[k, : n_adm - 1, j]
            flux += w_mid * np.clip(dm, 0.0, None)
        integrand[:n_adm, j] = np.concatenate([[0.0], np.cumsum(flux)])

    h = flow.dt
    worst = 0.0
    arg = ("", 0.0)
    for q, gamma in enumerate(gammas):
        j0 = 0 if gamma.kind == "initial" else int(round(gamma.coord / h))
        vals = integrand[q, j0:]
        if len(vals) < 1:
            continue
        rhs = gamma.y0 + np.concatenate(
            [[0.0], np.cumsum(0.5 * h * (vals[1:] + vals[:-1]))])
        resid = np.abs(yvals[q, j0:] - rhs)
        i = int(np.argmax(resid))
        if resid[i] > worst:
            worst = float(resid[i])
            arg = (str(gamma), float(flow.t_nodes[j0 + i]))
    return OdeFormReport(max_residual=worst, argmax_gamma=arg[0],
                         argmax_t=arg[1], n_z=flow.n_z, n_t=flow.n_t)


@dataclass(frozen=True)
class TaggedPath:
    """Limit path of one tagged particle: flow segments between resets."""

    flow: FlowGrid
    y_start: float
    jump_times: np.ndarray

    def value(self, t: float) -> float:
        """Right-continuous position at t."""
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        if k == 0:
            return self.flow._eval_initial(self.y_start, t)
        return self.flow._eval_boundary(self.jump_times[k - 1], t)

    def sample(self, ts) -> np.ndarray:
        return np.array([self.value(float(t)) for t in np.asarray(ts)])

    def jump_count(self, t: float | None = None) -> int:
        if t is None:
            return len(self.jump_times)
        return int(np.searchsorted(self.jump_times, t, side="right"))


def tagged_limit_path(sol: LimitSolution, field, y_start: float,
                      candidates) -> TaggedPath:
    """Thin one tagged limit path against its marked candidate stream.

    ``candidates = (times, marks)`` must be the particle's own stream with
    marks uniform on [0, sup_norm); sharing it with the finite-N engine
    couples the two paths.  Between jumps the particle rides the limit flow
    from its last reset point; a jump resets it to the boundary curve.
    """
    times, marks = candidates
    jumps = []
    last = -1.0
    fn = field._values
    for t, xi in zip(np.asarray(times).tolist(), np.asarray(marks).tolist()):
        if last < 0:
            y = sol.flow._eval_initial(y_start, t)
        else:
            y = sol.flow._eval_boundary(last, t)
        if xi < float(fn(np.float64(y), np.float64(t))):
            jumps.append(t)
            last = t
    return TaggedPath(flow=sol.flow, y_start=float(y_start),
                      jump_times=np.asarray(jumps))
