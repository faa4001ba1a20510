"""Point process with last-arrival-time dependent intensity.

The counting process has hazard omega(tau*, t) at time t, where tau* is the
last arrival time (0 before the first arrival).  It is Poisson exactly when
omega ignores its first argument.  Three independent evaluations of the
no-arrival probability p(s, t) = P(N(t) = N(s)) are provided:

  * exact path sampling by thinning (``sample_arrivals``),
  * a renewal Volterra solve for the arrival-rate density (``survival_solve``),
  * the explicit series over arrival configurations (``survival_series``),
    kept as a test oracle; each term reuses the previous term's inner
    integral, and the truncation error is bounded by
    (||omega|| s)^(kmax+1) / (kmax+1)!.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, EnvelopeBreach
from . import streams

# default thinning envelope margin over the declared sup-norm; guards
# against interpolation wobble in tabulated kernels
ENVELOPE_MARGIN = 1.05


class LatpIntensity:
    """Hazard kernel omega(s, t) on the triangle 0 <= s <= t <= horizon.

    ``fn(s, t)`` must be vectorized over numpy arrays.  ``kernel_s0`` is the
    right limit omega(0+, t): the hazard after an arrival at time 0.  For
    kernels continuous in s it equals omega(0, t) (the default); flow-induced
    kernels are discontinuous at s = 0 because the first row carries the
    initial-position curve, and they supply the boundary-curve limit instead.
    """

    def __init__(self, fn, horizon: float, sup_norm: float, s0_limit=None,
                 label: str = ""):
        if horizon <= 0:
            raise ConfigError(f"horizon must be positive, got {horizon}")
        if sup_norm < 0:
            raise ConfigError(f"sup_norm must be >= 0, got {sup_norm}")
        self._fn = fn
        self.horizon = float(horizon)
        self.sup_norm = float(sup_norm)
        self._s0_limit = s0_limit
        self.label = label or "omega"

    def __call__(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(s < -1e-12) or np.any(t > self.horizon + 1e-12) or np.any(s > t + 1e-12):
            raise DomainError(f"({s!r}, {t!r}) outside 0 <= s <= t <= {self.horizon}")
        out = np.asarray(self._fn(s, t), dtype=float)
        if out.ndim == 0:
            return float(out)
        return out

    def kernel_s0(self, t):
        if self._s0_limit is None:
            return self(np.zeros_like(np.asarray(t, dtype=float)), t)
        t = np.asarray(t, dtype=float)
        out = np.asarray(self._s0_limit(t), dtype=float)
        return float(out) if out.ndim == 0 else out

    def check_regularity(self, n: int = 200):
        """Grid scan of the kernel: sup-norm excess and continuity moduli.

        Raises on negative values.  Returns (sup_excess, ds_modulus,
        dt_modulus): a nonpositive excess means the declared sup-norm
        dominates, and the moduli are the largest adjacent-node jumps in
        each argument (the s-modulus is taken over s > 0, since kernels
        pulled back from a flow are allowed a jump at s = 0).
        """
        ts = np.linspace(0.0, self.horizon, n + 1)
        ss, tt = np.meshgrid(ts, ts, indexing="ij")
        vals = np.asarray(self._fn(np.minimum(ss, tt), tt), dtype=float)
        tri = vals[np.triu_indices(n + 1)]
        if np.any(tri < -1e-12):
            raise ConfigError(f"{self.label}: negative hazard on the domain")
        dt_mod = 0.0
        for i in range(n + 1):
            row = vals[i, i:]
            if len(row) > 1:
                dt_mod = max(dt_mod, float(np.max(np.abs(np.diff(row)))))
        ds_mod = 0.0
        for j in range(2, n + 1):
            col = vals[1: j + 1, j]  # skip the s = 0 row
            if len(col) > 1:
                ds_mod = max(ds_mod, float(np.max(np.abs(np.diff(col)))))
        return float(tri.max(initial=0.0) - self.sup_norm), ds_mod, dt_mod


def constant_intensity(c: float, horizon: float) -> LatpIntensity:
    return LatpIntensity(lambda s, t: np.full(np.broadcast_shapes(np.shape(s), np.shape(t)), float(c)),
                         horizon, sup_norm=float(c), label=f"const[{c}]")


def zero_intensity(horizon: float) -> LatpIntensity:
    return constant_intensity(0.0, horizon)


def last_arrival_affine(base: float, slope: float, horizon: float) -> LatpIntensity:
    """omega(s, t) = base + slope * s."""
    hi = max(base, base + slope * horizon)
    lo = min(base, base + slope * horizon)
    if lo < 0:
        raise ConfigError(f"negative hazard: base={base}, slope={slope}")
    return LatpIntensity(lambda s, t: base + slope * s + 0.0 * t, horizon,
                         sup_norm=hi, label=f"affine[{base}+{slope}s]")


def flow_pullback_affine(base: float, slope: float, z: float,
                         horizon: float) -> LatpIntensity:
    """Affine rate field read along the closed-form unit-rate flow.

    The flow is theta((z,0), t) = 1 - (1-z) e^{-t} for the initial curve and
    theta((0,s), t) = 1 - e^{-(t-s)} for boundary curves, which is the exact
    limit flow of a unit-rate uniform population.  The resulting kernel is
      omega(0, t) = base + slope * (1 - (1-z) e^{-t}),
      omega(s, t) = base + slope * (1 - e^{-(t-s)})   for s > 0,
    discontinuous at s = 0 whenever z > 0; the s->0+ limit is supplied as
    the renewal kernel row.
    """
    if base < 0 or slope < 0:
        raise ConfigError("flow pullback requires base, slope >= 0")
    if not 0.0 <= z <= 1.0:
        raise ConfigError(f"z must lie in [0,1], got {z}")

    def fn(s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        initial = base + slope * (1.0 - (1.0 - z) * np.exp(-t))
        boundary = base + slope * (1.0 - np.exp(-(t - s)))
        return np.where(s == 0.0, initial, boundary)

    sup = base + slope * (1.0 - (1.0 - max(z, 0.0)) * np.exp(-horizon))
    sup = max(sup, base + slope * (1.0 - np.exp(-horizon)))
    return LatpIntensity(fn, horizon, sup_norm=sup,
                         s0_limit=lambda t: base + slope * (1.0 - np.exp(-t)),
                         label=f"flow-affine[{base}+{slope}y,z={z}]")


@dataclass(frozen=True)
class ArrivalSequence:
    """Strictly increasing arrival times in (0, horizon]."""

    times: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=float)
        if t.ndim != 1:
            raise ConfigError("times must be one-dimensional")
        if len(t) and (t[0] <= 0 or np.any(np.diff(t) <= 0) or t[-1] > self.horizon + 1e-12):
            raise ConfigError("times must be strictly increasing in (0, horizon]")
        t.flags.writeable = False
        object.__setattr__(self, "times", t)

    def count(self, t: float) -> int:
        return int(np.searchsorted(self.times, t, side="right"))

    def no_arrival_in(self, s: float, t: float) -> bool:
        return self.count(t) == self.count(s)


def omega_integral(omega: LatpIntensity, t0: float, t: float,
                   step: float = 1e-3) -> float:
    """Exposure Omega(t0, t) = integral of omega(t0, u) over [t0, t].

    Composite trapezoid at the requested step.  Note Omega is not additive
    in general: the first slot is the last arrival time, so
    Omega(a, b) + Omega(b, c) integrates two different hazard rows.
    """
    if t0 > t + 1e-12:
        raise DomainError(f"need t0 <= t, got ({t0}, {t})")
    if t <= t0:
        return 0.0
    n = max(1, int(np.ceil((t - t0) / step)))
    us = np.linspace(t0, t, n + 1)
    vals = omega(np.full(n + 1, t0), us)
    return float(np.trapezoid(vals, us))


def sample_arrivals(omega: LatpIntensity, horizon: float | None = None,
                    envelope: float | None = None,
                    rng: np.random.Generator | None = None,
                    seed: int | None = None, replica: int = 0) -> ArrivalSequence:
    """Exact thinning sample of one path.

    Candidates arrive at the envelope rate with marks uniform on
    [0, envelope); a candidate at u is accepted iff its mark falls below
    omega(tau*, u) for the current last arrival tau*.  The envelope must
    dominate the hazard; an acceptance evaluation above it is a hard fault.
    """
    horizon = omega.horizon if horizon is None else float(horizon)
    if horizon > omega.horizon + 1e-12:
        raise DomainError(f"horizon {horizon} exceeds kernel horizon {omega.horizon}")
    envelope = ENVELOPE_MARGIN * omega.sup_norm if envelope is None else float(envelope)
    if envelope < omega.sup_norm - 1e-12:
        raise DomainError(
            f"envelope {envelope} below sup_norm {omega.sup_norm}")
    if rng is None:
        if seed is None:
            raise ConfigError("sample_arrivals needs rng or seed")
        rng = streams.substream(seed, streams.LATP, replica)
    times, marks = streams.candidate_batch(rng, envelope, horizon)
    accepted = []
    tau_star = 0.0
    breach = envelope * (1.0 + 1e-9) + 1e-12
    fn = omega._fn
    for u, xi in zip(times.tolist(), marks.tolist()):
        a = float(fn(tau_star, u))
        if a > breach:
            raise EnvelopeBreach(
                f"{omega.label}: hazard {a} above envelope {envelope} at "
                f"(s={tau_star}, t={u})")
        if xi < a:
            accepted.append(u)
            tau_star = u
    return ArrivalSequence(times=np.asarray(accepted), horizon=horizon)


@dataclass(frozen=True)
class SurvivalTable:
    """No-arrival probabilities p[i, j] ~= P(N(t_j) = N(t_i)) on a grid.

    Entries below the diagonal are NaN.  The diagonal is exactly 1, rows are
    non-increasing in j and columns non-decreasing in i as computed (up to
    the [0,1] clamp), and f holds the arrival-rate density on the grid.
    """

    grid: np.ndarray
    p: np.ndarray
    f: np.ndarray
    sup_norm: float
    label: str = ""

    def __post_init__(self):
        for name in ("grid", "p", "f"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        m = len(self.grid)
        iu = np.triu_indices(m)
        vals = self.p[iu]
        if np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
            raise ConfigError("survival table escapes [0,1]")
        if np.any(np.diag(self.p) != 1.0):
            raise ConfigError("survival table diagonal must be exactly 1")
        slack = 1e-9
        for i in range(m):
            if np.any(np.diff(self.p[i, i:]) > slack):
                raise ConfigError("survival table increases in t")
        for j in range(m):
            if np.any(np.diff(self.p[: j + 1, j]) < -slack):
                raise ConfigError("survival table decreases in the start time")

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def at(self, i: int, j: int) -> float:
        if j < i:
            raise DomainError(f"need i <= j, got ({i}, {j})")
        return float(self.p[i, j])

    def value(self, s: float, t: float) -> float:
        """Bilinear interpolation of p at (s, t), exact on grid nodes."""
        if t < s - 1e-12:
            raise DomainError(f"need s <= t, got ({s}, {t})")
        if s < -1e-12 or t > self.grid[-1] + 1e-9:
            raise DomainError(f"({s}, {t}) outside the table grid")
        h = self.step
        m = len(self.grid) - 1
        i = min(int(s / h), m - 1) if m else 0
        j = min(int(t / h), m - 1) if m else 0
        a = np.clip(s / h - i, 0.0, 1.0)
        b = np.clip(t / h - j, 0.0, 1.0)
        if i == j:
            # triangle cell touching the diagonal: interpolate from p = 1
            # at t = s along the hazard of this cell
            slope = (1.0 - self.p[i, j + 1]) / h if j + 1 <= m else 0.0
            return float(max(0.0, 1.0 - slope * (t - s)))

        def pv(ii, jj):
            return self.p[min(ii, jj), jj]

        top = pv(i, j) * (1 - b) + pv(i, j + 1) * b
        bot = pv(i + 1, j) * (1 - b) + pv(i + 1, j + 1) * b
        return float(top * (1 - a) + bot * a)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("s,t,p\n")
            m = len(self.grid)
            for i in range(m):
                for j in range(i, m):
                    fh.write(f"{float(self.grid[i])!r},{float(self.grid[j])!r},"
                             f"{float(self.p[i, j])!r}\n")


def _exposure_rows(row_vals: np.ndarray, h: float) -> np.ndarray:
    """Cumulative trapezoid of each row from its own diagonal node.

    ``row_vals[v, j]`` is the hazard omega(t_v, t_j); the result is
    Omega[v, j] = integral over [t_v, t_j].  Entries left of the diagonal
    are meaningless.
    """
    m = row_vals.shape[0]
    inc = 0.5 * h * (row_vals[:, 1:] + row_vals[:, :-1])
    omega = np.zeros_like(row_vals)
    omega[:, 1:] = np.cumsum(inc, axis=1)
    # rebase each row at its diagonal
    omega -= np.take_along_axis(omega, np.arange(m)[:, None], axis=1)
    return omega


def survival_solve(omega: LatpIntensity, grid: np.ndarray) -> SurvivalTable:
    """Volterra solve for the arrival-rate density f and the table p.

    f(u) = omega(0,u) e^{-Omega(0,u)} + int_0^u f(v) K(v,u) dv with kernel
    K(v,u) = omega(v,u) e^{-Omega(v,u)}, then
    p(s,t) = e^{-Omega(0,t)} + int_0^s f(u) e^{-Omega(u,t)} du,
    trapezoid throughout.  The v = 0 kernel node uses the s->0+ hazard limit
    (an arrival at time 0, not the pre-first-arrival row).
    """
    grid = np.asarray(grid, dtype=float)
    m = len(grid) - 1
    if m < 1 or abs(grid[0]) > 1e-12:
        raise DomainError("grid must start at 0 with at least two nodes")
    h = grid[1] - grid[0]
    if np.max(np.abs(np.diff(grid) - h)) > 1e-9 * max(h, 1.0):
        raise DomainError("grid must be uniform")
    if grid[-1] > omega.horizon + 1e-9:
        raise DomainError("grid exceeds the kernel horizon")
    if h * omega.sup_norm >= 1.0:
        raise DomainError(
            f"grid too coarse: h*sup_norm = {h * omega.sup_norm:.3g} >= 1")

    ss, tt = np.meshgrid(grid, grid, indexing="ij")
    w = np.asarray(omega._fn(np.minimum(ss, tt), tt), dtype=float)
    # forcing row: hazard before the first arrival
    w0 = np.asarray(omega._fn(np.zeros(m + 1), grid), dtype=float)
    # kernel rows: hazard after an arrival at t_v; v = 0 takes the limit
    w[0] = omega.kernel_s0(grid)

    expo = _exposure_rows(w, h)
    expo0 = np.concatenate([[0.0], np.cumsum(0.5 * h * (w0[1:] + w0[:-1]))])
    eker = np.exp(-np.triu(expo))
    e0 = np.exp(-expo0)
    kern = w * eker  # K[v, j], valid v <= j
    b = w0 * e0

    f = np.zeros(m + 1)
    f[0] = b[0]
    for j in range(1, m + 1):
        acc = 0.5 * f[0] * kern[0, j]
        if j > 1:
            acc += float(np.dot(f[1:j], kern[1:j, j]))
        f[j] = (b[j] + h * acc) / (1.0 - 0.5 * h * kern[j, j])

    g = f[:, None] * eker                      # f(v) e^{-Omega(v,t_j)}
    cum = np.cumsum(g, axis=0)
    trap = h * (cum - 0.5 * (g + g[0][None, :]))   # int_0^{t_i} over v
    p = e0[None, :] + trap
    p = np.where(np.triu(np.ones_like(p)) > 0, np.clip(p, 0.0, 1.0), np.nan)
    np.fill_diagonal(p, 1.0)
    return SurvivalTable(grid=grid, p=p, f=f, sup_norm=omega.sup_norm,
                         label=omega.label)


def survival_series(omega: LatpIntensity, s: float, t: float,
                    kmax: int = 25, step: float = 2.5e-3) -> float:
    """Truncated series for P(N(t) = N(s)).

    Term k integrates the density of k arrivals in (0, s] times the
    no-arrival factor from the last arrival to t.  The k-th arrival-time
    density g_k is built iteratively from g_{k-1}, so the nested simplex
    integrals cost one matrix-vector product per term.
    """
    if s > t + 1e-12:
        raise DomainError(f"need s <= t, got ({s}, {t})")
    if s < -1e-12 or t > omega.horizon + 1e-9:
        raise DomainError(f"({s}, {t}) outside [0, {omega.horizon}]")
    if kmax < 0:
        raise DomainError("kmax must be >= 0")
    s = min(s, t)
    n1 = max(1, int(np.ceil(s / step))) if s > 0 else 0
    inner = np.linspace(0.0, s, n1 + 1)
    if t > s + 1e-12:
        n2 = max(1, int(np.ceil((t - s) / step)))
        grid = np.concatenate([inner, np.linspace(s, t, n2 + 1)[1:]])
    else:
        grid = inner
    mfull = len(grid)

    ss, tt = np.meshgrid(grid, grid, indexing="ij")
    w = np.asarray(omega._fn(np.minimum(ss, tt), tt), dtype=float)
    w0 = np.asarray(omega._fn(np.zeros(mfull), grid), dtype=float)
    w[0] = omega.kernel_s0(grid)

    dg = np.diff(grid)
    inc = 0.5 * dg[None, :] * (w[:, 1:] + w[:, :-1])
    expo = np.cumsum(np.concatenate([np.zeros((mfull, 1)), inc], axis=1), axis=1)
    expo -= np.take_along_axis(expo, np.arange(mfull)[:, None], axis=1)
    expo0 = np.concatenate([[0.0], np.cumsum(0.5 * dg * (w0[1:] + w0[:-1]))])

    i_t = mfull - 1
    total = float(np.exp(-expo0[i_t]))  # k = 0: no arrival up to t
    if kmax == 0 or n1 == 0:
        return total

    nx = n1 + 1  # nodes of [0, s]
    # trapezoid weights of int_0^{u_j} dv on the inner grid
    tw = np.zeros((nx, nx))
    for j in range(1, nx):
        tw[j, :j + 1] = np.concatenate([[0.5], np.ones(j - 1), [0.5]]) * (s / n1)
    kern = (w[:nx, :nx] * np.exp(-expo[:nx, :nx]))
    step_mat = tw * kern.T  # A[j, v] = weight * K(v, u_j)

    # weights of int_0^s g(u) e^{-Omega(u, t)} du
    wt_full = np.concatenate([[0.5], np.ones(n1 - 1), [0.5]]) * (s / n1)
    tail = wt_full * np.exp(-expo[:nx, i_t])

    g = w0[:nx] * np.exp(-expo0[:nx])  # first-arrival density g_1
    total += float(np.dot(tail, g))
    for _ in range(2, kmax + 1):
        g = step_mat @ g
        total += float(np.dot(tail, g))
    return total


@dataclass(frozen=True)
class DerivativeReport:
    """Worst finite-difference violations of the survival-probability bounds.

    All four values are excesses: nonpositive means the bound held on the
    grid.  dt_sign / dt_excess check 0 <= -dp/dt <= ||omega||, and ds_sign /
    ds_excess check 0 <= dp/ds <= ||omega|| p.  The caller supplies the O(h)
    tolerance.
    """

    dt_sign: float
    dt_excess: float
    ds_sign: float
    ds_excess: float
    step: float

    def max_violation(self) -> float:
        return max(self.dt_sign, self.dt_excess, self.ds_sign, self.ds_excess)


def derivative_bound_check(table: SurvivalTable,
                           omega: LatpIntensity) -> DerivativeReport:
    p = table.p
    h = table.step
    sup = omega.sup_norm
    m = len(table.grid) - 1
    dt_sign = 0.0
    dt_excess = 0.0
    ds_sign = 0.0
    ds_excess = 0.0
    for i in range(m + 1):
        row = p[i, i:m + 1]
        if len(row) > 1:
            d = np.diff(row) / h
            dt_sign = max(dt_sign, float(d.max(initial=-np.inf)))
            dt_excess = max(dt_excess, float((-d - sup).max(initial=-np.inf)))
    for j in range(1, m + 1):
        col = p[: j + 1, j]
        d = np.diff(col) / h
        ds_sign = max(ds_sign, float((-d).max(initial=-np.inf)))
        ds_excess = max(ds_excess, float((d - sup * col[:-1]).max(initial=-np.inf)))
    return DerivativeReport(dt_sign=dt_sign, dt_excess=dt_excess,
                            ds_sign=ds_sign, ds_excess=ds_excess, step=h)
