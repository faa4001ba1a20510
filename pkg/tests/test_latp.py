import math

import numpy as np
import pytest

from rankflow import (ArrivalSequence, ConfigError, DomainError,
                      EnvelopeBreach, LatpIntensity, derivative_bound_check,
                      omega_integral, sample_arrivals, survival_series,
                      survival_solve)
from rankflow.latp import (constant_intensity, flow_pullback_affine,
                           last_arrival_affine, zero_intensity)

GRID = np.linspace(0.0, 1.0, 201)


def elapsed_intensity(horizon):
    # omega(s, u) = u - s
    return LatpIntensity(lambda s, t: t - s, horizon, sup_norm=horizon,
                         label="elapsed")


def test_omega_integral_zero():
    assert omega_integral(zero_intensity(1.0), 0.0, 0.7) == 0.0


def test_omega_integral_constant():
    assert omega_integral(constant_intensity(2.0, 1.0), 0.0, 0.5) == pytest.approx(1.0)


def test_omega_integral_elapsed_closed_form():
    # int_{t0}^{t} (u - t0) du = (t - t0)^2 / 2 = 0.32; trapezoid is exact
    # for a linear integrand, so only float error remains
    val = omega_integral(elapsed_intensity(1.0), 0.2, 1.0, step=1e-3)
    assert val == pytest.approx(0.32, abs=1e-12)


def test_omega_integral_order_error():
    with pytest.raises(DomainError):
        omega_integral(constant_intensity(1.0, 1.0), 0.5, 0.2)


def test_sample_zero_intensity_empty():
    arr = sample_arrivals(zero_intensity(1.0), seed=0)
    assert len(arr.times) == 0


def test_sample_constant_poisson_count():
    # arrival count over [0, T] is Poisson(cT)
    c, reps = 2.0, 10_000
    om = constant_intensity(c, 1.0)
    counts = np.array([len(sample_arrivals(om, seed=1, replica=r).times)
                       for r in range(reps)])
    se = math.sqrt(c / reps)
    assert abs(counts.mean() - c) <= 3 * se


def test_sample_one_plus_s_first_arrival():
    # P(no arrival by 1) = exp(-Omega(0,1)) and omega(0, u) = 1
    om = last_arrival_affine(1.0, 1.0, 1.0)
    reps = 10_000
    hits = sum(len(sample_arrivals(om, seed=2, replica=r).times) == 0
               for r in range(reps))
    p = math.exp(-1.0)
    se = math.sqrt(p * (1 - p) / reps)
    assert abs(hits / reps - p) <= 3 * se


def test_sample_envelope_validation():
    om = constant_intensity(2.0, 1.0)
    with pytest.raises(DomainError):
        sample_arrivals(om, envelope=1.0, seed=0)


def test_sample_envelope_breach_is_hard_fault():
    lying = LatpIntensity(lambda s, t: 2.0 + 0 * t, 1.0, sup_norm=0.5)
    with pytest.raises(EnvelopeBreach):
        sample_arrivals(lying, seed=0)


def test_arrival_sequence_must_increase():
    with pytest.raises(ConfigError):
        ArrivalSequence(times=np.array([0.2, 0.2]), horizon=1.0)


def test_solve_zero():
    tab = survival_solve(zero_intensity(1.0), GRID)
    iu = np.triu_indices(len(GRID))
    assert np.all(tab.p[iu] == 1.0)
    assert np.all(tab.f == 0.0)


def test_solve_constant_closed_form():
    tab = survival_solve(constant_intensity(2.0, 1.0), GRID)
    h = tab.step
    assert tab.p[0, 100] == pytest.approx(math.exp(-1.0), abs=5 * h ** 2)
    # interior start: p(s, t) = exp(-c (t - s))
    assert tab.p[60, 160] == pytest.approx(math.exp(-1.0), abs=5 * h ** 2)


def test_solve_rejects_bad_grids():
    om = constant_intensity(1.0, 1.0)
    with pytest.raises(DomainError):
        survival_solve(om, np.array([0.0, 0.1, 0.3]))
    with pytest.raises(DomainError):
        survival_solve(om, np.array([0.1, 0.2, 0.3]))


def test_series_kmax0_is_no_arrival_term():
    om = last_arrival_affine(1.0, 1.0, 1.0)
    val = survival_series(om, 0.5, 1.0, kmax=0, step=1e-3)
    assert val == pytest.approx(math.exp(-1.0), abs=1e-9)  # Omega(0,1) = 1


def test_series_constant_total_mass():
    # sum over k of P(k arrivals by s, none after) at t = s is 1
    om = constant_intensity(1.0, 1.0)
    val = survival_series(om, 0.5, 0.5, kmax=30, step=1 / 400)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_series_constant_truncation_negligible():
    # the k-truncation bound (||omega|| s)^(kmax+1)/(kmax+1)! is sub-1e-12
    # at kmax = 30, so the residual error is pure quadrature, O(step^2)
    c, s = 1.0, 0.5
    assert (c * s) ** 31 / math.factorial(31) < 1e-12
    om = constant_intensity(c, 1.0)
    for step, tol in ((1e-2, 5e-6), (1e-3, 5e-8)):
        val = survival_series(om, s, s, kmax=30, step=step)
        assert abs(val - 1.0) <= 1e-12 + tol


def test_series_constant_closed_form():
    om = constant_intensity(1.0, 1.0)
    val = survival_series(om, 0.5, 1.0, kmax=20, step=1 / 2000)
    assert val == pytest.approx(math.exp(-0.5), abs=1e-8)


@pytest.mark.parametrize("make", [
    lambda: constant_intensity(2.0, 1.0),
    lambda: last_arrival_affine(1.0, 1.0, 1.0),
    lambda: flow_pullback_affine(0.6, 0.9, 0.3, 1.0),
], ids=["const2", "one_plus_s", "flow_affine"])
def test_series_matches_solve(make):
    om = make()
    grid = np.linspace(0, 1, 401)
    tab = survival_solve(om, grid)
    h = tab.step
    for i, j in [(0, 400), (0, 200), (100, 300), (200, 400), (160, 160)]:
        ref = survival_series(om, grid[i], grid[j], kmax=25, step=h)
        assert abs(tab.p[i, j] - ref) <= 1e-5 + 5 * h ** 2


def test_table_monotonicity_exact():
    om = flow_pullback_affine(0.6, 0.9, 0.3, 1.0)
    tab = survival_solve(om, GRID)
    m = len(GRID)
    for i in range(m):
        row = tab.p[i, i:]
        assert np.all(np.diff(row) <= 1e-12)
    for j in range(m):
        col = tab.p[: j + 1, j]
        assert np.all(np.diff(col) >= -1e-12)
    assert np.all(np.diag(tab.p) == 1.0)


def test_grid_convergence_second_order():
    # halving h cuts the gap to a fine reference by >= 3x
    for om in (last_arrival_affine(1.0, 1.0, 1.0),
               flow_pullback_affine(0.6, 0.9, 0.3, 1.0)):
        ref = survival_solve(om, np.linspace(0, 1, 3201))
        errs = []
        for m in (100, 200):
            tab = survival_solve(om, np.linspace(0, 1, m + 1))
            stride = 3200 // m
            sub = ref.p[::stride, ::stride]
            iu = np.triu_indices(m + 1)
            errs.append(np.max(np.abs(tab.p[iu] - sub[iu])))
        assert errs[0] / errs[1] >= 3.0


def test_sampler_matches_solver_lattice():
    om = last_arrival_affine(1.0, 1.0, 1.0)
    tab = survival_solve(om, GRID)
    reps = 10_000
    nodes = [0, 50, 100, 150, 200]
    pairs = [(i, j) for i in nodes for j in nodes if j >= i]
    hits = np.zeros(len(pairs))
    for r in range(reps):
        arr = sample_arrivals(om, seed=3, replica=r)
        for q, (i, j) in enumerate(pairs):
            hits[q] += arr.no_arrival_in(GRID[i], GRID[j])
    for q, (i, j) in enumerate(pairs):
        p_hat = hits[q] / reps
        se = math.sqrt(max(p_hat * (1 - p_hat), 1e-12) / reps)
        assert abs(p_hat - tab.p[i, j]) <= 4 * se + 5 * tab.step ** 2


def test_derivative_bounds_zero():
    tab = survival_solve(zero_intensity(1.0), GRID)
    rep = derivative_bound_check(tab, zero_intensity(1.0))
    assert rep.max_violation() <= 0.0


def test_derivative_bounds_constant():
    # -dp/dt = c p <= c exactly in the continuum
    om = constant_intensity(2.0, 1.0)
    tab = survival_solve(om, GRID)
    rep = derivative_bound_check(tab, om)
    tol = 2.0 * tab.step * (1 + om.sup_norm) ** 2
    assert rep.max_violation() <= tol


def test_derivative_bounds_one_plus_s():
    om = last_arrival_affine(1.0, 1.0, 1.0)
    tab = survival_solve(om, GRID)
    rep = derivative_bound_check(tab, om)
    tol = 2.0 * tab.step * (1 + om.sup_norm) ** 2
    assert rep.max_violation() <= tol


def test_table_value_interpolation():
    om = constant_intensity(1.0, 1.0)
    tab = survival_solve(om, GRID)
    assert tab.value(0.25, 0.75) == pytest.approx(math.exp(-0.5), abs=1e-4)
    assert tab.value(0.4, 0.4) == 1.0
    with pytest.raises(DomainError):
        tab.value(0.5, 0.2)


def test_regularity_scan_shipped_kernels():
    # continuity by bounded grid finite differences; the flow pullback may
    # jump only at s = 0 (its initial row carries the starting position)
    h = 1.0 / 200
    for om, lip in ((constant_intensity(2.0, 1.0), 0.0),
                    (last_arrival_affine(1.0, 1.0, 1.0), 1.0),
                    (flow_pullback_affine(0.6, 0.9, 0.3, 1.0), 0.9)):
        excess, ds_mod, dt_mod = om.check_regularity(n=200)
        assert excess <= 1e-12
        assert ds_mod <= lip * h + 1e-12
        assert dt_mod <= lip * h + 1e-12


def test_regularity_rejects_negative_kernel():
    bad = LatpIntensity(lambda s, t: t - s - 0.5, 1.0, sup_norm=0.5)
    with pytest.raises(ConfigError):
        bad.check_regularity()


def test_survival_table_constructor_rejects_nonmonotone():
    import dataclasses
    tab = survival_solve(constant_intensity(1.0, 1.0), np.linspace(0, 1, 11))
    broken = tab.p.copy()
    broken[0, 5] = broken[0, 4] + 1e-3  # increase in t
    with pytest.raises(ConfigError):
        dataclasses.replace(tab, p=broken)


def test_table_csv_export(tmp_path):
    tab = survival_solve(constant_intensity(1.0, 1.0), np.linspace(0, 1, 11))
    path = tmp_path / "table.csv"
    tab.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "s,t,p"
    assert len(lines) == 1 + 11 * 12 // 2
