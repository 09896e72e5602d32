"""Representation-formula estimators and the quadrature oracle."""
from __future__ import annotations

import math

import numpy as np
import pytest

from rbmlab import estimators as est
from rbmlab import geometry as geo
from rbmlab.errors import QuadratureError
from rbmlab.geometry import TangentVector

HL = geo.half_line()
GAUSS = est.scalar_field("gauss")
CONST = est.scalar_field("const")
PHI = est.one_form("gauss-grad")


def _v(x, comps):
    return TangentVector(base=np.atleast_1d(np.asarray(x, float)), components=np.atleast_1d(np.asarray(comps, float)))


def test_conservation_exact():
    e = est.neumann_heat_mc(HL, CONST, 1.0, [0.5], 500, 1e-2, seed=0)
    assert e.mean == 1.0
    assert e.stderr == 0.0


def test_short_time_recovers_initial_condition():
    e = est.neumann_heat_mc(HL, GAUSS, 1e-4, [0.5], 4000, 1e-5, seed=1)
    f_x = float(GAUSS.value(np.array([0.5])))
    assert abs(e.mean - f_x) <= max(3 * e.stderr, 1e-3)


def test_neumann_matches_image_kernel():
    e = est.neumann_heat_mc(HL, GAUSS, 1.0, [0.5], 40_000, 1e-3, seed=2)
    oracle = est.image_kernel_oracle("neumann", 1.0, 0.5, GAUSS)
    assert abs(e.mean - oracle) <= 3 * e.stderr


def test_neumann_respects_maximum_principle():
    e = est.neumann_heat_mc(HL, GAUSS, 0.7, [0.3], 2000, 1e-2, seed=3)
    assert 0.0 <= e.mean <= 1.0


def test_neumann_deterministic_rerun():
    a = est.neumann_heat_mc(HL, GAUSS, 0.5, [0.5], 5000, 1e-2, seed=4)
    b = est.neumann_heat_mc(HL, GAUSS, 0.5, [0.5], 5000, 1e-2, seed=4)
    assert a.mean == b.mean and a.stderr == b.stderr and a.config_digest == b.config_digest
    c = est.neumann_heat_mc(HL, GAUSS, 0.5, [0.5], 5000, 1e-2, seed=5)
    assert c.config_digest != a.config_digest


def test_disk_estimator_internal_consistency():
    disk = geo.flat_disk()
    e = est.neumann_heat_mc(disk, CONST, 0.5, [0.3, 0.0], 400, 1e-2, seed=5)
    assert e.mean == 1.0
    e = est.neumann_heat_mc(disk, GAUSS, 1e-3, [0.3, 0.0], 2000, 1e-4, seed=6)
    f_x = float(GAUSS.value(np.array([0.3, 0.0])))
    assert abs(e.mean - f_x) <= max(3 * e.stderr, 2e-3)


def test_one_form_zero_cases():
    zero = est.one_form("zero")
    e = est.one_form_mc(HL, zero, 0.5, _v(0.5, 1.0), 200, 1e-2, seed=7)
    assert e.mean == 0.0
    e = est.one_form_mc(HL, PHI, 0.5, _v(0.5, 0.0), 200, 1e-2, seed=8)
    assert e.mean == 0.0


def test_one_form_matches_gradient_oracle():
    e = est.one_form_mc(HL, PHI, 1.0, _v(0.5, 1.0), 40_000, 1e-3, seed=9)
    oracle = est.image_kernel_gradient("neumann", 1.0, 0.5, GAUSS)
    assert abs(e.mean - oracle) <= 3 * e.stderr


def test_one_form_rejects_incompatible_boundary():
    bad = est.OneForm("bad", components=lambda x: np.ones_like(np.asarray(x, dtype=float)))
    with pytest.raises(ValueError):
        est.one_form_mc(HL, bad, 0.5, _v(0.5, 1.0), 100, 1e-2)


def test_one_form_linearity_and_antisymmetry_exact():
    hs = geo.half_space(2)
    x = [0.0, 0.5]
    whole = est.one_form_mc(hs, PHI, 0.5, _v(x, [0.3, -0.7]), 1500, 2e-3, seed=10)
    part1 = est.one_form_mc(hs, PHI, 0.5, _v(x, [0.3, 0.0]), 1500, 2e-3, seed=10)
    part2 = est.one_form_mc(hs, PHI, 0.5, _v(x, [0.0, -0.7]), 1500, 2e-3, seed=10)
    assert whole.mean == part1.mean + part2.mean
    flipped = est.one_form_mc(hs, PHI, 0.5, _v(x, [-0.3, 0.7]), 1500, 2e-3, seed=10)
    assert flipped.mean == -whole.mean


def test_bismut_constant_field_is_zero_mean():
    e = est.bismut_gradient_mc(HL, CONST, 1.0, _v(0.5, 1.0), 20_000, 1e-3, seed=11)
    assert abs(e.mean) <= 3 * e.stderr


def test_bismut_matches_coupled_finite_difference():
    h, T, n, dt = 0.05, 1.0, 30_000, 1e-3
    e = est.bismut_gradient_mc(HL, GAUSS, T, _v(0.5, 1.0), n, dt, seed=12)
    up = est.neumann_heat_mc(HL, GAUSS, T, [0.5 + h], n, dt, seed=12)
    dn = est.neumann_heat_mc(HL, GAUSS, T, [0.5 - h], n, dt, seed=12)
    fd = (up.mean - dn.mean) / (2 * h)
    tol = 3 * math.sqrt(e.stderr**2 + up.stderr**2 + dn.stderr**2)
    assert abs(e.mean - fd) <= tol


def test_bismut_antisymmetry_exact():
    a = est.bismut_gradient_mc(HL, GAUSS, 0.5, _v(0.4, 1.0), 2000, 2e-3, seed=13)
    b = est.bismut_gradient_mc(HL, GAUSS, 0.5, _v(0.4, -1.0), 2000, 2e-3, seed=13)
    assert a.mean == -b.mean


def test_martingale_check_constant_field():
    F = est.NeumannHeatSolution(HL, CONST, 1.0)
    e = est.martingale_check(HL, F, 1.0, _v(0.5, 1.0), 500, 1e-2, seed=14)
    assert e.mean == 0.0


def test_martingale_check_caloric_profile():
    F = est.NeumannHeatSolution(HL, GAUSS, 0.5)
    e = est.martingale_check(HL, F, 0.5, _v(0.5, 1.0), 40_000, 1e-3, seed=15)
    assert abs(e.mean) <= 3 * e.stderr


def test_martingale_check_v_zero():
    F = est.NeumannHeatSolution(HL, GAUSS, 0.5)
    e = est.martingale_check(HL, F, 0.5, _v(0.5, 0.0), 400, 1e-2, seed=16)
    assert e.mean == 0.0


def test_heat_solution_rejects_tangential_profiles():
    hs = geo.half_space(2)
    with pytest.raises(ValueError):
        est.NeumannHeatSolution(hs, GAUSS, 1.0)  # exp(-|x|^2) varies tangentially
    est.NeumannHeatSolution(hs, est.scalar_field("cos-neumann"), 1.0)


def test_weak_derivative_trivial_cases():
    e = est.weak_derivative_check(HL, GAUSS, lambda u: np.array([0.2 + u]), lambda u: np.array([1.0]), 0.3, 0.3, 1.0, 100, 1e-2)
    assert e.mean == 0.0 and e.stderr == 0.0
    # far from the boundary, short horizon: transport is the identity and the
    # residual is pure quadrature error
    e = est.weak_derivative_check(
        HL, GAUSS, lambda u: np.array([5.0 + u]), lambda u: np.array([1.0]), 0.0, 0.2, 0.01, 500, 1e-3, seed=17
    )
    assert abs(e.mean) < 1e-6


def test_weak_derivative_identity():
    e = est.weak_derivative_check(
        HL, GAUSS, lambda u: np.array([0.2 + u]), lambda u: np.array([1.0]), 0.0, 0.5, 1.0, 20_000, 1e-3, seed=18
    )
    assert abs(e.mean) <= 3 * e.stderr


def test_weak_derivative_rejects_curved_model():
    cap = geo.spherical_cap(np.pi / 3)
    with pytest.raises(ValueError):
        est.weak_derivative_check(cap, GAUSS, lambda u: np.array([0.5 + u, 0.0]), lambda u: np.array([1.0, 0.0]), 0.0, 0.1, 0.5, 100, 1e-2)


def test_image_kernel_examples():
    assert est.image_kernel_oracle("neumann", 0.8, 0.4, CONST) == pytest.approx(1.0, abs=1e-9)
    # survival probability of the absorbed walk
    got = est.image_kernel_oracle("dirichlet", 0.7, 0.4, CONST)
    assert got == pytest.approx(math.erf(0.4 / math.sqrt(2 * 0.7)), rel=1e-9)
    # short-time limit recovers the profile
    got = est.image_kernel_oracle("neumann", 1e-6, 0.5, GAUSS)
    assert got == pytest.approx(float(GAUSS.value(np.array([0.5]))), rel=1e-5)
    with pytest.raises(ValueError):
        est.image_kernel_oracle("robin", 1.0, 0.5, GAUSS)
    with pytest.raises(ValueError):
        est.image_kernel_oracle("neumann", -1.0, 0.5, GAUSS)


def test_image_kernel_gradient_consistent_with_values():
    h = 1e-6
    up = est.image_kernel_oracle("neumann", 0.9, 0.5 + h, GAUSS)
    dn = est.image_kernel_oracle("neumann", 0.9, 0.5 - h, GAUSS)
    grad = est.image_kernel_gradient("neumann", 0.9, 0.5, GAUSS)
    assert grad == pytest.approx((up - dn) / (2 * h), abs=1e-6)


def test_registry_contents_and_compat():
    assert GAUSS.neumann_compatible(HL)
    assert est.scalar_field("cos-neumann").neumann_compatible(geo.half_space(3))
    assert PHI.boundary_compatible(geo.half_space(2))
    with pytest.raises(ValueError):
        est.scalar_field("unknown")
    with pytest.raises(ValueError):
        est.one_form("unknown")
