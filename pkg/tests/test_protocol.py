import math

import numpy as np
import pytest

from nvvector.protocol import (
    IndeterminateError, OutOfBandError, azimuthal_scan_estimate, band, bracket,
    plan_static_field, single_frequency_protocol, synthesize_azimuthal_scan, transition_frequency,
)
from nvvector.signal_synth import ACFieldVector
from nvvector.spin_core import DEFAULT_CONSTANTS, HALF_PI, StaticField

D = DEFAULT_CONSTANTS.D
G = DEFAULT_CONSTANTS.gamma_e


# ---------------------------------------------------------------- planner

def test_plan_2900_0minus():
    assert plan_static_field(2900, "0-", "perpendicular") == pytest.approx(10.6, abs=0.2)


def test_plan_2900_minus_beta():
    assert plan_static_field(2900, "-beta", "perpendicular") == pytest.approx(146.1, abs=0.5)


def test_plan_zero_field_limit():
    assert plan_static_field(D, "0-", "perpendicular") < 0.5


def test_plan_parallel_closed_form():
    assert plan_static_field(1500, "0-1", "parallel") == pytest.approx((D - 1500) / G, abs=1e-6)


def test_perpendicular_0minus_closed_form():
    # perpendicular 0<->- : f = (D + sqrt(D^2 + 4 (gamma B)^2)) / 2 - D
    for f in (2880.0, 2950.0, 3500.0):
        B = plan_static_field(f, "0-", "perpendicular")
        assert B == pytest.approx(math.sqrt(f * (f - D)) / G, rel=1e-9)


@pytest.mark.parametrize("target,transition,orientation", [
    (2900, "0-", "perpendicular"), (2900, "-beta", "perpendicular"), (1500, "-beta", "perpendicular"),
    (20, "-beta", "perpendicular"), (1500, "0-1", "parallel"), (1.0, "0-1", "parallel"),
    (3200, "0+", "perpendicular"),
])
def test_planner_consistency(target, transition, orientation):
    B = plan_static_field(target, transition, orientation)
    assert abs(transition_frequency(B, transition, orientation) - target) <= 1e-3
    lo, hi = bracket(orientation)
    assert lo <= B <= hi


@pytest.mark.parametrize("transition,orientation", [
    ("0-", "perpendicular"), ("-beta", "perpendicular"), ("0-1", "parallel"),
])
def test_monotonic_on_bracket(transition, orientation):
    lo, hi = bracket(orientation)
    grid = np.linspace(lo, hi, 100)
    f = np.array([transition_frequency(B, transition, orientation) for B in grid])
    d = np.diff(f)
    assert np.all(d > 0) or np.all(d < 0)
    f_lo, f_hi = band(transition, orientation)
    assert f_lo == pytest.approx(f.min()) and f_hi == pytest.approx(f.max())


def test_out_of_band_reports_band():
    with pytest.raises(OutOfBandError) as err:
        plan_static_field(2800, "0-", "perpendicular")
    lo, hi = err.value.band
    assert lo == pytest.approx(D, abs=1e-9)
    assert "band" in str(err.value)
    with pytest.raises(OutOfBandError):
        plan_static_field(2900, "0-1", "parallel")
    with pytest.raises(OutOfBandError):
        plan_static_field(0.2, "0-1", "parallel")


def test_planner_bad_arguments():
    with pytest.raises(ValueError):
        plan_static_field(2900, "0-", "oblique")
    with pytest.raises(ValueError):
        plan_static_field(2900, "1-2", "perpendicular")


# ---------------------------------------------------------------- protocol

def test_protocol_above_zero_field_splitting():
    plan = single_frequency_protocol(2900)
    assert plan.branch == "two-perpendicular-fields"
    assert [s.transition for s in plan.steps] == ["0-", "0-", "-beta"]
    assert plan.steps[0].field.B == pytest.approx(10.6, abs=0.2)
    assert plan.steps[2].field.B == pytest.approx(146.1, abs=0.5)
    assert plan.steps[1].static_azimuth == "eta = pi/2" and plan.steps[2].static_azimuth == "eta = 0"
    assert any("mixes" in w for w in plan.warnings)
    for s in plan.steps:
        assert abs(s.drive_freq - 2900) <= 1e-3


def test_protocol_mid_band():
    plan = single_frequency_protocol(1500)
    assert plan.branch == "perpendicular-and-parallel"
    assert [s.orientation for s in plan.steps] == ["perpendicular", "perpendicular", "parallel"]
    assert plan.steps[2].field.B == pytest.approx(48.9, abs=0.05)
    assert plan.steps[0].field.B == pytest.approx(plan_static_field(1500, "-beta", "perpendicular"))
    assert not any("30" in w for w in plan.warnings)


def test_protocol_low_frequency_warning():
    plan = single_frequency_protocol(20)
    assert any("below 30" in w for w in plan.warnings)
    for s in plan.steps:
        assert abs(s.drive_freq - 20) <= 1e-3


def test_protocol_at_1MHz():
    plan = single_frequency_protocol(1.0)
    assert plan.steps[2].field.B == pytest.approx((D - 1) / G, abs=1e-6)


def test_protocol_rejects_below_1MHz():
    with pytest.raises(ValueError):
        single_frequency_protocol(0.5)


def test_plan_serializes():
    d = single_frequency_protocol(2900).as_dict()
    assert d["target_freq_MHz"] == 2900 and len(d["steps"]) == 3
    assert all(k.endswith(("_MHz", "_mT", "_deg")) or k in ("orientation", "static_azimuth", "transition", "quantity")
               for k in d["steps"][0])


# ---------------------------------------------------------------- azimuthal scan

SCAN = np.radians(np.arange(0, 180, 10))


def test_azimuth_recovered_at_146mT():
    static = StaticField(146.1, HALF_PI)
    ac = ACFieldVector(0.05, math.radians(40), math.radians(30))
    est = azimuthal_scan_estimate(synthesize_azimuthal_scan(static, ac, SCAN), static)
    assert math.degrees(est.eta) == pytest.approx(30, abs=2)
    assert est.contrast_metric > 0.05 and not est.warnings


def test_azimuth_noisy_scan():
    static = StaticField(146.1, HALF_PI)
    ac = ACFieldVector(0.05, math.radians(40), math.radians(30))
    rng = np.random.default_rng(1)
    data = np.array(synthesize_azimuthal_scan(static, ac, SCAN))
    data[:, 1] += rng.normal(0, 0.005, len(SCAN))
    est = azimuthal_scan_estimate(data, static, sigma=0.005)
    assert abs(math.degrees(est.eta) - 30) <= max(2.0, 3 * math.degrees(est.sigma_eta))


def test_axial_ac_field_indeterminate():
    static = StaticField(146.1, HALF_PI)
    data = synthesize_azimuthal_scan(static, ACFieldVector(0.05, 0.0, 0.0), SCAN)
    assert np.ptp([r for _, r in data]) < 1e-12
    with pytest.raises(IndeterminateError):
        azimuthal_scan_estimate(data, static)


def test_low_field_contrast_warning():
    static = StaticField(5.0, HALF_PI)
    est = azimuthal_scan_estimate(
        synthesize_azimuthal_scan(static, ACFieldVector(0.05, math.radians(40), math.radians(30)), SCAN), static)
    assert est.contrast_metric < 0.05
    assert est.warnings and "low-field" in est.warnings[0]


def test_low_field_noise_makes_eta_indeterminate():
    static = StaticField(5.0, HALF_PI)
    data = np.array(synthesize_azimuthal_scan(static, ACFieldVector(0.05, math.radians(40), math.radians(30)), SCAN))
    data[:, 1] += np.random.default_rng(0).normal(0, 0.01, len(SCAN))
    with pytest.raises(IndeterminateError):
        azimuthal_scan_estimate(data, static, sigma=0.01)


def test_scan_preconditions():
    static = StaticField(146.1, HALF_PI)
    ac = ACFieldVector(0.05, 1.0, 0.5)
    with pytest.raises(ValueError):
        azimuthal_scan_estimate(synthesize_azimuthal_scan(static, ac, SCAN[:4]), static)
    with pytest.raises(ValueError):
        azimuthal_scan_estimate(synthesize_azimuthal_scan(static, ac, np.radians(np.arange(0, 60, 10))), static)
    with pytest.raises(ValueError):
        azimuthal_scan_estimate(synthesize_azimuthal_scan(static, ac, SCAN), StaticField(146.1, 1.0))
