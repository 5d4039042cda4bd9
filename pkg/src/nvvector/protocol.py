"""Static-field planning for single-frequency vector detection, and azimuthal
scan analysis of the -<->beta Rabi frequency."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from .fitting import FitResult, ModelSpec, SingularFitError, least_squares
from .signal_synth import ACFieldVector, rabi_frequency
from .spin_core import (
    DEFAULT_CONSTANTS, HALF_PI, Label, PhysicalConstants, StaticField,
    find_transition, ground_hamiltonian, solve, transitions,
)

FREQ_TOL = 1e-3  # MHz
MIN_TARGET = 1.0  # MHz
LOW_FREQ_WARN = 30.0  # MHz
MIXING_WARN_FIELD = 100.0  # mT
CONTRAST_FLOOR = 0.05
MONOTONIC_SAMPLES = 100

_TRANSITIONS = {
    "0-": (Label.ZERO, Label.MINUS),
    "0+": (Label.ZERO, Label.PLUS),
    "-+": (Label.MINUS, Label.PLUS),
    "-beta": (Label.MINUS, Label.PLUS),
    "0-1": (Label.ZERO, Label.MINUS),
}
_THETA = {"perpendicular": HALF_PI, "parallel": 0.0}
# perpendicular field range (mT); the parallel range is set per constants by bracket()
PERPENDICULAR_BRACKET = (0.0, 300.0)


class OutOfBandError(ValueError):
    def __init__(self, message, band):
        super().__init__(message)
        self.band = band


class IndeterminateError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolStep:
    field: StaticField
    orientation: str  # perpendicular | parallel
    static_azimuth: str  # static-field direction in the transverse plane relative to the AC field
    transition: str
    drive_freq: float  # MHz, the transition frequency at ``field``
    quantity: str  # what the step extracts

    def as_dict(self) -> dict:
        return {"B_mT": self.field.B, "theta_deg": math.degrees(self.field.theta),
                "orientation": self.orientation, "static_azimuth": self.static_azimuth,
                "transition": self.transition, "drive_freq_MHz": self.drive_freq,
                "quantity": self.quantity}


@dataclass(frozen=True)
class ProtocolPlan:
    target_freq: float
    branch: str
    steps: tuple
    band: tuple  # MHz
    warnings: tuple = ()

    def as_dict(self) -> dict:
        return {"target_freq_MHz": self.target_freq, "branch": self.branch,
                "band_MHz": list(self.band), "steps": [s.as_dict() for s in self.steps],
                "warnings": list(self.warnings)}


def transition_frequency(B: float, transition: str, orientation: str,
                         consts: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Frequency (MHz) of ``transition`` at static field B (mT).

    Along the NV axis the Hamiltonian is diagonal and the bare m_s levels
    are used directly, so the 0<->-1 line is followed through the field
    range where the overlap labels trade places.
    """
    pair = _resolve(transition, orientation)
    field_ = StaticField(B, _THETA[orientation])
    if orientation == "parallel":
        e_plus, e_zero, e_minus = np.real(np.diag(ground_hamiltonian(consts, field_)))
        bare = {Label.PLUS: e_plus, Label.ZERO: e_zero, Label.MINUS: e_minus}
        return float(abs(bare[pair[1]] - bare[pair[0]]))
    return find_transition(transitions(solve(field_, consts)), *pair).frequency


def _resolve(transition, orientation):
    if orientation not in _THETA:
        raise ValueError(f"orientation must be one of {tuple(_THETA)}")
    if transition not in _TRANSITIONS:
        raise ValueError(f"unknown transition {transition!r}; expected one of {tuple(_TRANSITIONS)}")
    return _TRANSITIONS[transition]


def bracket(orientation: str, consts: PhysicalConstants = DEFAULT_CONSTANTS):
    """Field range (mT) searched for an orientation.

    The parallel range stops just short of the 0<->-1 level crossing at
    D / gamma_e, far enough to reach the lowest supported target.
    """
    if orientation == "parallel":
        return (0.0, (consts.D - 0.5 * MIN_TARGET) / consts.gamma_e)
    if orientation == "perpendicular":
        return PERPENDICULAR_BRACKET
    raise ValueError(f"orientation must be one of {tuple(_THETA)}")


def band(transition: str, orientation: str, consts: PhysicalConstants = DEFAULT_CONSTANTS):
    """Frequency span (MHz) of a transition over its field bracket, after a
    monotonicity check on 100 evenly spaced samples."""
    _resolve(transition, orientation)
    lo, hi = bracket(orientation, consts)
    grid = np.linspace(lo, hi, MONOTONIC_SAMPLES)
    f = np.array([transition_frequency(B, transition, orientation, consts) for B in grid])
    steps = np.diff(f)
    if not (np.all(steps > 0) or np.all(steps < 0)):
        raise ValueError(f"{transition} ({orientation}) is not monotonic on [{lo}, {hi}] mT")
    return (float(f.min()), float(f.max()))


def plan_static_field(target_freq: float, transition: str, orientation: str,
                      consts: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Static field (mT) putting ``transition`` at ``target_freq`` (MHz).

    Bisection on the orientation's field bracket; the returned field
    reproduces the target within 1 kHz.
    """
    f_lo, f_hi = band(transition, orientation, consts)
    lo, hi = bracket(orientation, consts)
    if not f_lo <= target_freq <= f_hi:
        raise OutOfBandError(
            f"{target_freq} MHz is outside the {transition} ({orientation}) band "
            f"[{f_lo:.3f}, {f_hi:.3f}] MHz for B in [{lo:g}, {hi:.3f}] mT", (f_lo, f_hi))

    def g(B):
        return transition_frequency(B, transition, orientation, consts) - target_freq

    g_lo = g(lo)
    if abs(g_lo) <= FREQ_TOL:
        return lo
    if abs(g(hi)) <= FREQ_TOL:
        return hi
    B = bisect(g, lo, hi, xtol=1e-10, rtol=1e-14, maxiter=200)
    if abs(g(B)) > FREQ_TOL:
        raise ArithmeticError(f"bisection missed the 1 kHz tolerance at B = {B} mT")
    return float(B)


def _step(B, orientation, azimuth, transition, quantity, consts):
    f = transition_frequency(B, transition, orientation, consts)
    return ProtocolStep(StaticField(B, _THETA[orientation]), orientation, azimuth, transition, f, quantity)


def single_frequency_protocol(target_freq: float,
                              consts: PhysicalConstants = DEFAULT_CONSTANTS) -> ProtocolPlan:
    """Ordered measurement plan for vector detection of an AC field at one frequency."""
    if not target_freq >= MIN_TARGET:
        raise ValueError(f"target frequency {target_freq} MHz is below the supported minimum of {MIN_TARGET} MHz")
    warnings = []
    if target_freq > consts.D:
        B1 = plan_static_field(target_freq, "0-", "perpendicular", consts)
        B2 = plan_static_field(target_freq, "-beta", "perpendicular", consts)
        steps = (
            _step(B1, "perpendicular", "scan", "0-",
                  "eta: the static-field azimuth of minimal 0<->- intensity lies along the transverse AC component", consts),
            _step(B1, "perpendicular", "eta = pi/2", "0-",
                  "Rabi frequency ~ B_AC sin(zeta) |<0|S_y|->|", consts),
            _step(B2, "perpendicular", "eta = 0", "-beta",
                  "Rabi frequency ~ B_AC cos(zeta) |<-|S_z|beta>|", consts),
        )
        branch = "two-perpendicular-fields"
        band_ = (consts.D, band("0-", "perpendicular", consts)[1])
        high = B2
    else:
        B1 = plan_static_field(target_freq, "-beta", "perpendicular", consts)
        B2 = plan_static_field(target_freq, "0-1", "parallel", consts)
        steps = (
            _step(B1, "perpendicular", "scan", "-beta",
                  "eta: the static-field azimuth of minimal -<->beta Rabi frequency lies along the transverse AC component",
                  consts),
            _step(B1, "perpendicular", "eta = 0", "-beta",
                  "Rabi frequency ~ B_AC cos(zeta) |<-|S_z|beta>|", consts),
            _step(B2, "parallel", "n/a", "0-1",
                  "Rabi frequency ~ B_AC sin(zeta) |<0|S_x|-1>|", consts),
        )
        branch = "perpendicular-and-parallel"
        band_ = (MIN_TARGET, consts.D)
        high = B1
        if target_freq < LOW_FREQ_WARN:
            warnings.append(
                f"target below {LOW_FREQ_WARN:g} MHz: |<-|S_y|beta>| is small at B = {B1:.3f} mT, "
                "so the azimuthal scan has little contrast and eta may be hard to determine")
    if high >= MIXING_WARN_FIELD:
        warnings.append(
            f"B = {high:.1f} mT mixes |0> and |+>; optical spin polarization and ODMR contrast drop")
    for s in steps:
        if abs(s.drive_freq - target_freq) > FREQ_TOL:
            raise ArithmeticError(f"step {s.transition} at {s.field.B} mT misses the target by more than 1 kHz")
    return ProtocolPlan(float(target_freq), branch, steps, band_, tuple(warnings))


@dataclass(frozen=True)
class AzimuthEstimate:
    eta: float  # rad in [0, pi); the AC azimuth in the frame of the scan angles
    sigma_eta: float
    axial: float  # Rabi frequency with the static field along the transverse AC component
    transverse: float  # added quadrature amplitude at 90 degrees
    contrast_metric: float  # |<-|S_y|beta>| at the scan field
    warnings: tuple = ()
    fit: FitResult | None = field(default=None, repr=False)


def synthesize_azimuthal_scan(static: StaticField, ac: ACFieldVector, eta_static_grid,
                              consts: PhysicalConstants = DEFAULT_CONSTANTS):
    """Rabi frequency of -<->beta as the static field turns in the transverse plane.

    ``ac.eta`` is measured from the scan's zero azimuth; at each static
    azimuth the AC field sits at relative azimuth eta - eta_static.
    """
    tr = find_transition(transitions(solve(static, consts)), Label.MINUS, Label.PLUS)
    return [(float(es), rabi_frequency(tr, ac.with_eta((ac.eta - es) % (2 * math.pi)), consts))
            for es in eta_static_grid]


def azimuthal_scan_estimate(rabi_vs_orientation, static: StaticField,
                            consts: PhysicalConstants = DEFAULT_CONSTANTS,
                            sigma=None) -> AzimuthEstimate:
    """Estimate the AC azimuth from -<->beta Rabi frequencies (MHz) versus static azimuth (rad).

    Fits R(es) = sqrt(p^2 + q^2 sin^2(eta - es)), the coherent sum
    |cos(zeta) M_z + sin(zeta) sin(eta - es) M_y| with M_y imaginary and
    M_z real.  R is minimal where the static field lies along the
    transverse AC component, so eta is returned modulo pi.
    """
    if not static.is_perpendicular:
        raise ValueError("the azimuthal scan needs a static field perpendicular to the NV axis")
    data = np.asarray(rabi_vs_orientation, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 5:
        raise ValueError("need at least 5 (eta_static, R) pairs")
    es, R = data[:, 0], data[:, 1]
    if np.ptp(es) < HALF_PI - 1e-12:
        raise ValueError("scan must span at least 90 degrees")
    tr = find_transition(transitions(solve(static, consts)), Label.MINUS, Label.PLUS)
    contrast = float(abs(tr.dipole[1]))
    warnings = []
    if contrast < CONTRAST_FLOOR:
        warnings.append(f"|<-|S_y|beta>| = {contrast:.4f} at B = {static.B} mT: "
                        "low-field insensitivity, eta poorly constrained")

    # R^2 = a0 + a1 cos(2 es) + a2 sin(2 es) is linear; it seeds the fit
    A = np.column_stack([np.ones_like(es), np.cos(2 * es), np.sin(2 * es)])
    a0, a1, a2 = np.linalg.lstsq(A, R ** 2, rcond=None)[0]
    half = math.hypot(a1, a2)  # q^2 / 2
    eta0 = 0.5 * math.atan2(-a2, -a1)
    p0 = math.sqrt(max(a0 - half, 0.0))
    q0 = math.sqrt(2 * half)
    w = np.ones_like(R) if sigma is None else 1.0 / np.broadcast_to(np.asarray(sigma, float), R.shape)

    def model(params):
        p, q, eta = params
        return np.sqrt(p ** 2 + q ** 2 * np.sin(eta - es) ** 2)

    spec = ModelSpec(lambda params: (model(params) - R) * w, 3, names=("axial", "transverse", "eta"))
    try:
        res = least_squares(spec, np.array([max(p0, 1e-6 * R.max()), max(q0, 1e-6 * R.max()), eta0]),
                            scale_covariance=sigma is None)
    except SingularFitError as err:
        res = err.result
    p, q, eta = res.values
    p, q = abs(p), abs(q)
    eta = eta % math.pi
    resid = model(res.values) - R
    if sigma is not None:
        floor = float(np.median(np.broadcast_to(np.asarray(sigma, float), R.shape)))
    else:
        floor = float(np.sqrt(np.mean(resid ** 2)))
    floor = max(floor, 1e-9 * float(np.max(np.abs(R))), 1e-15)
    modulation = math.hypot(p, q) - p
    if modulation < 3 * floor:
        raise IndeterminateError(
            f"eta indeterminate at this field strength: modulation {modulation:.3g} MHz "
            f"is below the noise floor {3 * floor:.3g} MHz")
    sigma_eta = res.stderr["eta"] if res.covariance is not None else math.nan
    return AzimuthEstimate(float(eta), sigma_eta, float(p), float(q), contrast, tuple(warnings), res)
