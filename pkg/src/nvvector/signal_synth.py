"""Observable signals: Rabi frequencies, transition probabilities, ODMR spectra
and damped Rabi traces."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spin_core import (
    DEFAULT_CONSTANTS, HALF_PI, SQRT2, Label, LabeledEigensystem, PhysicalConstants,
    Transition, find_transition, transitions,
)

RATIO_CLAMP = 1e6


@dataclass(frozen=True)
class ACFieldVector:
    """Linearly polarized AC field B_AC * u(zeta, eta) * cos(omega t + phi)."""

    B_AC: float  # mT
    zeta: float  # rad, polar angle from the NV axis
    eta: float  # rad, azimuth from the static field's transverse direction
    omega: float = 0.0  # rad / us
    phi: float = 0.0  # rad; Rabi magnitudes do not depend on it

    def __post_init__(self):
        if not self.B_AC >= 0:
            raise ValueError(f"B_AC must be >= 0, got {self.B_AC}")
        if not 0.0 <= self.zeta <= math.pi:
            raise ValueError(f"zeta must lie in [0, pi], got {self.zeta}")
        if not 0.0 <= self.eta < 2 * math.pi:
            raise ValueError(f"eta must lie in [0, 2pi), got {self.eta}")

    @property
    def direction(self) -> np.ndarray:
        sz = 1.0 if self.zeta == HALF_PI else math.sin(self.zeta)
        cz = 0.0 if self.zeta == HALF_PI else math.cos(self.zeta)
        return np.array([sz * math.cos(self.eta), sz * math.sin(self.eta), cz])

    def with_eta(self, eta: float) -> "ACFieldVector":
        return ACFieldVector(self.B_AC, self.zeta, eta % (2 * math.pi), self.omega, self.phi)


@dataclass(frozen=True)
class LineShapeParams:
    fwhm: float = 8.0  # MHz
    contrast_scale: float = 0.1
    exponent: float = 2.0  # depth ~ (R / R_max) ** exponent

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValueError("fwhm must be positive")
        if not 0.0 < self.contrast_scale <= 1.0:
            raise ValueError("contrast_scale must lie in (0, 1]")
        if not self.exponent > 0:
            raise ValueError("exponent must be positive")


@dataclass(frozen=True)
class ODMRSpectrum:
    freq_grid: np.ndarray  # MHz
    signal: np.ndarray  # normalized fluorescence, 1 off resonance
    centers: tuple = ()  # MHz, one per transition
    depths: tuple = ()

    def __post_init__(self):
        if len(self.freq_grid) != len(self.signal):
            raise ValueError("freq_grid and signal lengths differ")


@dataclass(frozen=True)
class RabiTrace:
    times: np.ndarray  # us
    signal: np.ndarray
    a: float
    nu: float  # MHz
    T_R: float  # us
    c: float


def coupling(tr: Transition, direction) -> complex:
    """Coherent sum u_x<i|S_x|j> + u_y<i|S_y|j> + u_z<i|S_z|j>."""
    return complex(np.dot(np.asarray(direction, dtype=float), tr.dipole))


def rabi_frequency(tr: Transition, ac: ACFieldVector,
                   consts: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Rabi frequency (MHz) of ``tr`` driven by ``ac``."""
    return SQRT2 * consts.gamma_e * ac.B_AC * abs(coupling(tr, ac.direction))


def max_coupling_sq(tr: Transition) -> float:
    """Largest |u.d|^2 over real unit vectors u: top eigenvalue of Re(d d^H)."""
    d = tr.dipole
    m = np.real(np.outer(d, d.conj()))
    return float(np.linalg.eigvalsh(m)[-1])


def _require_perpendicular(sys: LabeledEigensystem):
    if sys.field is not None and abs(sys.field.theta - HALF_PI) > 1e-12:
        raise ValueError("this curve is defined for a static field perpendicular to the NV axis")


def transition_probability_vs_eta(sys: LabeledEigensystem, ac_template: ACFieldVector, eta_grid):
    """Normalized squared couplings of 0<->+ and 0<->- as the AC azimuth varies.

    Each curve is divided by the transition's maximal coupling over field
    directions, so a curve reaches 1 when the AC field lies along its dipole.
    Returns ``(p_0plus, p_0minus)`` arrays.
    """
    _require_perpendicular(sys)
    trs = transitions(sys)
    t_plus = find_transition(trs, Label.ZERO, Label.PLUS)
    t_minus = find_transition(trs, Label.ZERO, Label.MINUS)
    norm_p, norm_m = max_coupling_sq(t_plus), max_coupling_sq(t_minus)
    p_plus, p_minus = [], []
    for eta in eta_grid:
        u = ac_template.with_eta(float(eta)).direction
        p_plus.append(abs(coupling(t_plus, u)) ** 2 / norm_p)
        p_minus.append(abs(coupling(t_minus, u)) ** 2 / norm_m)
    return np.array(p_plus), np.array(p_minus)


def gaussian(f, center, fwhm):
    """Unit-peak Gaussian line."""
    f = np.asarray(f, dtype=float)
    return np.exp(-4.0 * math.log(2.0) * ((f - center) / fwhm) ** 2)


def dip_depths(sys: LabeledEigensystem, ac: ACFieldVector, lineshape: LineShapeParams,
               trs=None):
    """Dip depth per transition, contrast * (R / R_max) ** exponent."""
    trs = transitions(sys) if trs is None else trs
    rates = np.array([rabi_frequency(t, ac, sys.consts) for t in trs])
    r_max = rates.max()
    if r_max == 0.0:
        return np.zeros(len(trs))
    return lineshape.contrast_scale * (rates / r_max) ** lineshape.exponent


def odmr_spectrum(sys: LabeledEigensystem, ac: ACFieldVector, lineshape: LineShapeParams,
                  freq_grid) -> ODMRSpectrum:
    freq = np.asarray(freq_grid, dtype=float)
    if freq.ndim != 1 or freq.size == 0:
        raise ValueError("frequency grid must be a non-empty 1-D sequence")
    if np.any(np.diff(freq) <= 0):
        raise ValueError("frequency grid must be sorted ascending")
    trs = transitions(sys)
    centers = [t.frequency for t in trs]
    for i in range(3):
        for j in range(i + 1, 3):
            if abs(centers[i] - centers[j]) < lineshape.fwhm / 10:
                raise ValueError(
                    f"transitions {trs[i].name} and {trs[j].name} lie within fwhm/10 "
                    f"({centers[i]:.3f} vs {centers[j]:.3f} MHz) and cannot be resolved")
    depths = dip_depths(sys, ac, lineshape, trs)
    signal = np.ones_like(freq)
    for f0, depth in zip(centers, depths):
        if depth:
            signal = signal - depth * gaussian(freq, f0, lineshape.fwhm)
    return ODMRSpectrum(freq, signal, tuple(centers), tuple(float(d) for d in depths))


def eta_ratio_curve(sys: LabeledEigensystem, ac_template: ACFieldVector, eta_grid,
                    lineshape: LineShapeParams | None = None):
    """Ratio of the 0<->- dip depth to the 0<->+ dip depth versus AC azimuth.

    The ratio is clamped to 1e6 where the 0<->+ depth vanishes.
    """
    _require_perpendicular(sys)
    lineshape = lineshape or LineShapeParams()
    trs = transitions(sys)
    t_plus = find_transition(trs, Label.ZERO, Label.PLUS)
    t_minus = find_transition(trs, Label.ZERO, Label.MINUS)
    out = []
    for eta in eta_grid:
        ac = ac_template.with_eta(float(eta))
        num = rabi_frequency(t_minus, ac, sys.consts) ** lineshape.exponent
        den = rabi_frequency(t_plus, ac, sys.consts) ** lineshape.exponent
        if num == 0.0 and den == 0.0:
            raise ValueError("both transitions are undriven; ratio undefined")
        ratio = RATIO_CLAMP if num >= RATIO_CLAMP * den else num / den
        out.append((float(eta), float(ratio)))
    return out


def damped_cosine(t, a, nu, T_R, c):
    t = np.asarray(t, dtype=float)
    return a * np.cos(2 * np.pi * nu * t) * np.exp(-t / T_R) + c


def rabi_trace(R: float, T_R: float, a: float, c: float, time_grid,
               noise_sigma: float = 0.0, seed: int | None = None) -> RabiTrace:
    """Evaluate a cos(2 pi R t) exp(-t/T_R) + c, with optional seeded Gaussian noise."""
    if not T_R > 0:
        raise ValueError("T_R must be positive")
    t = np.asarray(time_grid, dtype=float)
    y = damped_cosine(t, a, R, T_R, c)
    if noise_sigma:
        if seed is None:
            raise ValueError("noise requires an explicit seed")
        y = y + np.random.default_rng(seed).normal(0.0, noise_sigma, size=t.shape)
    return RabiTrace(t, y, a, R, T_R, c)
