"""Inversion of measured Rabi frequencies into the AC field vector, and the
field sensitivity figure of merit."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import nnls

from .fitting import ModelSpec, SingularFitError, least_squares
from .spin_core import (
    DEFAULT_CONSTANTS, SQRT2, Label, PhysicalConstants, StaticField, find_transition,
    solve, transitions,
)

CHUNK = 1000
MODELS = ("equations", "coherent")
# (transition, axis carrying its dominant dipole element)
_DOMINANT = (((Label.ZERO, Label.PLUS), 0), ((Label.ZERO, Label.MINUS), 1), ((Label.MINUS, Label.PLUS), 2))


class QuadrantNote(str, Enum):
    PRINCIPAL = "principal"  # zeta, eta folded into [0, pi/2]
    ETA_INDETERMINATE = "eta_indeterminate"  # no transverse AC component


@dataclass(frozen=True)
class RabiMeasurementSet:
    """Rabi frequencies (MHz) of 0<->+, 0<->- and -<->+ with 1-sigma errors."""

    R_0plus: float
    R_0minus: float
    R_minusplus: float
    amplitude_ratio: float  # B_RF / B_MW
    field: StaticField
    sigma_0plus: float = 0.0
    sigma_0minus: float = 0.0
    sigma_minusplus: float = 0.0
    sigma_ratio: float = 0.0

    def __post_init__(self):
        for name in ("R_0plus", "R_0minus", "R_minusplus"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.amplitude_ratio > 0:
            raise ValueError("amplitude_ratio must be positive")
        for name in ("sigma_0plus", "sigma_0minus", "sigma_minusplus", "sigma_ratio"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def values(self) -> np.ndarray:
        return np.array([self.R_0plus, self.R_0minus, self.R_minusplus, self.amplitude_ratio])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([self.sigma_0plus, self.sigma_0minus, self.sigma_minusplus, self.sigma_ratio])


@dataclass(frozen=True)
class ReconstructedField:
    B_MW: float  # mT
    B_RF: float  # mT
    zeta: float  # rad
    eta: float  # rad, nan when indeterminate
    sigma_B_MW: float = math.nan
    sigma_B_RF: float = math.nan
    sigma_zeta: float = math.nan
    sigma_eta: float = math.nan
    quadrant_note: QuadrantNote = QuadrantNote.PRINCIPAL
    consistent: bool = True
    residuals: tuple = ()  # in units of the measurement sigma
    model: str = "equations"
    notes: tuple = field(default=())

    def as_dict(self) -> dict:
        return {
            "B_MW_G": 10 * self.B_MW, "sigma_B_MW_G": 10 * self.sigma_B_MW,
            "B_RF_G": 10 * self.B_RF, "sigma_B_RF_G": 10 * self.sigma_B_RF,
            "zeta_deg": math.degrees(self.zeta), "sigma_zeta_deg": math.degrees(self.sigma_zeta),
            "eta_deg": math.degrees(self.eta), "sigma_eta_deg": math.degrees(self.sigma_eta),
            "quadrant_note": self.quadrant_note.value, "consistent": self.consistent,
            "model": self.model, "residuals_sigma": list(self.residuals), "notes": list(self.notes),
        }


def rabi_forms(field: StaticField, consts: PhysicalConstants = DEFAULT_CONSTANTS,
               model: str = "equations") -> list[np.ndarray]:
    """Quadratic forms M_t with R_t = sqrt2 gamma_e B_t sqrt(u^T M_t u).

    ``coherent`` keeps every dipole element, M_t = Re(d d^H).  ``equations``
    keeps only each transition's dominant element (x for 0<->+, y for 0<->-,
    z for -<->+) at its exact computed magnitude.
    """
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}")
    trs = transitions(solve(field, consts))
    forms = []
    for pair, axis in _DOMINANT:
        d = find_transition(trs, *pair).dipole
        if model == "coherent":
            forms.append(np.real(np.outer(d, d.conj())))
        else:
            m = np.zeros((3, 3))
            m[axis, axis] = abs(d[axis]) ** 2
            forms.append(m)
    return forms


def _direction(zeta, eta):
    return np.array([math.sin(zeta) * math.cos(eta), math.sin(zeta) * math.sin(eta), math.cos(zeta)])


def predict_rabi(B_MW, B_RF, zeta, eta, forms, consts: PhysicalConstants = DEFAULT_CONSTANTS):
    """Rabi frequencies (R_0plus, R_0minus, R_minusplus) in MHz."""
    u = _direction(zeta, eta)
    k = SQRT2 * consts.gamma_e
    amps = (B_MW, B_MW, B_RF)
    return np.array([k * b * math.sqrt(max(u @ m @ u, 0.0)) for b, m in zip(amps, forms)])


def _linear_moments(values, forms, k):
    """Solve diag(M_t) . q = R_t^2 / (k B_t/B_MW)^2 for q_j = (B_MW u_j)^2 >= 0."""
    r0p, r0m, rmp, ratio = values
    A = np.array([np.diag(m) for m in forms])
    b = np.array([r0p ** 2, r0m ** 2, (rmp / ratio) ** 2]) / k ** 2
    try:
        q = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        q = np.full(3, -1.0)
    if np.any(q < 0):
        q, _ = nnls(A, b)
    return q


def _angles_from_moments(q):
    qx, qy, qz = q
    B = math.sqrt(qx + qy + qz)
    if B == 0.0:
        return 0.0, math.nan, math.nan
    zeta = math.atan2(math.sqrt(qx + qy), math.sqrt(qz))
    if qx + qy == 0.0:
        return B, zeta, math.nan
    return B, zeta, math.atan2(math.sqrt(qy), math.sqrt(qx))


def _effective_sigmas(values, sigmas):
    return np.where(sigmas > 0, sigmas, 1e-6 * np.maximum(np.abs(values), 1.0))


def _solve_point(values, sigmas, forms, consts, refine=True):
    """Point estimate (B_MW, B_RF, zeta, eta) plus residuals in sigma units."""
    k = SQRT2 * consts.gamma_e
    q = _linear_moments(values, forms, k)
    B, zeta, eta = _angles_from_moments(q)
    ratio = values[3]
    if B == 0.0:
        return np.array([0.0, 0.0, math.nan, math.nan]), np.zeros(4)
    p = np.array([B, ratio * B, zeta, 0.0 if math.isnan(eta) else eta])
    # moments that came out exactly zero sit on a symmetry boundary; hold them
    free = [0, 1]
    if q[2] > 0 and q[0] + q[1] > 0:
        free.append(2)
    if q[0] > 0 and q[1] > 0:
        free.append(3)
    sig = _effective_sigmas(values, sigmas)

    def residual_full(pp):
        pred = predict_rabi(pp[0], pp[1], pp[2], pp[3], forms, consts)
        return np.append((pred - values[:3]) / sig[:3], (pp[1] / pp[0] - ratio) / sig[3])

    if refine:
        def residual(sub):
            pp = p.copy()
            pp[free] = sub
            return residual_full(pp)

        spec = ModelSpec(residual, len(free))
        try:
            res = least_squares(spec, p[free], scale_covariance=False)
        except SingularFitError as err:
            res = err.result
        p[free] = res.values
    if math.isnan(eta):
        p[3] = math.nan
    resid = residual_full(np.nan_to_num(p))
    return p, resid


def _fold(p):
    B_MW, B_RF, zeta, eta = p
    zeta = math.acos(min(abs(math.cos(zeta)), 1.0)) if not math.isnan(zeta) else zeta
    eta = math.atan2(abs(math.sin(eta)), abs(math.cos(eta))) if not math.isnan(eta) else eta
    return np.array([abs(B_MW), abs(B_RF), zeta, eta])


def _diagonal(forms):
    return all(np.allclose(m, np.diag(np.diag(m)), atol=1e-12) for m in forms)


def _solve_batch(samples, sigmas, forms, consts):
    """Solutions for many measurement vectors; vectorized when the forms are diagonal."""
    out = np.empty((samples.shape[0], 4))
    if _diagonal(forms):
        k = SQRT2 * consts.gamma_e
        A = np.array([np.diag(m) for m in forms])
        b = np.column_stack([samples[:, 0] ** 2, samples[:, 1] ** 2,
                             (samples[:, 2] / samples[:, 3]) ** 2]) / k ** 2
        Q = np.linalg.solve(A, b.T).T
        bad = np.any(Q < 0, axis=1)
        for i in np.flatnonzero(bad):
            Q[i], _ = nnls(A, b[i])
        B = np.sqrt(Q.sum(axis=1))
        with np.errstate(invalid="ignore", divide="ignore"):
            zeta = np.arctan2(np.sqrt(Q[:, 0] + Q[:, 1]), np.sqrt(Q[:, 2]))
            eta = np.where(Q[:, 0] + Q[:, 1] > 0, np.arctan2(np.sqrt(Q[:, 1]), np.sqrt(Q[:, 0])), np.nan)
        out[:] = np.column_stack([B, samples[:, 3] * B, zeta, eta])
    else:
        for i, s in enumerate(samples):
            out[i] = _fold(_solve_point(s, sigmas, forms, consts)[0])
    return out


def _mc_chunk(args):
    seed_seq, n, values, sigmas, forms, consts = args
    rng = np.random.default_rng(seed_seq)
    draws = np.abs(values + sigmas * rng.standard_normal((n, 4)))
    draws[:, 3] = np.maximum(draws[:, 3], 1e-12)
    return _solve_batch(draws, sigmas, forms, consts)


def monte_carlo_samples(meas: RabiMeasurementSet, forms, consts=DEFAULT_CONSTANTS,
                        n_samples: int = 10000, seed: int = 0, workers: int = 1) -> np.ndarray:
    """Reconstructions of Gaussian-perturbed measurements, shape (n_samples, 4).

    Samples are drawn in fixed chunks, each from its own child of
    SeedSequence(seed), so the result does not depend on ``workers``.
    """
    n_chunks = -(-n_samples // CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [min(CHUNK, n_samples - i * CHUNK) for i in range(n_chunks)]
    jobs = [(children[i], sizes[i], meas.values, meas.sigmas, forms, consts) for i in range(n_chunks)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_mc_chunk, jobs))
    else:
        parts = [_mc_chunk(j) for j in jobs]
    return np.concatenate(parts) if parts else np.empty((0, 4))


def invert_field(meas: RabiMeasurementSet, consts: PhysicalConstants = DEFAULT_CONSTANTS, *,
                 model: str = "equations", uncertainty: str = "montecarlo",
                 n_samples: int = 10000, seed: int = 0, workers: int = 1) -> ReconstructedField:
    """Recover (B_MW, B_RF, zeta, eta) from three Rabi frequencies and B_RF/B_MW.

    The dipole elements are computed exactly at ``meas.field``.  A linear
    solve for the squared field components seeds a Levenberg-Marquardt
    refinement of the chosen forward model.  Angles are reported in
    [0, pi/2] since the Rabi magnitudes cannot tell the quadrants apart.
    ``uncertainty`` is "montecarlo" (seeded), "linear" (finite-difference
    propagation) or "none".
    """
    forms = rabi_forms(meas.field, consts, model)
    values, sigmas = meas.values, meas.sigmas
    p, resid = _solve_point(values, sigmas, forms, consts)
    p = _fold(p)
    notes = []
    note = QuadrantNote.PRINCIPAL
    if p[0] == 0.0:
        notes.append("all Rabi frequencies vanish: no AC field to reconstruct")
        note = QuadrantNote.ETA_INDETERMINATE
    elif math.isnan(p[3]):
        note = QuadrantNote.ETA_INDETERMINATE
        notes.append("eta indeterminate: the AC field has no transverse component (zeta = 0)")
    if np.any(meas.sigmas > 0):
        consistent = bool(np.all(np.abs(resid) <= 5.0))
    else:
        consistent = bool(np.all(np.abs(resid) <= 1e3))  # 1e-3 relative at the default scale
    if not consistent:
        notes.append("measurement set inconsistent: residual above 5 sigma")

    sig = np.full(4, math.nan)
    if uncertainty == "montecarlo" and np.any(sigmas > 0) and n_samples > 1:
        draws = monte_carlo_samples(meas, forms, consts, n_samples, seed, workers)
        with np.errstate(invalid="ignore"):
            sig = np.array([np.nanstd(draws[:, j], ddof=1) if np.any(np.isfinite(draws[:, j])) else math.nan
                            for j in range(4)])
    elif uncertainty == "linear" and np.any(sigmas > 0):
        J = np.zeros((4, 4))
        for j in range(4):
            if sigmas[j] == 0:
                continue
            h = 1e-6 * max(abs(values[j]), 1e-3)
            vp, vm = values.copy(), values.copy()
            vp[j] += h
            vm[j] = max(vm[j] - h, 0.0)
            fp = _fold(_solve_point(vp, sigmas, forms, consts)[0])
            fm = _fold(_solve_point(vm, sigmas, forms, consts)[0])
            J[:, j] = (fp - fm) / (vp[j] - vm[j])
        cov = J @ np.diag(sigmas ** 2) @ J.T
        sig = np.sqrt(np.clip(np.diag(cov), 0, None))
    elif uncertainty not in ("montecarlo", "linear", "none"):
        raise ValueError(f"unknown uncertainty method {uncertainty!r}")
    if math.isnan(p[3]):
        sig[3] = math.nan

    return ReconstructedField(
        float(p[0]), float(p[1]), float(p[2]), float(p[3]),
        float(sig[0]), float(sig[1]), float(sig[2]), float(sig[3]),
        note, consistent, tuple(float(r) for r in resid), model, tuple(notes))


def sensitivity(delta_B: float, n: float, T: float) -> float:
    """Field sensitivity delta_B * sqrt(n T).

    With delta_B in uT and T in seconds the result is in uT/sqrt(Hz).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not T > 0:
        raise ValueError("T must be positive")
    return delta_B * math.sqrt(n * T)


def field_uncertainty(delta_R: float, dipole_element: float,
                      consts: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Field uncertainty (uT) implied by a Rabi-frequency uncertainty (MHz)."""
    return 1e3 * delta_R / (SQRT2 * consts.gamma_e * abs(dipole_element))
