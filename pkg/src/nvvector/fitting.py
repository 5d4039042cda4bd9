"""Levenberg-Marquardt least squares and the ODMR / Rabi / ratio-curve fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .signal_synth import ODMRSpectrum, RabiTrace, damped_cosine, gaussian

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


class FitError(RuntimeError):
    """A fit could not produce a usable result."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SingularFitError(FitError):
    """J^T J is singular at the solution: some parameters are indeterminate."""


class DegenerateFitError(FitError):
    """Two fitted peaks collapsed onto each other."""


@dataclass(frozen=True)
class ModelSpec:
    residual: Callable[[np.ndarray], np.ndarray]
    n_params: int
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    names: tuple = ()


@dataclass
class FitResult:
    names: tuple
    values: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def params(self) -> dict:
        return dict(zip(self.names, (float(v) for v in self.values)))

    @property
    def stderr(self) -> dict:
        return dict(zip(self.names, (float(s) for s in np.sqrt(np.clip(np.diag(self.covariance), 0, None)))))

    def __getitem__(self, name):
        return self.params[name]


def numeric_jacobian(fun, x, r0=None):
    """Central finite differences."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        h = 6e-6 * max(abs(x[j]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * h))
    return np.column_stack(cols) if cols else np.zeros((len(r0 if r0 is not None else fun(x)), 0))


def _covariance(J, cost, scale, rcond=1e-9):
    m, n = J.shape
    if n == 0:
        return np.zeros((0, 0)), True
    s = np.linalg.svd(J, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= rcond * s[0]:
        return np.full((n, n), np.nan), False
    cov = np.linalg.inv(J.T @ J)
    cov = 0.5 * (cov + cov.T)
    if scale and m > n:
        cov *= cost / (m - n)
    return cov, True


def least_squares(model: ModelSpec, init, *, max_iter: int = 200, gtol: float = 1e-10,
                  xtol: float = 1e-12, lam0: float = 1e-3, scale_covariance: bool = True,
                  history: list | None = None) -> FitResult:
    """Minimize ||r(p)||^2 by Levenberg-Marquardt.

    Damping is multiplicative (x10 on a rejected step, /10 on an accepted one)
    with Marquardt's diagonal scaling.  Each iteration first tries the
    undamped Gauss-Newton step and keeps it when the actual decrease is at
    least 3/4 of the linearized prediction.  Convergence means either the scaled
    gradient max_j |J_j . r| / (||J_j|| ||r||) <= gtol or a proposed step
    below xtol * (||p|| + xtol).  A singular J^T J at the end raises
    SingularFitError; running out of iterations returns converged=False.
    """
    x = np.array(init, dtype=float)
    if x.size != model.n_params:
        raise ValueError(f"expected {model.n_params} initial values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial parameters must be finite")
    names = tuple(model.names) or tuple(f"p{i}" for i in range(x.size))

    def jac(p, r):
        return np.asarray(model.jacobian(p), dtype=float) if model.jacobian else numeric_jacobian(model.residual, p, r)

    r = np.asarray(model.residual(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals are not finite at the initial guess")
    cost = float(r @ r)
    lam = lam0
    converged, message = False, "maximum iterations reached"
    it = 0
    J = jac(x, r)
    while it < max_iter:
        it += 1
        if cost == 0.0:
            converged, message = True, "exact fit"
            break
        g = J.T @ r
        col = np.linalg.norm(J, axis=0)
        rn = math.sqrt(cost)
        with np.errstate(divide="ignore", invalid="ignore"):
            scaled = np.where(col > 0, np.abs(g) / (col * rn), 0.0)
        if scaled.size == 0 or scaled.max() <= gtol:
            converged, message = True, "gradient tolerance"
            break
        A = J.T @ J
        diag = np.diag(A).copy()
        floor = 1e-12 * diag.max() if diag.max() > 0 else 1e-12
        diag = np.maximum(diag, floor)
        accepted = False
        # undamped Gauss-Newton trial, kept only where the linearization predicts
        # the actual decrease well; linear models then converge in one step
        try:
            gn = np.linalg.solve(A, -g)
        except np.linalg.LinAlgError:
            gn = None
        if gn is not None and np.all(np.isfinite(gn)):
            if np.linalg.norm(gn) <= xtol * (np.linalg.norm(x) + xtol):
                converged, message = True, "step tolerance"
                break
            r_gn = np.asarray(model.residual(x + gn), dtype=float)
            cost_gn = float(r_gn @ r_gn) if np.all(np.isfinite(r_gn)) else math.inf
            predicted = -float(gn @ g)
            if cost_gn < cost and predicted > 0 and (cost - cost_gn) >= 0.75 * predicted:
                if history is not None:
                    history.append((cost, cost_gn))
                x, r, cost = x + gn, r_gn, cost_gn
                J = jac(x, r)
                continue
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol):
                converged, message = True, "step tolerance"
                break
            x_new = x + step
            r_new = np.asarray(model.residual(x_new), dtype=float)
            cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            if cost_new < cost:
                if history is not None:
                    history.append((cost, cost_new))
                x, r, cost = x_new, r_new, cost_new
                lam = max(lam / 10.0, 1e-15)
                accepted = True
                break
            lam *= 10.0
            if lam > 1e20:
                converged, message = True, "no further decrease possible"
                break
        if not accepted:
            break
        J = jac(x, r)

    cov, ok = _covariance(J, cost, scale_covariance)
    result = FitResult(names, x, cov, math.sqrt(cost), it, converged, message)
    if not ok:
        raise SingularFitError("J^T J is singular: parameters are indeterminate", result)
    return result


def _transform_result(res: FitResult, names, values, T):
    """Re-express a fit in physical parameters; T is d(physical)/d(internal)."""
    cov = T @ res.covariance @ T.T
    return FitResult(tuple(names), np.asarray(values, dtype=float), 0.5 * (cov + cov.T),
                     res.residual_norm, res.iterations, res.converged, res.message, res.extra)


def _weights(sigma, n):
    if sigma is None:
        return np.ones(n)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
    return 1.0 / sigma


# ---------------------------------------------------------------- Gaussian peaks

def _estimate_fwhm(freq, signal, baseline, center):
    i = int(np.argmin(np.abs(freq - center)))
    half = baseline - 0.5 * (baseline - signal[i])
    lo = i
    while lo > 0 and signal[lo - 1] < half:
        lo -= 1
    hi = i
    while hi < len(freq) - 1 and signal[hi + 1] < half:
        hi += 1
    step = np.median(np.diff(freq))
    return max((freq[hi] - freq[lo]) + step, 2 * step)


def fit_gaussian_peaks(spectrum: ODMRSpectrum, n_peaks: int, init_centers: Sequence[float],
                       init_fwhm: float | None = None, sigma=None, **options) -> FitResult:
    """Fit baseline - sum_k depth_k G(f; center_k, fwhm_k) to an ODMR spectrum.

    Depths and widths stay non-negative through a square / absolute-value
    transform; reported covariance is in physical units.
    """
    if n_peaks not in (1, 2, 3):
        raise ValueError("n_peaks must be 1, 2 or 3")
    init_centers = [float(c) for c in init_centers]
    if len(init_centers) != n_peaks:
        raise ValueError("need one initial center per peak")
    f = np.asarray(spectrum.freq_grid, dtype=float)
    y = np.asarray(spectrum.signal, dtype=float)
    for c in init_centers:
        if not f[0] <= c <= f[-1]:
            raise ValueError(f"initial center {c} MHz outside the grid")
    w = _weights(sigma, f.size)
    baseline0 = float(np.median(np.concatenate([y[:3], y[-3:]])))

    p0 = []
    for c in init_centers:
        depth = max(baseline0 - y[int(np.argmin(np.abs(f - c)))], 0.0)
        width = init_fwhm if init_fwhm else _estimate_fwhm(f, y, baseline0, c)
        p0 += [c, width, math.sqrt(depth)]
    p0.append(baseline0)

    def model(p):
        out = np.full_like(f, p[-1])
        for k in range(n_peaks):
            c, wd, q = p[3 * k:3 * k + 3]
            out -= q * q * gaussian(f, c, abs(wd) if wd else 1e-300)
        return out

    def jacobian(p):
        cols = []
        for k in range(n_peaks):
            c, wd, q = p[3 * k:3 * k + 3]
            fw = abs(wd)
            g = gaussian(f, c, fw)
            k4 = 4.0 * math.log(2.0)
            cols.append(-q * q * g * (2 * k4 * (f - c) / fw ** 2))
            cols.append(-q * q * g * (2 * k4 * (f - c) ** 2 / fw ** 3) * math.copysign(1.0, wd))
            cols.append(-2 * q * g)
        cols.append(np.ones_like(f))
        return np.column_stack(cols) * w[:, None]

    names = []
    for k in range(n_peaks):
        names += [f"center_{k}", f"fwhm_{k}", f"depth_{k}"]
    names.append("baseline")
    spec = ModelSpec(lambda p: (model(p) - y) * w, len(p0), jacobian, tuple(names))
    singular = None
    try:
        res = least_squares(spec, p0, scale_covariance=sigma is None, **options)
    except SingularFitError as err:
        singular, res = err, err.result

    p = res.values
    values, T = p.copy(), np.eye(p.size)
    for k in range(n_peaks):
        values[3 * k + 1] = abs(p[3 * k + 1])
        T[3 * k + 1, 3 * k + 1] = math.copysign(1.0, p[3 * k + 1])
        values[3 * k + 2] = p[3 * k + 2] ** 2
        T[3 * k + 2, 3 * k + 2] = 2 * p[3 * k + 2]
    out = _transform_result(res, names, values, T)
    # a collapse usually also makes J^T J singular; report it as the more specific failure
    for i in range(n_peaks):
        for j in range(i + 1, n_peaks):
            ci, cj = values[3 * i], values[3 * j]
            fw = max(values[3 * i + 1], values[3 * j + 1])
            if abs(ci - cj) < fw / 10:
                raise DegenerateFitError(
                    f"peaks {i} and {j} collapsed ({ci:.3f} vs {cj:.3f} MHz)", out)
    if singular is not None:
        raise SingularFitError(str(singular), out)
    return out


# ---------------------------------------------------------------- damped cosine

def _estimate_frequency(t, y):
    y = y - y.mean()
    n = 16 * len(t)
    dt = t[1] - t[0]
    spec = np.abs(np.fft.rfft(y, n))
    freqs = np.fft.rfftfreq(n, dt)
    return float(freqs[1 + np.argmax(spec[1:])])


def fit_damped_cosine(trace: RabiTrace, init: Sequence[float] | None = None, sigma=None,
                      **options) -> FitResult:
    """Fit a cos(2 pi nu t) exp(-t/T_R) + c.  Returns (a, nu, T_R, c).

    The decay is fitted as a rate 1/T_R so that an undamped trace stays
    well-conditioned; T_R and its uncertainty are converted back.
    """
    t = np.asarray(trace.times, dtype=float)
    y = np.asarray(trace.signal, dtype=float)
    if t.size < 5:
        raise ValueError("need at least 5 samples")
    dt = float(np.min(np.diff(t)))
    if init is None:
        c0 = float(y.mean())
        a0 = float(y[0] - c0)
        nu0 = _estimate_frequency(t, y)
        tr0 = float(t[-1] - t[0])
    else:
        a0, nu0, tr0, c0 = (float(v) for v in init)
    nyquist = 0.5 / dt
    if abs(nu0) > nyquist:
        raise ValueError(f"initial frequency {nu0} MHz exceeds the Nyquist limit {nyquist} MHz (aliasing)")
    if abs(nu0) * 8 * dt > 1.0:
        raise ValueError("fewer than 8 samples per oscillation period at the initial frequency")
    w = _weights(sigma, t.size)
    two_pi = 2 * np.pi

    def jacobian(p):
        a, nu, k, c = p
        e = np.exp(-k * t)
        cs, sn = np.cos(two_pi * nu * t), np.sin(two_pi * nu * t)
        return np.column_stack([cs * e, -a * two_pi * t * sn * e, -a * t * cs * e,
                                np.ones_like(t)]) * w[:, None]

    def residual(p):
        a, nu, k, c = p
        return (a * np.cos(two_pi * nu * t) * np.exp(-k * t) + c - y) * w

    spec = ModelSpec(residual, 4, jacobian, ("a", "nu", "rate", "c"))
    res = least_squares(spec, [a0, nu0, 1.0 / tr0, c0], scale_covariance=sigma is None, **options)
    a, nu, k, c = res.values
    T = np.diag([1.0, math.copysign(1.0, nu), -1.0 / k ** 2 if k else 0.0, 1.0])
    return _transform_result(res, ("a", "nu", "T_R", "c"),
                             [a, abs(nu), 1.0 / k if k else math.inf, c], T)


# ---------------------------------------------------------------- Lorentzian ratio

def lorentzian(eta, a, b, eta0, c):
    eta = np.asarray(eta, dtype=float)
    return a * b / ((eta - eta0) ** 2 + b ** 2) + c


def fit_lorentzian_ratio(curve, sigma=None, clamp: float = 1e6, **options) -> FitResult:
    """Fit a b / ((eta - eta0)^2 + b^2) + c to (eta_deg, ratio) pairs.

    Points at or above ``clamp`` mark an undefined ratio and are dropped.
    A ratio curve with a true pole drives the half-width b below anything
    the sampling can resolve, leaving (a, b) indeterminate along a valley;
    b is then pinned at half the sample spacing and (a, eta0, c) refitted,
    which ``extra["b_pinned"]`` records.  A peak position outside the
    sampled range is reported as not converged.
    """
    data = np.asarray(curve, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("curve must be a sequence of (eta_deg, ratio) pairs")
    keep = data[:, 1] < clamp
    eta, y = data[keep, 0], data[keep, 1]
    if eta.size < 5:
        raise ValueError("need at least 5 unclamped (eta_deg, ratio) points")
    w = _weights(None if sigma is None else np.broadcast_to(sigma, data.shape[:1])[keep], eta.size)

    i = int(np.argmax(y))
    c0 = float(y.min())
    peak = y[i] - c0
    above = np.flatnonzero(y - c0 >= 0.5 * peak)
    b_min = 0.5 * float(np.min(np.diff(np.unique(eta))))
    b0 = max(0.5 * (eta[above].max() - eta[above].min()), b_min)
    # a peak between samples: start from the data's centroid above half maximum
    e0 = float(np.average(eta[above], weights=y[above] - c0))

    def jac_full(p):
        a, b, e0, c = p
        d = eta - e0
        den = d ** 2 + b ** 2
        return np.column_stack([b / den, a * (d ** 2 - b ** 2) / den ** 2,
                                2 * a * b * d / den ** 2, np.ones_like(eta)]) * w[:, None]

    names = ("a", "b", "eta0", "c")
    spec = ModelSpec(lambda p: (lorentzian(eta, *p) - y) * w, 4, jac_full, names)
    scale = sigma is None
    res = None
    try:
        res = least_squares(spec, [peak * b0, b0, e0, c0], scale_covariance=scale, **options)
    except SingularFitError:
        pass
    pinned = bool(res is None or not res.converged or abs(res.values[1]) < b_min)
    if pinned:
        def residual(q):
            return (lorentzian(eta, q[0], b_min, q[1], q[2]) - y) * w

        def jacobian(q):
            return jac_full([q[0], b_min, q[1], q[2]])[:, [0, 2, 3]]

        sub = ModelSpec(residual, 3, jacobian, ("a", "eta0", "c"))
        r3 = least_squares(sub, [peak * b_min, e0, c0], scale_covariance=scale, **options)
        cov = np.zeros((4, 4))
        idx = [0, 2, 3]
        cov[np.ix_(idx, idx)] = r3.covariance
        a, e0, c = r3.values
        res = FitResult(names, np.array([a, b_min, e0, c]), cov, r3.residual_norm,
                        r3.iterations, r3.converged, r3.message + "; b pinned at sampling resolution")
    elif res.values[1] < 0:
        res.values[:2] *= -1
        res.covariance[:, :2] *= -1
        res.covariance[:2, :] *= -1
    res.extra["b_pinned"] = pinned
    res.extra["n_excluded"] = int((~keep).sum())
    edge = eta[i] in (eta.min(), eta.max())
    if edge or not eta.min() <= res.values[2] <= eta.max():
        res.converged = False
        res.message = "peak position outside the sampled range"
    return res
