"""NV ground-state spin Hamiltonian, labeled eigenstates and transition dipoles.

All matrices use the m_s basis order (+1, 0, -1).  Energies are in MHz,
fields in mT, angles in radians.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Sequence

import numpy as np

SQRT2 = math.sqrt(2.0)
HALF_PI = 0.5 * math.pi

# reference vectors in the (+1, 0, -1) basis
KET_ZERO = np.array([0.0, 1.0, 0.0], dtype=complex)
KET_MINUS = np.array([-1.0, 0.0, 1.0], dtype=complex) / SQRT2  # (|-1> - |+1>)/sqrt2
KET_PLUS = np.array([1.0, 0.0, 1.0], dtype=complex) / SQRT2  # (|-1> + |+1>)/sqrt2

MIXING_THRESHOLD = 0.95
TIE_TOL = 1e-9
THETA_NUDGE = 1e-3  # rad, tilt used to resolve overlap ties on the NV axis


class LabelingError(ValueError):
    """Eigenvector labels cannot be assigned unambiguously."""


@dataclass(frozen=True)
class PhysicalConstants:
    D: float = 2870.0  # MHz
    gamma_e: float = 28.02495  # MHz / mT

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if not self.gamma_e > 0:
            raise ValueError(f"gamma_e must be positive, got {self.gamma_e}")


DEFAULT_CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class StaticField:
    """Static bias field; its transverse projection defines the X axis."""

    B: float  # mT
    theta: float  # rad, polar angle from the NV axis

    def __post_init__(self):
        if not self.B >= 0:
            raise ValueError(f"B must be >= 0 mT, got {self.B}")
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")

    @property
    def is_perpendicular(self) -> bool:
        return self.theta == HALF_PI


class Label(str, Enum):
    ZERO = "0"
    MINUS = "-"
    PLUS = "+"
    ALPHA = "alpha"
    BETA = "beta"

    @property
    def role(self) -> "Label":
        """Role of the state, collapsing the high-field names onto ZERO/PLUS."""
        return {Label.ALPHA: Label.ZERO, Label.BETA: Label.PLUS}.get(self, self)

    def __str__(self):
        return self.value


def spin1_operators():
    """Return S_x, S_y, S_z for spin 1 in the (+1, 0, -1) basis."""
    m = np.array([1.0, 0.0, -1.0])
    # <m+1|S+|m> = sqrt(s(s+1) - m(m+1)), s = 1
    s_plus = np.zeros((3, 3), dtype=complex)
    for j in range(1, 3):
        s_plus[j - 1, j] = math.sqrt(2.0 - m[j] * (m[j] + 1.0))
    s_minus = s_plus.conj().T
    sx = 0.5 * (s_plus + s_minus)
    sy = -0.5j * (s_plus - s_minus)
    sz = np.diag(m).astype(complex)
    return sx, sy, sz


_SX, _SY, _SZ = spin1_operators()
SPIN_OPERATORS = (_SX, _SY, _SZ)


def ground_hamiltonian(consts: PhysicalConstants, field: StaticField) -> np.ndarray:
    """D S_z^2 + gamma_e B (sin(theta) S_x + cos(theta) S_z), in MHz."""
    zeeman = consts.gamma_e * field.B
    if field.is_perpendicular:
        st, ct = 1.0, 0.0  # keep the diagonal exactly zero at the anti-crossing
    else:
        st, ct = math.sin(field.theta), math.cos(field.theta)
    return consts.D * (_SZ @ _SZ) + zeeman * (st * _SX + ct * _SZ)


def is_hermitian(H: np.ndarray, atol: float = 1e-12) -> bool:
    H = np.asarray(H)
    return H.shape == (3, 3) and bool(np.all(np.abs(H - H.conj().T) <= atol))


@dataclass(frozen=True)
class LabeledEigensystem:
    """Eigenpairs in ascending energy order; ``states[:, k]`` has ``labels[k]``."""

    levels: np.ndarray
    states: np.ndarray
    labels: tuple
    field: StaticField | None = None
    consts: PhysicalConstants = DEFAULT_CONSTANTS

    def index(self, label: Label) -> int:
        role = Label(label).role
        for k, lab in enumerate(self.labels):
            if lab.role is role:
                return k
        raise KeyError(label)

    def level(self, label: Label) -> float:
        return float(self.levels[self.index(label)])

    def state(self, label: Label) -> np.ndarray:
        return self.states[:, self.index(label)]

    def label(self, role: Label) -> Label:
        return self.labels[self.index(role)]

    @property
    def mixed(self) -> bool:
        return Label.BETA in self.labels


def _fix_phase(v: np.ndarray) -> np.ndarray:
    mags = np.abs(v)
    # first component within rounding of the maximum, so near-ties stay stable
    k = int(np.flatnonzero(mags >= mags.max() - 1e-12)[0])
    return v * (abs(v[k]) / v[k])


def _closed_form_perpendicular(H: np.ndarray):
    """Exact diagonalization when (|-1> - |+1>)/sqrt2 decouples from the rest."""
    e_minus = float(np.real(KET_MINUS.conj() @ H @ KET_MINUS))
    a = float(np.real(KET_ZERO.conj() @ H @ KET_ZERO))
    d = float(np.real(KET_PLUS.conj() @ H @ KET_PLUS))
    g = complex(KET_ZERO.conj() @ H @ KET_PLUS)
    mean, half = 0.5 * (a + d), 0.5 * (d - a)
    root = math.hypot(half, abs(g))
    lo, hi = mean - root, mean + root
    if abs(g) == 0.0:
        v_lo, v_hi = (KET_ZERO, KET_PLUS) if a <= d else (KET_PLUS, KET_ZERO)
    else:
        # eigenvector of [[a, g], [g*, d]] for eigenvalue hi: (g, hi - a)
        c0, cp = g, hi - a
        n = math.hypot(abs(c0), abs(cp))
        v_hi = (c0 * KET_ZERO + cp * KET_PLUS) / n
        v_lo = (-np.conj(cp) * KET_ZERO + np.conj(c0) * KET_PLUS) / n
    levels = np.array([lo, e_minus, hi])
    states = np.column_stack([v_lo, KET_MINUS, v_hi])
    order = np.argsort(levels, kind="stable")
    return levels[order], states[:, order]


def _resolve_degenerate(levels: np.ndarray, states: np.ndarray, scale: float):
    """Rotate each degenerate pair so that one member is the projection of
    (|-1> - |+1>)/sqrt2, falling back to |0>, onto the pair's subspace."""
    tol = TIE_TOL * max(1.0, scale)
    states = states.copy()
    k = 0
    while k < 2:
        if levels[k + 1] - levels[k] <= tol:
            sub = states[:, k:k + 2]
            for ref in (KET_MINUS, KET_ZERO):
                proj = sub @ (sub.conj().T @ ref)
                n = np.linalg.norm(proj)
                if n > 1e-6:
                    first = proj / n
                    other = sub[:, 0] - first * (first.conj() @ sub[:, 0])
                    if np.linalg.norm(other) < 1e-6:
                        other = sub[:, 1] - first * (first.conj() @ sub[:, 1])
                    states[:, k] = first
                    states[:, k + 1] = other / np.linalg.norm(other)
                    break
            k += 2
        else:
            k += 1
    return states


def _pick(overlaps: np.ndarray, candidates: Sequence[int], levels: np.ndarray, what: str,
          scale: float, energy_tiebreak: bool) -> int:
    cands = sorted(candidates, key=lambda i: (-overlaps[i], levels[i]))
    best, runner = cands[0], cands[1]
    if overlaps[best] - overlaps[runner] <= TIE_TOL:
        if energy_tiebreak and abs(levels[best] - levels[runner]) > TIE_TOL * max(1.0, scale):
            return min(best, runner, key=lambda i: levels[i])
        raise LabelingError(
            f"ambiguous {what} label: overlaps {overlaps[best]:.12f} and "
            f"{overlaps[runner]:.12f} tie; perturb theta to lift the degeneracy")
    return best


def _can_nudge(field) -> bool:
    return field is not None and field.B > 0 and field.theta in (0.0, math.pi)


def _labels_from_nudged(states, consts, field):
    """(i_minus, i_zero, i_plus) matched to the eigensystem of the tilted field."""
    theta = THETA_NUDGE if field.theta == 0.0 else math.pi - THETA_NUDGE
    ref = solve(StaticField(field.B, theta), consts)
    roles = (Label.MINUS, Label.ZERO, Label.PLUS)
    ov = np.abs(np.array([[np.vdot(ref.state(r), states[:, k]) for k in range(3)] for r in roles]))
    best = max(itertools.permutations(range(3)), key=lambda p: ov[0, p[0]] * ov[1, p[1]] * ov[2, p[2]])
    return best


def eigensystem(H: np.ndarray, consts: PhysicalConstants = DEFAULT_CONSTANTS,
                field: StaticField | None = None) -> LabeledEigensystem:
    """Diagonalize ``H`` exactly and label the states by their physical role.

    MINUS is the state with the largest overlap with (|-1> - |+1>)/sqrt2;
    of the remaining two, ZERO has the largest overlap with |0>.  When the
    MINUS overlaps of two non-degenerate states tie (field along the NV
    axis, where |+1> and |-1> overlap equally) the labels are carried over
    from the field tilted by THETA_NUDGE, i.e. the limit from inside
    (0, pi); without a field the lower-energy state is taken.
    ZERO/PLUS become ALPHA/BETA once |<0|ZERO>|^2 < 0.95.
    """
    H = np.asarray(H, dtype=complex)
    if not is_hermitian(H):
        raise ValueError("Hamiltonian is not Hermitian")
    scale = float(np.max(np.abs(H))) if H.size else 1.0

    minus_resid = np.linalg.norm(H @ KET_MINUS - (KET_MINUS.conj() @ H @ KET_MINUS) * KET_MINUS)
    if field is not None and field.is_perpendicular and minus_resid <= 1e-12 * max(1.0, scale):
        levels, states = _closed_form_perpendicular(H)
    else:
        levels, states = np.linalg.eigh(H)
    states = _resolve_degenerate(levels, states, scale)

    minus_ov = np.abs(KET_MINUS.conj() @ states)
    zero_ov = np.abs(KET_ZERO.conj() @ states)
    try:
        i_minus = _pick(minus_ov, range(3), levels, "MINUS", scale,
                        energy_tiebreak=not _can_nudge(field))
        rest = [i for i in range(3) if i != i_minus]
        i_zero = _pick(zero_ov, rest, levels, "ZERO", scale, energy_tiebreak=False)
        i_plus = rest[0] if rest[1] == i_zero else rest[1]
    except LabelingError:
        if not _can_nudge(field):
            raise
        i_minus, i_zero, i_plus = _labels_from_nudged(states, consts, field)

    mixed = zero_ov[i_zero] ** 2 < MIXING_THRESHOLD
    labels = [None] * 3
    labels[i_minus] = Label.MINUS
    labels[i_zero] = Label.ALPHA if mixed else Label.ZERO
    labels[i_plus] = Label.BETA if mixed else Label.PLUS

    states = np.column_stack([_fix_phase(states[:, k]) for k in range(3)])
    levels = np.array(levels, dtype=float)
    levels.setflags(write=False)
    states.setflags(write=False)
    return LabeledEigensystem(levels, states, tuple(labels), field, consts)


def solve(field: StaticField, consts: PhysicalConstants = DEFAULT_CONSTANTS) -> LabeledEigensystem:
    """Build the Hamiltonian for ``field`` and return its labeled eigensystem."""
    return eigensystem(ground_hamiltonian(consts, field), consts, field)


@dataclass(frozen=True)
class Transition:
    """Transition between two labeled states.

    ``dipole`` holds (<from|S_x|to>, <from|S_y|to>, <from|S_z|to>).
    """

    from_label: Label
    to_label: Label
    frequency: float  # MHz
    dipole: np.ndarray = dc_field(repr=False)

    @property
    def name(self) -> str:
        return f"{self.from_label}<->{self.to_label}"

    def matches(self, a: Label, b: Label) -> bool:
        roles = {self.from_label.role, self.to_label.role}
        return roles == {Label(a).role, Label(b).role}


TRANSITION_PAIRS = ((Label.ZERO, Label.MINUS), (Label.ZERO, Label.PLUS), (Label.MINUS, Label.PLUS))


def transitions(sys: LabeledEigensystem) -> list[Transition]:
    """The three transitions (0<->-, 0<->+, -<->+) with frequencies and dipoles."""
    out = []
    for a, b in TRANSITION_PAIRS:
        va, vb = sys.state(a), sys.state(b)
        dip = np.array([va.conj() @ S @ vb for S in SPIN_OPERATORS])
        dip.setflags(write=False)
        out.append(Transition(sys.label(a), sys.label(b),
                              abs(sys.level(b) - sys.level(a)), dip))
    return out


def find_transition(trs: Sequence[Transition], a: Label, b: Label) -> Transition:
    for tr in trs:
        if tr.matches(a, b):
            return tr
    raise KeyError(f"no transition {a}<->{b}")


def anticrossing_scan(consts: PhysicalConstants, B: float, theta_grid):
    """Upper two levels (the m_s = +-1 branch) for each theta in the grid."""
    theta_grid = list(theta_grid)
    if not theta_grid:
        raise ValueError("theta grid is empty")
    out = []
    for th in theta_grid:
        levels = solve(StaticField(B, float(th)), consts).levels
        out.append((float(th), (float(levels[1]), float(levels[2]))))
    return out
