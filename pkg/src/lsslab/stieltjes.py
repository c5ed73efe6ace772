"""Companion Stieltjes transform: fixed point solver, inverse map, density.

The central object is the transform ``s_under(z)`` of the companion
spectral law, characterized off the real bulk by the fixed point

    s_under = -1 / (z - y * sum_k w_k t_k / (1 + t_k s_under)),

whose Herglotz branch (Im s_under has the sign of Im z) is the one with
probabilistic meaning.  The transform of the primary law follows from the
companion relation ``s = (s_under + (1 - y)/z) / y``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import BranchViolation, NonConvergence, OutsideSupport, PoleAtAtom
from .spectral_model import PopulationSpectrum, TestFunction, support_interval

_DEFAULT_TOL = 1e-12
_DEFAULT_MAX_ITER = 10_000
_REAL_Z_LIFT = 1e-9  # imaginary offset used to select the branch at real z
_STALL_WINDOW = 20  # non-decreasing residuals before damping kicks in


@dataclass(frozen=True)
class StieltjesSolution:
    """Converged transform values at one point z."""

    z: complex
    s_under: complex
    s: complex
    residual: float
    iterations: int


def _atom_sum(spectrum: PopulationSpectrum, s, weights_times=None):
    """sum_k w_k t_k / (1 + t_k s), vectorized over s."""
    t = spectrum.eigenvalues
    w = spectrum.weights
    s = np.asarray(s, dtype=complex)
    denom = 1.0 + np.multiply.outer(t, s)
    out = np.sum((w * t)[:, None] * (1.0 / denom.reshape(len(t), -1)), axis=0)
    return out.reshape(s.shape) if s.shape else complex(out[0])


def _fixed_point_map(z, s, spectrum: PopulationSpectrum, y: float):
    return -1.0 / (z - y * _atom_sum(spectrum, s))


def _iterate_scalar(z: complex, spectrum: PopulationSpectrum, y: float,
                    tol: float, max_iter: int, s0: complex) -> tuple[complex, float, int]:
    """Damped fixed-point iteration at a single point.

    Starts undamped; once the residual fails to decrease for 20 consecutive
    steps the update is relaxed to ``(1 - w) s + w map(s)`` with w = 0.5,
    halved on every further stall.  Pure-python loop: near the bulk the
    contraction rate degrades to 1 - O(Im z) and the per-step cost matters.
    """
    atoms = spectrum.atoms
    single = atoms[0] if len(atoms) == 1 else None
    s = complex(s0)
    omega = 1.0
    last_res = float("inf")
    stall = 0
    tol_sq = tol * tol
    for it in range(1, max_iter + 1):
        if single is not None:
            t, w = single
            m = -1.0 / (z - y * (w * t / (1.0 + t * s)))
        else:
            acc = 0.0j
            for t, w in atoms:
                acc += w * t / (1.0 + t * s)
            m = -1.0 / (z - y * acc)
        d = m - s
        res_sq = d.real * d.real + d.imag * d.imag
        if res_sq <= tol_sq:
            acc = 0.0j
            for t, w in atoms:
                acc += w * t / (1.0 + t * m)
            m2 = -1.0 / (z - y * acc)
            res2 = abs(m2 - m)
            if res2 <= tol:
                return m, res2, it
            res_sq = res2 * res2
        if res_sq >= last_res:
            stall += 1
            if stall >= _STALL_WINDOW:
                omega *= 0.5
                stall = 0
        else:
            stall = 0
        last_res = res_sq
        s = s + omega * d if omega != 1.0 else m
    raise NonConvergence(
        f"fixed point at z={z} stalled at residual {math.sqrt(last_res):.3e} "
        f"after {max_iter} iterations"
    )


def solve_s_under(z: complex, spectrum: PopulationSpectrum, y_n: float, *,
                  tol: float = _DEFAULT_TOL, max_iter: int = _DEFAULT_MAX_ITER,
                  s0: complex | None = None) -> StieltjesSolution:
    """Solve the companion fixed point at one point off the spectral bulk.

    Real ``z`` (off support only) is handled by continuity: the equation is
    first solved at ``z + 1e-9j`` and the result warm-starts the solve on
    the real axis, which selects the boundary-value branch without sign
    ambiguity.  Raises ``NonConvergence`` if the damped iteration exhausts
    ``max_iter`` and ``BranchViolation`` if the converged point lands on
    the wrong half plane.
    """
    z = complex(z)
    if z == 0:
        raise ValueError("z = 0 is never off the companion support")
    y = float(y_n)
    if z.imag == 0.0:
        lo, hi = support_interval(spectrum, y)
        if lo <= z.real <= hi:
            raise ValueError(f"real z={z.real} lies in the closed support [{lo}, {hi}]")
        if s0 is None:
            lifted = solve_s_under(z + 1j * _REAL_Z_LIFT, spectrum, y,
                                   tol=tol, max_iter=max_iter)
            s0 = lifted.s_under
    if s0 is None:
        s0 = -1.0 / z
    s, res, it = _iterate_scalar(z, spectrum, y, tol, max_iter, s0)
    if z.imag != 0.0 and s.imag * z.imag < 0.0:
        raise BranchViolation(f"converged to Im s_under = {s.imag:.3e} at Im z = {z.imag:.3e}")
    s_primary = (s + (1.0 - y) / z) / y
    return StieltjesSolution(z=z, s_under=s, s=s_primary, residual=res, iterations=it)


def s_under_grid(z: np.ndarray, spectrum: PopulationSpectrum, y_n: float, *,
                 tol: float = _DEFAULT_TOL, max_iter: int = _DEFAULT_MAX_ITER,
                 s0: np.ndarray | None = None) -> np.ndarray:
    """Vectorized solve over an array of strictly complex points.

    Plain simultaneous iteration handles the bulk of the grid; stragglers
    fall back to the per-point damped solver.  Results are branch checked
    pointwise.
    """
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    if np.any(flat.imag == 0.0):
        raise ValueError("grid solver expects Im z != 0 at every point; use solve_s_under")
    y = float(y_n)
    s = (-1.0 / flat) if s0 is None else np.asarray(s0, dtype=complex).ravel().copy()
    active = np.ones(flat.shape, dtype=bool)
    # vectorized plain sweep; converges everything except near-edge stragglers
    for _ in range(5000):
        if not active.any():
            break
        m = _fixed_point_map(flat[active], s[active], spectrum, y)
        res = np.abs(m - s[active])
        s[active] = m
        still = res > tol
        idx = np.flatnonzero(active)
        active[idx[~still]] = False
    for i in np.flatnonzero(active):
        s[i], _, _ = _iterate_scalar(flat[i], spectrum, y, tol, max_iter, s[i])
    bad = s.imag * flat.imag < 0.0
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise BranchViolation(f"wrong branch at z={flat[i]}: Im s_under={s[i].imag:.3e}")
    return s.reshape(z.shape)


def companion_to_primary(s_under: np.ndarray, z: np.ndarray, y_n: float) -> np.ndarray:
    """Transform of the primary law from the companion one."""
    return (s_under + (1.0 - y_n) / np.asarray(z, dtype=complex)) / y_n


def inverse_map(s_under: complex, spectrum: PopulationSpectrum, y_n: float) -> complex:
    """Exact inverse of the companion transform.

    ``z(s_under) = -1/s_under + y * sum_k w_k t_k / (1 + t_k s_under)``.
    Raises ``PoleAtAtom`` when an atom makes ``1 + t_k s_under`` vanish.
    """
    s_under = complex(s_under)
    if s_under == 0:
        raise ValueError("inverse map undefined at s_under = 0")
    for t, _ in spectrum.atoms:
        if abs(1.0 + t * s_under) < 1e-14:
            raise PoleAtAtom(f"1 + t*s_under vanished at atom t={t}")
    return -1.0 / s_under + y_n * _atom_sum(spectrum, s_under)


_DENSITY_EPS = (1e-3, 5e-4, 2.5e-4)
# plain iteration slows to 1 - O(eps) inside the bulk; the density schedule
# therefore runs with a much larger iteration budget than the off-bulk default
_DENSITY_MAX_ITER = 500_000


def lsd_density(x: float, spectrum: PopulationSpectrum, y_n: float) -> float:
    """Spectral density of the limiting law at a point inside the bulk.

    Evaluates ``Im s(x + i eps) / pi`` on the fixed three-step geometric
    schedule and removes the O(eps) boundary error with one Richardson
    step on the two finest values.  Raises ``OutsideSupport`` for x beyond
    the enclosing interval or when the extrapolation comes out below
    -1e-6 (a point in a spectral gap rounds to zero instead).
    """
    lo, hi = support_interval(spectrum, y_n)
    if not (lo < x < hi):
        raise OutsideSupport(f"x={x} outside the enclosing interval [{lo}, {hi}]")
    vals = []
    warm = None
    for eps in _DENSITY_EPS:
        sol = solve_s_under(complex(x, eps), spectrum, y_n, s0=warm,
                            max_iter=_DENSITY_MAX_ITER)
        warm = sol.s_under
        vals.append(sol.s.imag / np.pi)
    extrapolated = 2.0 * vals[2] - vals[1]
    if extrapolated < -1e-6:
        raise OutsideSupport(f"density extrapolated to {extrapolated:.3e} at x={x}")
    return max(extrapolated, 0.0)


def lss_centering(f: TestFunction, spectrum: PopulationSpectrum, y_n: float, p: int,
                  contour=None) -> float:
    """Deterministic centering term of the linear spectral statistic.

    Computes ``-(p / 2 pi i) * contour integral of f(z) s(z) dz`` with the
    transform of the primary law on a rectangle enclosing the bulk.  The
    imaginary part must vanish up to quadrature error (checked against
    1e-8 relative) and is discarded.
    """
    from . import contour as contour_mod

    if contour is None:
        contour = contour_mod.build_contour(spectrum, y_n, f=f)

    def integrand(z):
        s_u = s_under_grid(z, spectrum, y_n)
        return f(z) * companion_to_primary(s_u, z, y_n)

    raw = contour_mod.integrate(integrand, contour)
    value = -p / (2.0j * np.pi) * raw
    if abs(value.imag) > 1e-8 * (1.0 + abs(value.real)):
        raise NonConvergence(
            f"centering integral kept an imaginary residue {value.imag:.3e}"
        )
    return float(value.real)


def mp_quadratic_root(z: complex, y: float) -> complex:
    """Closed-form companion transform for the single-atom-at-1 population.

    Root of ``z s^2 + (z + 1 - y) s + 1 = 0`` on the Herglotz branch;
    independent oracle for the fixed point solver.
    """
    z = complex(z)
    b = z + 1.0 - y
    disc = cmath.sqrt(b * b - 4.0 * z)
    r1 = (-b + disc) / (2.0 * z)
    r2 = (-b - disc) / (2.0 * z)
    if z.imag != 0.0:
        return r1 if r1.imag * z.imag > 0 else r2
    # real z off support: the branch continuous from above has larger |.|
    lifted = mp_quadratic_root(z + 1j * _REAL_Z_LIFT, y)
    return r1 if abs(r1 - lifted) < abs(r2 - lifted) else r2
