"""Normality diagnostics: KS distance, rate fits, the Stein machinery,
the quadratic-form moment probe, and the nested Monte-Carlo variance check.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special

from .errors import (CostBudgetExceeded, EmptySample, NonPositiveKs, OutOfRange,
                     TooFewPoints)
from .spectral_model import EntryEnsemble, PopulationSpectrum, TestFunction

_SQRT2 = math.sqrt(2.0)
_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


def norm_cdf(x):
    """Standard normal distribution function via the complementary error function."""
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / _SQRT2)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-x * x / 2.0) / math.sqrt(2.0 * math.pi)


def ks_to_normal(samples) -> float:
    """Exact one-sample Kolmogorov-Smirnov distance to the standard normal.

    Uses the order-statistic formula
    ``max_i max(i/m - Phi(x_(i)), Phi(x_(i)) - (i-1)/m)``,
    never a binned empirical distribution.
    """
    xs = np.asarray(samples, dtype=float)
    if xs.size == 0:
        raise EmptySample("KS distance of an empty sample")
    if not np.all(np.isfinite(xs)):
        raise ValueError("samples must be finite")
    xs = np.sort(xs)
    m = xs.size
    cdf = norm_cdf(xs)
    i = np.arange(1, m + 1)
    d_plus = np.max(i / m - cdf)
    d_minus = np.max(cdf - (i - 1) / m)
    return float(max(d_plus, d_minus))


@dataclass(frozen=True)
class RateFit:
    """Log-log least-squares fit of KS distance against sample size."""

    exponent: float
    intercept: float
    exponent_ci: tuple[float, float]
    points: tuple[tuple[int, float], ...]


def fit_rate(points, n_boot: int = 1000, seed: int = 0, ci_level: float = 0.90) -> RateFit:
    """OLS of log ks on log n with a percentile bootstrap interval.

    The bootstrap resamples the (n, ks) points themselves - KS values at
    different n come from disjoint experiments - and the interval is
    widened, if necessary, to contain the point estimate.
    """
    pts = [(int(n), float(ks)) for n, ks in points]
    if len(pts) < 3:
        raise TooFewPoints(f"need >= 3 points, got {len(pts)}")
    ns = [n for n, _ in pts]
    if len(set(ns)) != len(ns):
        raise ValueError("n values must be distinct")
    if any(ks <= 0 for _, ks in pts):
        raise NonPositiveKs("all ks values must be positive")
    log_n = np.log([n for n, _ in pts])
    log_ks = np.log([ks for _, ks in pts])
    slope, intercept = np.polyfit(log_n, log_ks, 1)

    rng = np.random.Generator(np.random.PCG64(seed))
    slopes = []
    attempts = 0
    while len(slopes) < n_boot and attempts < 50 * n_boot:
        attempts += 1
        idx = rng.integers(0, len(pts), size=len(pts))
        if len(set(log_n[idx])) < 2:
            continue
        s, _ = np.polyfit(log_n[idx], log_ks[idx], 1)
        slopes.append(s)
    alpha = (1.0 - ci_level) / 2.0
    lo, hi = np.quantile(slopes, [alpha, 1.0 - alpha])
    lo, hi = min(lo, slope), max(hi, slope)
    return RateFit(exponent=float(slope), intercept=float(intercept),
                   exponent_ci=(float(lo), float(hi)), points=tuple(pts))


# ---------------------------------------------------------------------------
# Stein machinery


@dataclass(frozen=True)
class SteinContext:
    """Smoothed-indicator test function: cutoff w0 and ramp width theta."""

    w0: float
    theta: float

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")

    @cached_property
    def Nh(self) -> float:
        return stein_Nh(self)


def stein_h(ctx: SteinContext, w) -> np.ndarray | float:
    """Piecewise-linear ramp: 1 below w0, down to 0 across (w0, w0+theta]."""
    w = np.asarray(w, dtype=float)
    out = np.clip(1.0 + (ctx.w0 - w) / ctx.theta, 0.0, 1.0)
    return out if out.shape else float(out)


def stein_Nh(ctx: SteinContext) -> float:
    """Normal expectation of the ramp, in closed form.

    ``Nh = Phi(a) + (1 + w0/theta) (Phi(b) - Phi(a)) - (phi(a) - phi(b))/theta``
    with ``a = w0``, ``b = w0 + theta``.  Small widths switch to the Taylor
    form ``Phi(a) + theta phi(a)/2 - a theta^2 phi(a)/6`` because the closed
    form cancels catastrophically as theta -> 0.
    """
    a = ctx.w0
    th = ctx.theta
    if th < 1e-4:
        pa = float(norm_pdf(a))
        return float(norm_cdf(a)) + th * pa / 2.0 - a * th * th * pa / 6.0
    b = a + th
    phi_a, phi_b = float(norm_pdf(a)), float(norm_pdf(b))
    cdf_a, cdf_b = float(norm_cdf(a)), float(norm_cdf(b))
    return cdf_a + (1.0 + a / th) * (cdf_b - cdf_a) - (phi_a - phi_b) / th


def _scaled_left(t: float, w: float) -> float:
    """exp(w^2/2) * integral over (-inf, t] of the normal kernel, t <= ... stable."""
    return _SQRT_HALF_PI * float(special.erfcx(-t / _SQRT2)) * math.exp((w * w - t * t) / 2.0)


def _scaled_right(t: float, w: float) -> float:
    """exp(w^2/2) * integral over [t, inf) of the normal kernel."""
    return _SQRT_HALF_PI * float(special.erfcx(t / _SQRT2)) * math.exp((w * w - t * t) / 2.0)


def stein_solution(ctx: SteinContext, w: float) -> float:
    """Bounded solution of ``g'(w) - w g(w) = h(w) - Nh`` for the ramp h.

    Evaluated through scaled complementary-error-function terms so that no
    exp(w^2/2) factor is ever formed: the left-tail representation serves
    w <= 0 and the right-tail one w > 0, each combining exponents that are
    all nonpositive.  Guaranteed for |w| <= 30.
    """
    if abs(w) > 30.0:
        raise OutOfRange(f"stein_solution stable range is |w| <= 30, got {w}")
    a = ctx.w0
    b = ctx.w0 + ctx.theta
    nh = ctx.Nh
    ramp0 = 1.0 + a / ctx.theta - nh  # ramp value coefficient at x = 0 offset

    if w <= 0.0:
        if w <= a:
            return (1.0 - nh) * _scaled_left(w, w)
        la = _scaled_left(a, w)
        if w <= b:
            lw = _scaled_left(w, w)
            x_piece = math.exp((w * w - a * a) / 2.0) - 1.0
            return (1.0 - nh) * la + ramp0 * (lw - la) - x_piece / ctx.theta
        lb = _scaled_left(b, w)
        lw = _scaled_left(w, w)
        x_piece = math.exp((w * w - a * a) / 2.0) - math.exp((w * w - b * b) / 2.0)
        return ((1.0 - nh) * la + ramp0 * (lb - la) - x_piece / ctx.theta
                - nh * (lw - lb))

    if w > b:
        return nh * _scaled_right(w, w)
    rw = _scaled_right(w, w)
    rb = _scaled_right(b, w)
    if w > a:
        x_piece = 1.0 - math.exp((w * w - b * b) / 2.0)
        return -ramp0 * (rw - rb) + x_piece / ctx.theta + nh * rb
    ra = _scaled_right(a, w)
    x_piece = math.exp((w * w - a * a) / 2.0) - math.exp((w * w - b * b) / 2.0)
    return (-(1.0 - nh) * (rw - ra) - ramp0 * (ra - rb) + x_piece / ctx.theta
            + nh * rb)


def stein_residual(ctx: SteinContext, w: float, step: float = 1e-6) -> float:
    """|g'(w) - w g(w) - (h(w) - Nh)| with g' by central difference."""
    gp = (stein_solution(ctx, w + step) - stein_solution(ctx, w - step)) / (2.0 * step)
    return abs(gp - w * stein_solution(ctx, w) - (float(stein_h(ctx, w)) - ctx.Nh))


@dataclass(frozen=True)
class SteinBoundReport:
    """Worst-case margins of the solution bounds over a sweep grid."""

    min_g: float
    max_g: float
    max_abs_gprime: float
    max_gprime_spread: float
    max_residual: float
    violations: int


def stein_bound_report(ctx: SteinContext, n_grid: int = 10_000,
                       w_range: tuple[float, float] = (-8.0, 8.0),
                       fd_step: float = 1e-6, tol: float = 1e-9) -> SteinBoundReport:
    """Sweep the bounds 0 <= g <= 1, |g'| <= 1, |g'(u) - g'(v)| <= 1.

    Derivatives use central differences; points within two steps of the two
    ramp kinks are excluded since h is not differentiable there and the
    bounds hold for the a.e. derivative.  ``tol`` absorbs rounding in the
    finite differences.
    """
    ws = np.linspace(w_range[0], w_range[1], n_grid)
    kinks = (ctx.w0, ctx.w0 + ctx.theta)
    keep = np.ones(ws.shape, dtype=bool)
    for k in kinks:
        keep &= np.abs(ws - k) > 2.0 * fd_step
    ws = ws[keep]
    g = np.array([stein_solution(ctx, w) for w in ws])
    gp = np.array([
        (stein_solution(ctx, w + fd_step) - stein_solution(ctx, w - fd_step)) / (2 * fd_step)
        for w in ws
    ])
    spread = float(np.max(gp) - np.min(gp))
    residual = max(stein_residual(ctx, w, fd_step) for w in ws[:: max(1, len(ws) // 500)])
    violations = int(np.sum(g < -tol) + np.sum(g > 1.0 + tol)
                     + np.sum(np.abs(gp) > 1.0 + tol) + (spread > 1.0 + tol))
    return SteinBoundReport(
        min_g=float(np.min(g)), max_g=float(np.max(g)),
        max_abs_gprime=float(np.max(np.abs(gp))), max_gprime_spread=spread,
        max_residual=float(residual), violations=violations,
    )


# ---------------------------------------------------------------------------
# quadratic-form moment probe


@dataclass(frozen=True)
class QformProbeResult:
    slope: float
    points: tuple[tuple[int, float], ...]  # (n, empirical k-th moment)
    k: int
    matrix_kind: str


def _probe_matrix(spectrum: PopulationSpectrum, matrix_kind: str, p: int, n: int,
                  seed: int, z: float | None) -> np.ndarray:
    from .simulator import population_diagonal, sample_entries
    from .spectral_model import support_interval

    diag_t = population_diagonal(spectrum, p)
    if matrix_kind == "fixed_psd":
        return np.diag(diag_t)
    if matrix_kind == "resolvent":
        # one fixed draw per grid point; the probed vector stays independent
        x = sample_entries(EntryEnsemble.real_gaussian(), p, n, seed)
        b = (np.sqrt(diag_t)[:, None] * x)
        b = b @ b.T / n
        if z is None:
            _, hi = support_interval(spectrum, p / n)
            z = hi + 1.0
        return np.linalg.inv(b - z * np.eye(p))
    raise ValueError(f"unknown matrix kind {matrix_kind!r}")


def qform_moment(spectrum: PopulationSpectrum, matrix_kind: str, n: int, y: float,
                 k: int, replicates: int, seed: int, z: float | None = None,
                 chunk: int = 20_000) -> float:
    """Monte-Carlo estimate of E |r* A r - tr(T A)/n|^k at one grid point."""
    from .simulator import population_diagonal, replicate_seed, sample_entries

    p = int(round(y * n))
    a = _probe_matrix(spectrum, matrix_kind, p, n, replicate_seed(seed, 0), z)
    diag_t = population_diagonal(spectrum, p)
    target = float(np.trace(np.diag(diag_t) @ a).real) / n
    acc = 0.0
    done = 0
    block = 1
    while done < replicates:
        size = min(chunk, replicates - done)
        x = sample_entries(EntryEnsemble.real_gaussian(), p, size, replicate_seed(seed, block))
        r = np.sqrt(diag_t)[:, None] * x / math.sqrt(n)
        q = np.einsum("ip,ip->p", r.conj(), a @ r).real - target
        acc += float(np.sum(np.abs(q) ** k))
        done += size
        block += 1
    return acc / replicates


def qform_probe(spectrum: PopulationSpectrum, matrix_kind: str, n_grid, y: float,
                k: int, replicates: int, seed: int, z: float | None = None) -> QformProbeResult:
    """Log-log slope of the centered quadratic-form k-th moment in n.

    The aspect ratio stays fixed across the grid; the expected slope is
    -k/2 for k in {2, 4}.
    """
    if k not in (2, 4):
        raise ValueError("moment order k must be 2 or 4")
    points = []
    for i, n in enumerate(n_grid):
        moment = qform_moment(spectrum, matrix_kind, int(n), y, k, replicates,
                              seed + i, z)
        points.append((int(n), moment))
    log_n = np.log([n for n, _ in points])
    log_m = np.log([m for _, m in points])
    slope, _ = np.polyfit(log_n, log_m, 1)
    return QformProbeResult(slope=float(slope), points=tuple(points), k=k,
                            matrix_kind=matrix_kind)


# ---------------------------------------------------------------------------
# nested Monte-Carlo martingale variance


@dataclass(frozen=True)
class Sigma0Result:
    estimate: float
    stderr: float
    n: int
    p: int
    inner_reps: int
    outer_reps: int
    # the per-column deterministic weight is the equivalent -z s0(z), whose
    # gap to the exact conditional version is an order n^{-1} effect
    b_equivalent: str = "-z*s_under"


def _bench_eigh(p: int) -> float:
    """Seconds per p x p Hermitian eigendecomposition, measured not guessed."""
    m = np.eye(p) + 0.01 * np.ones((p, p))
    t0 = time.perf_counter()
    reps = 20
    for _ in range(reps):
        np.linalg.eigh(m)
    return (time.perf_counter() - t0) / reps


def sigma0_nested_mc(f: TestFunction, spectrum: PopulationSpectrum, y_n: float,
                     n_small: int, inner_reps: int, outer_reps: int, seed: int,
                     ensemble: EntryEnsemble | None = None,
                     work_cap_seconds: float = 600.0,
                     contour_nodes: int = 32) -> Sigma0Result:
    """Estimate the martingale variance sum by nested Monte Carlo.

    For each column j the conditional expectation over the not-yet-revealed
    columns is realized by redrawing them; two independent half-estimates
    are multiplied so the inner noise cancels in expectation instead of
    biasing the square.  Column weights use the deterministic equivalent
    ``-z s_under(z)``.  Work is projected from a small eigendecomposition
    benchmark and the run aborts beforehand if it exceeds the cap.
    """
    from . import contour as contour_mod
    from .simulator import population_diagonal, replicate_seed, sample_entries
    from .stieltjes import s_under_grid

    if n_small > 64:
        raise ValueError("n_small is capped at 64 (cost grows like n^4)")
    if ensemble is None:
        ensemble = EntryEnsemble.real_gaussian()
    n = int(n_small)
    p = int(round(y_n * n))

    per_op = _bench_eigh(p)
    ops = outer_reps * n * 2 * inner_reps
    projected = ops * per_op * 2.5  # eigh plus node evaluations and assembly
    if projected > work_cap_seconds:
        raise CostBudgetExceeded(
            f"projected {projected:.0f}s of nested-MC work exceeds cap {work_cap_seconds:.0f}s"
        )

    c = contour_mod.build_contour(spectrum, y_n, m=contour_nodes, f=f)
    z, w = c.nodes()
    s_u = s_under_grid(z, spectrum, y_n)
    b_hat = -z * s_u
    weight = w * f.deriv(z) * b_hat  # quadrature weight folded with f' and b

    diag_t = population_diagonal(spectrum, p)
    root_t = np.sqrt(diag_t)
    complex_entries = ensemble.is_complex

    def draw_columns(rng: np.random.Generator, count: int) -> np.ndarray:
        if ensemble.variant == "RG":
            x = rng.standard_normal((p, count))
        elif ensemble.variant == "CG":
            x = (rng.standard_normal((p, count))
                 + 1j * rng.standard_normal((p, count))) * math.sqrt(0.5)
        else:
            x = np.asarray(ensemble.sampler(rng, (p, count)), dtype=float)
        return root_t[:, None] * x / math.sqrt(n)

    def half_estimate(rng: np.random.Generator, base: np.ndarray, r_j: np.ndarray,
                      fresh_count: int, reps: int) -> float:
        """One inner-MC estimate of the conditional column fluctuation term."""
        acc = np.zeros(z.shape, dtype=complex)
        for _ in range(reps):
            m_j = base
            if fresh_count:
                cols = draw_columns(rng, fresh_count)
                m_j = base + cols @ cols.conj().T
            lam, q = np.linalg.eigh(m_j)
            proj = q.conj().T @ r_j
            tr_coef = (np.abs(q) ** 2 * diag_t[:, None]).sum(axis=0)
            coef = np.abs(proj) ** 2 - tr_coef / n
            # sum_i coef_i / (lam_i - z) over the node grid
            acc += coef @ (1.0 / (lam[:, None] - z[None, :]))
        raw = complex(np.sum(weight * (acc / reps)))
        return (raw * (-1.0 / (2.0j * math.pi))).real

    totals = []
    for outer in range(outer_reps):
        rng = np.random.Generator(np.random.PCG64(replicate_seed(seed, 2 * outer)))
        x_full = sample_entries(ensemble, p, n, replicate_seed(seed, 2 * outer + 1))
        r_cols = root_t[:, None] * x_full / math.sqrt(n)
        base = np.zeros((p, p), dtype=complex if complex_entries else float)
        total = 0.0
        for j in range(n):
            r_j = r_cols[:, j]
            fresh = n - 1 - j
            y_a = half_estimate(rng, base, r_j, fresh, inner_reps)
            y_b = half_estimate(rng, base, r_j, fresh, inner_reps)
            total += y_a * y_b
            base = base + np.outer(r_j, r_j.conj())
        totals.append(total)
    totals = np.array(totals)
    est = float(np.mean(totals))
    stderr = float(np.std(totals, ddof=1) / math.sqrt(len(totals))) if len(totals) > 1 else 0.0
    return Sigma0Result(estimate=est, stderr=stderr, n=n, p=p,
                        inner_reps=inner_reps, outer_reps=outer_reps)
