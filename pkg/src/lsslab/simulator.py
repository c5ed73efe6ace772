"""Sample covariance simulation: entry sampling, truncation, eigenvalues, runs.

Replicates are reproducible by construction: replicate ``i`` always uses
the 64-bit stream seed ``splitmix64(root_seed + (i+1) * GAMMA)`` (the i-th
output of the splitmix64 generator seeded at ``root_seed``), independent of
execution order or thread count.
"""

from __future__ import annotations

import datetime as _dt
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as _scipy_integrate

from .clt_moments import CltMoments, normalize
from .contour import default_margin
from .diagnostics import ks_to_normal
from .errors import DegenerateTruncation, LabError, LogDomain, NonConvergence
from .spectral_model import (AspectRatio, EntryEnsemble, PopulationSpectrum,
                             TestFunction, support_interval)
from .stieltjes import lss_centering

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> int:
    """One splitmix64 output for the given state (Steele et al. mixing)."""
    z = (state + _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def replicate_seed(root_seed: int, index: int) -> int:
    """Deterministic per-replicate seed: splitmix64 stream element ``index``."""
    return splitmix64((root_seed + index * _GAMMA) & _MASK64)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def sample_entries(ensemble: EntryEnsemble, p: int, n: int, seed: int) -> np.ndarray:
    """i.i.d. entry matrix of shape (p, n) for the given stream seed.

    Circular complex entries have real and imaginary parts i.i.d. normal
    with variance one half, so E|x|^2 = 1.
    """
    rng = _rng(seed)
    if ensemble.variant == "RG":
        return rng.standard_normal((p, n))
    if ensemble.variant == "CG":
        re = rng.standard_normal((p, n))
        im = rng.standard_normal((p, n))
        return (re + 1j * im) * math.sqrt(0.5)
    return np.asarray(ensemble.sampler(rng, (p, n)), dtype=float)


def truncated_moments(ensemble: EntryEnsemble, threshold: float) -> tuple[float, float]:
    """Distributional mean and variance of ``x * 1{|x| < c}``.

    These are population quantities of the entry law, computed by adaptive
    quadrature of its density (radial density for the circular complex
    family), never from the sampled matrix.
    """
    c = float(threshold)
    if c <= 0:
        return 0.0, 0.0
    if ensemble.variant == "RG":
        ceff = min(c, 40.0)  # the normal density carries no float64 mass beyond
        def phi(x):
            return math.exp(-x * x / 2.0) / math.sqrt(2.0 * math.pi)
        mean, _ = _scipy_integrate.quad(lambda x: x * phi(x), -ceff, ceff)
        second, _ = _scipy_integrate.quad(lambda x: x * x * phi(x), -ceff, ceff)
        return mean, second - mean * mean
    if ensemble.variant == "CG":
        # |x| is Rayleigh with density 2 r exp(-r^2); the mean vanishes by
        # circular symmetry and the variance is E |x|^2 1{|x| < c}
        ceff = min(c, 40.0)
        second, _ = _scipy_integrate.quad(
            lambda r: r * r * 2.0 * r * math.exp(-r * r), 0.0, ceff)
        return 0.0, second
    if ensemble.name == "rademacher":
        return (0.0, 1.0) if c > 1.0 else (0.0, 0.0)
    if ensemble.pdf is None:
        raise ValueError(f"ensemble {ensemble.name!r} has no density for truncated moments")
    # split at zero so the adaptive rule finds the central mass even for
    # thresholds far out in a thin tail
    ceff = min(c, 1e3)
    mean = (_scipy_integrate.quad(lambda x: x * ensemble.pdf(x), -ceff, 0.0)[0]
            + _scipy_integrate.quad(lambda x: x * ensemble.pdf(x), 0.0, ceff)[0])
    second = (_scipy_integrate.quad(lambda x: x * x * ensemble.pdf(x), -ceff, 0.0)[0]
              + _scipy_integrate.quad(lambda x: x * x * ensemble.pdf(x), 0.0, ceff)[0])
    return mean, second - mean * mean


def default_eta(n: int) -> float:
    """Default slowly-decreasing truncation constant, 1 / log n."""
    return 1.0 / math.log(n) if n > 1 else 1.0


def truncate_normalize(entries: np.ndarray, n: int, eta: float,
                       ensemble: EntryEnsemble) -> np.ndarray:
    """Zero out entries at or beyond ``eta * n^(1/4)``, then restandardize.

    Entries are removed by indicator, not clamped, and the recentering and
    rescaling use the distributional truncated moments of the ensemble.
    """
    threshold = eta * n ** 0.25
    if threshold <= 0:
        raise ValueError("truncation threshold must be positive")
    mean, var = truncated_moments(ensemble, threshold)
    if var < 1e-6:
        raise DegenerateTruncation(
            f"truncated variance {var:.3e} below 1e-6 at threshold {threshold:.3e}"
        )
    clipped = np.where(np.abs(entries) < threshold, entries, 0.0)
    return (clipped - mean) / math.sqrt(var)


def population_diagonal(spectrum: PopulationSpectrum, p: int) -> np.ndarray:
    """Diagonal population matrix with atom multiplicities apportioned to p.

    Largest-remainder apportionment of the weights; remainder ties go to
    the larger atom so the realized distribution never loses its top edge.
    """
    atoms = sorted(spectrum.atoms, key=lambda tw: tw[0])
    quotas = [w * p for _, w in atoms]
    counts = [int(math.floor(q)) for q in quotas]
    leftover = p - sum(counts)
    order = sorted(range(len(atoms)),
                   key=lambda i: (quotas[i] - counts[i], atoms[i][0]), reverse=True)
    for i in order[:leftover]:
        counts[i] += 1
    diag = np.concatenate([np.full(c, t) for (t, _), c in zip(atoms, counts) if c > 0]) \
        if any(counts) else np.array([])
    if diag.size != p:
        raise ValueError("apportionment failed to fill the diagonal")
    return diag


def assemble_B(spectrum: PopulationSpectrum, entries: np.ndarray, n: int) -> np.ndarray:
    """Sample covariance matrix ``(1/n) T^(1/2) X X* T^(1/2)``, symmetrized."""
    p = entries.shape[0]
    if entries.shape[1] != n:
        raise ValueError(f"entry matrix has {entries.shape[1]} columns, expected n={n}")
    root_t = np.sqrt(population_diagonal(spectrum, p))
    scaled = root_t[:, None] * entries
    b = scaled @ scaled.conj().T / n
    return (b + b.conj().T) / 2.0


def eigenvalues(b: np.ndarray, check: bool = False) -> np.ndarray:
    """Ascending eigenvalues of a Hermitian matrix.

    With ``check=True`` five spread-out eigenpairs are verified against the
    residual bound ``|B v - lambda v| <= 1e-10 |B|``.
    """
    try:
        if not check:
            return np.linalg.eigvalsh(b)
        vals, vecs = np.linalg.eigh(b)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(f"eigensolver failed: {exc}") from exc
    p = len(vals)
    norm = max(np.max(np.abs(vals)), 1e-300)
    for idx in {0, p // 4, p // 2, (3 * p) // 4, p - 1}:
        res = np.linalg.norm(b @ vecs[:, idx] - vals[idx] * vecs[:, idx])
        if res > 1e-10 * norm:
            raise NonConvergence(f"eigenpair {idx} residual {res:.3e} exceeds 1e-10*|B|")
    return vals


def lss_centered(f: TestFunction, eigs: np.ndarray, spectrum: PopulationSpectrum,
                 y_n: float, p: int, centering: float | None = None) -> float:
    """Sum of f over the eigenvalues minus the deterministic centering."""
    if f.kind == "log" and np.min(eigs) <= 0:
        raise LogDomain(f"log statistic undefined at eigenvalue {np.min(eigs):.3e}")
    if centering is None:
        centering = lss_centering(f, spectrum, y_n, p)
    total = float(np.sum(f(np.asarray(eigs, dtype=complex))).real)
    return total - centering


# ---------------------------------------------------------------------------
# experiment harness


@dataclass(frozen=True)
class TruncationPolicy:
    mode: str = "off"  # "off" or "on"
    eta: float | None = None  # None selects 1 / log n

    def __post_init__(self):
        if self.mode not in ("off", "on"):
            raise ValueError(f"truncation mode must be off/on, got {self.mode!r}")


@dataclass(frozen=True)
class SimConfig:
    ratio: AspectRatio
    spectrum: PopulationSpectrum
    ensemble: EntryEnsemble
    f: TestFunction
    replicates: int
    root_seed: int
    truncation: TruncationPolicy = TruncationPolicy()
    max_entries: int = 1 << 26  # memory budget on p*n

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.ratio.p * self.ratio.n > self.max_entries:
            raise ValueError(
                f"p*n = {self.ratio.p * self.ratio.n} exceeds the memory budget {self.max_entries}"
            )


@dataclass(frozen=True)
class ReplicateRow:
    index: int
    seed: int
    value: float  # normalized statistic
    lam_min: float
    lam_max: float


@dataclass
class ExperimentRecord:
    config: dict
    rows: list[ReplicateRow]
    ks: float
    mean: float
    variance: float
    confinement_violations: int
    started_at: str
    finished_at: str

    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.rows])


def _one_replicate(cfg: SimConfig, moments: CltMoments, centering: float,
                   index: int) -> ReplicateRow:
    seed = replicate_seed(cfg.root_seed, index)
    p, n = cfg.ratio.p, cfg.ratio.n
    x = sample_entries(cfg.ensemble, p, n, seed)
    if cfg.truncation.mode == "on":
        eta = cfg.truncation.eta if cfg.truncation.eta is not None else default_eta(n)
        x = truncate_normalize(x, n, eta, cfg.ensemble)
    b = assemble_B(cfg.spectrum, x, n)
    eigs = eigenvalues(b)
    stat = lss_centered(cfg.f, eigs, cfg.spectrum, cfg.ratio.y_n, p, centering=centering)
    value = normalize(stat, moments)
    return ReplicateRow(index=index, seed=seed, value=float(value),
                        lam_min=float(eigs[0]), lam_max=float(eigs[-1]))


def run_experiment(cfg: SimConfig, moments: CltMoments, threads: int = 1,
                   config_snapshot: dict | None = None) -> ExperimentRecord:
    """Replicated simulation of the normalized centered statistic.

    Rows are ordered by replicate index whatever the execution order; any
    replicate failure is re-raised with its index attached.
    """
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    y = cfg.ratio.y_n
    centering = lss_centering(cfg.f, cfg.spectrum, y, cfg.ratio.p)

    def job(i: int) -> ReplicateRow:
        try:
            return _one_replicate(cfg, moments, centering, i)
        except LabError as exc:
            raise type(exc)(f"replicate {i}: {exc}") from exc

    indices = range(cfg.replicates)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(job, indices))
    else:
        rows = [job(i) for i in indices]

    lo, hi = support_interval(cfg.spectrum, y)
    eps = default_margin(cfg.spectrum, y)
    low, high = lo - eps / 2.0, hi + eps / 2.0
    violations = sum(1 for r in rows if r.lam_min < low or r.lam_max > high)
    if violations:
        logger.warning("eigenvalue confinement violated in %d replicates", violations)

    values = np.array([r.value for r in rows])
    record = ExperimentRecord(
        config=config_snapshot or {},
        rows=rows,
        ks=ks_to_normal(values),
        mean=float(np.mean(values)),
        variance=float(np.var(values, ddof=1)) if len(values) > 1 else 0.0,
        confinement_violations=violations,
        started_at=started,
        finished_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
    )
    return record
