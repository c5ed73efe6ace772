"""Domain types shared by every other module.

Population spectra are kept spectrally, as weighted atoms ``(t_k, w_k)``:
only the eigenvalues of the population matrix enter any downstream formula,
so a diagonal representative is materialized lazily by the simulator and
every deterministic integral against the population distribution reduces to
a finite weighted sum over the atoms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import LogDomain

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class PopulationSpectrum:
    """Atomic population eigenvalue distribution.

    ``atoms`` is a sequence of ``(eigenvalue, weight)`` pairs with
    nonnegative eigenvalues and positive weights summing to one.  By
    default the spectral norm is capped at 1 (the usual normalization for
    sample covariance ensembles); pass ``allow_large_atoms=True`` to lift
    the cap, every formula stays valid for any bounded spectrum.
    """

    atoms: tuple[tuple[float, float], ...]
    allow_large_atoms: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not self.atoms:
            raise ValueError("spectrum needs at least one atom")
        atoms = tuple((float(t), float(w)) for t, w in self.atoms)
        for t, w in atoms:
            if t < 0:
                raise ValueError(f"atom {t} is negative")
            if w <= 0:
                raise ValueError(f"weight {w} is not positive")
        total = math.fsum(w for _, w in atoms)
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights sum to {total}, expected 1 within {_WEIGHT_TOL}")
        if not self.allow_large_atoms and max(t for t, _ in atoms) > 1.0:
            raise ValueError(
                "largest atom exceeds 1; pass allow_large_atoms=True to lift the norm cap"
            )
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def identity(cls) -> "PopulationSpectrum":
        """The point mass at 1 (identity population matrix)."""
        return cls(atoms=((1.0, 1.0),))

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]], *, renormalize: bool = False,
                   allow_large_atoms: bool = False) -> "PopulationSpectrum":
        """Build a spectrum, optionally renormalizing raw weights to sum 1.

        Renormalization is idempotent: applying it to an already-valid
        spectrum reproduces the same atoms.
        """
        pairs = [(float(t), float(w)) for t, w in pairs]
        if renormalize:
            total = math.fsum(w for _, w in pairs)
            if total <= 0:
                raise ValueError("total weight must be positive")
            pairs = [(t, w / total) for t, w in pairs]
        return cls(atoms=tuple(pairs), allow_large_atoms=allow_large_atoms)

    @classmethod
    def from_density(cls, pdf: Callable[[float], float], lo: float, hi: float,
                     n_atoms: int = 64, *, allow_large_atoms: bool = False) -> "PopulationSpectrum":
        """Discretize a continuous population density into ``n_atoms`` atoms.

        Midpoint atoms on an equispaced grid carry the cell masses computed
        by adaptive quadrature; masses are renormalized to sum exactly 1.
        No approximation rate is claimed, the node count is the only knob.
        """
        if n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        edges = np.linspace(lo, hi, n_atoms + 1)
        pairs = []
        for a, b in zip(edges[:-1], edges[1:]):
            mass, _ = integrate.quad(pdf, a, b)
            if mass > 0:
                pairs.append(((a + b) / 2.0, mass))
        return cls.from_pairs(pairs, renormalize=True, allow_large_atoms=allow_large_atoms)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([t for t, _ in self.atoms])

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])

    @property
    def min_eigenvalue(self) -> float:
        return min(t for t, _ in self.atoms)

    @property
    def max_eigenvalue(self) -> float:
        return max(t for t, _ in self.atoms)

    def moment(self, order: int) -> float:
        """Raw moment of the population distribution."""
        return math.fsum(w * t**order for t, w in self.atoms)


@dataclass(frozen=True)
class AspectRatio:
    """Dimension p over sample size n; the ratio is always recomputed."""

    p: int
    n: int

    def __post_init__(self):
        if self.p < 1 or self.n < 1:
            raise ValueError("p and n must be positive integers")

    @property
    def y_n(self) -> float:
        return self.p / self.n


def support_interval(spectrum: PopulationSpectrum, y: float) -> tuple[float, float]:
    """Enclosing interval of the limiting spectral bulk.

    Returns ``[t_min * 1_{(0,1)}(y) * (1-sqrt(y))^2, t_max * (1+sqrt(y))^2]``
    with ``t_min``/``t_max`` the extreme atoms.  The lower endpoint is zero
    whenever ``y >= 1``.  For multi-atom spectra the true bulk may split
    into several intervals; this is the single enclosing one.
    """
    if y <= 0:
        raise ValueError("y must be positive")
    sq = math.sqrt(y)
    lo = spectrum.min_eigenvalue * (1.0 - sq) ** 2 if 0.0 < y < 1.0 else 0.0
    hi = spectrum.max_eigenvalue * (1.0 + sq) ** 2
    return lo, hi


# ---------------------------------------------------------------------------
# entry ensembles


@dataclass(frozen=True)
class EntryEnsemble:
    """Distribution family of the matrix entries.

    ``variant`` is ``"RG"`` (real, Gaussian-matched fourth moment),
    ``"CG"`` (complex, circular, E|x|^4 = 2), or ``"custom_real"``.  Custom
    real families carry a unit-variance sampler plus a density used for the
    distributional truncated moments; ``fourth_moment`` must be the exact
    E x^4 of the standardized entries.
    """

    variant: str
    name: str = ""
    sampler: Callable | None = field(default=None, compare=False)
    pdf: Callable[[float], float] | None = field(default=None, compare=False)
    fourth_moment: float = 3.0
    declared_moment_bound: float | None = None  # declared E|x|^10, not verified

    def __post_init__(self):
        if self.variant not in ("RG", "CG", "custom_real"):
            raise ValueError(f"unknown ensemble variant {self.variant!r}")
        if self.variant == "custom_real" and self.sampler is None:
            raise ValueError("custom_real ensembles need a sampler")

    @property
    def is_complex(self) -> bool:
        return self.variant == "CG"

    @property
    def beta_x(self) -> float:
        """Fourth-cumulant-style excess E|x|^4 - |E x^2|^2 - 2."""
        if self.variant == "RG":
            return 0.0
        if self.variant == "CG":
            return 0.0
        return self.fourth_moment - 1.0 - 2.0

    @property
    def alpha_x(self) -> float:
        """|E x^2|^2: one for real entries, zero for circular complex ones."""
        return 0.0 if self.variant == "CG" else 1.0

    @property
    def violates_matching(self) -> bool:
        """True when the fourth moment breaks the Gaussian-matching condition."""
        return abs(self.beta_x) > 1e-12

    @classmethod
    def real_gaussian(cls) -> "EntryEnsemble":
        return cls(variant="RG", name="real_gaussian")

    @classmethod
    def complex_gaussian(cls) -> "EntryEnsemble":
        return cls(variant="CG", name="complex_gaussian")

    @classmethod
    def rademacher(cls) -> "EntryEnsemble":
        """Symmetric +-1 entries: E x^4 = 1, all moments finite."""

        def sampler(rng: np.random.Generator, size):
            return rng.integers(0, 2, size=size).astype(float) * 2.0 - 1.0

        return cls(variant="custom_real", name="rademacher", sampler=sampler,
                   pdf=None, fourth_moment=1.0, declared_moment_bound=1.0)

    @classmethod
    def student_t(cls, df: float = 11.0) -> "EntryEnsemble":
        """Unit-variance Student t entries; needs df > 10 for a finite tenth moment."""
        if df <= 4:
            raise ValueError("df must exceed 4 for a finite fourth moment")
        scale = math.sqrt(df / (df - 2.0))  # t/scale has unit variance

        def sampler(rng: np.random.Generator, size):
            return rng.standard_t(df, size=size) / scale

        from scipy import stats

        def pdf(x: float) -> float:
            return scale * stats.t.pdf(x * scale, df)

        fourth = 3.0 * (df - 2.0) / (df - 4.0)
        tenth = None
        if df > 10:
            # E t^10 = 945 * df^5 / prod(df - 2k), k=1..5, then standardized
            prod = 1.0
            for k in range(1, 6):
                prod *= df - 2 * k
            tenth = 945.0 * df**5 / prod / scale**10
        return cls(variant="custom_real", name=f"student_t_{df:g}", sampler=sampler,
                   pdf=pdf, fourth_moment=fourth, declared_moment_bound=tenth)


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """Analytic test function with complex evaluation of f and f'.

    ``kind`` is ``"poly"`` with Horner-evaluated coefficients ``c0..cd``
    (derivative coefficients are the exact formal derivative) or ``"log"``
    using the principal branch, admissible only on contours staying in
    Re z > 0.
    """

    __test__ = False  # keep pytest from collecting the domain type

    kind: str
    coeffs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "poly":
            if not self.coeffs:
                raise ValueError("polynomial needs at least one coefficient")
            object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        elif self.kind != "log":
            raise ValueError(f"unknown test function kind {self.kind!r}")

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]) -> "TestFunction":
        return cls(kind="poly", coeffs=tuple(coeffs))

    @classmethod
    def monomial(cls, degree: int, coeff: float = 1.0) -> "TestFunction":
        c = [0.0] * degree + [coeff]
        return cls(kind="poly", coeffs=tuple(c))

    @classmethod
    def log(cls) -> "TestFunction":
        return cls(kind="log")

    @property
    def is_constant(self) -> bool:
        return self.kind == "poly" and all(c == 0.0 for c in self.coeffs[1:])

    @property
    def label(self) -> str:
        if self.kind == "log":
            return "log"
        terms = []
        for k, c in enumerate(self.coeffs):
            if c == 0.0:
                continue
            if k == 0:
                terms.append(f"{c:g}")
            elif k == 1:
                terms.append("x" if c == 1.0 else f"{c:g}*x")
            else:
                terms.append(f"x^{k}" if c == 1.0 else f"{c:g}*x^{k}")
        return "+".join(terms) if terms else "0"

    def __call__(self, z):
        return eval_f(self, z)

    def deriv(self, z):
        return eval_f_prime(self, z)


def _horner(coeffs: tuple[float, ...], z):
    acc = np.zeros_like(np.asarray(z, dtype=complex))
    for c in reversed(coeffs):
        acc = acc * z + c
    return acc if acc.shape else complex(acc)


def eval_f(f: TestFunction, z):
    """Evaluate f at a complex point or array of points."""
    if f.kind == "poly":
        return _horner(f.coeffs, z)
    zc = np.asarray(z, dtype=complex)
    if np.any(zc.real <= 0):
        raise LogDomain("log test function evaluated at Re z <= 0")
    out = np.log(zc)
    return out if out.shape else complex(out)


def eval_f_prime(f: TestFunction, z):
    """Evaluate f' at a complex point or array of points (exact, not numeric)."""
    if f.kind == "poly":
        dcoeffs = tuple(k * c for k, c in enumerate(f.coeffs))[1:]
        if not dcoeffs:
            zc = np.asarray(z, dtype=complex)
            out = np.zeros_like(zc)
            return out if out.shape else 0j
        return _horner(dcoeffs, z)
    zc = np.asarray(z, dtype=complex)
    if np.any(zc.real <= 0):
        raise LogDomain("log test function evaluated at Re z <= 0")
    out = 1.0 / zc
    return out if out.shape else complex(out)
