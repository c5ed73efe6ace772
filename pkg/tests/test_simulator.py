import math

import numpy as np
import pytest
from scipy import stats

from conftest import BATTERY
from lsslab.clt_moments import compute_moments
from lsslab.errors import DegenerateTruncation, LogDomain
from lsslab.simulator import (SimConfig, TruncationPolicy, assemble_B, default_eta,
                              eigenvalues, lss_centered, population_diagonal,
                              replicate_seed, run_experiment, sample_entries,
                              splitmix64, truncate_normalize, truncated_moments)
from lsslab.spectral_model import (AspectRatio, EntryEnsemble, PopulationSpectrum,
                                   TestFunction)

IDENTITY = PopulationSpectrum.identity()
RG = EntryEnsemble.real_gaussian()
CG = EntryEnsemble.complex_gaussian()
F_X = TestFunction.monomial(1)


class TestSeeds:
    def test_splitmix64_is_64_bit(self):
        vals = {splitmix64(i) for i in range(1000)}
        assert len(vals) == 1000
        assert all(0 <= v < 2**64 for v in vals)

    def test_replicate_seed_deterministic(self):
        assert replicate_seed(42, 7) == replicate_seed(42, 7)
        assert replicate_seed(42, 7) != replicate_seed(42, 8)
        assert replicate_seed(42, 7) != replicate_seed(43, 7)


class TestSampleEntries:
    def test_fixed_seed_bit_identical(self):
        a = sample_entries(RG, 16, 8, seed=99)
        b = sample_entries(RG, 16, 8, seed=99)
        assert a.tobytes() == b.tobytes()

    def test_rg_mean_within_clt_band(self):
        x = sample_entries(RG, 1000, 1000, seed=1)
        assert abs(x.mean()) <= 5e-3  # 3.9 sigma / sqrt(1e6) band

    def test_cg_second_moment(self):
        x = sample_entries(CG, 1000, 1000, seed=2)
        assert abs(np.mean(np.abs(x) ** 2) - 1.0) <= 5e-3
        # real and imaginary parts each carry variance one half
        assert abs(np.var(x.real) - 0.5) <= 5e-3
        assert abs(np.mean(x**2)) <= 5e-3  # circularity: E x^2 = 0

    def test_custom_sampler_used(self):
        x = sample_entries(EntryEnsemble.rademacher(), 50, 50, seed=3)
        assert set(np.unique(x)) == {-1.0, 1.0}


class TestTruncateNormalize:
    def test_huge_threshold_is_identity(self):
        x = sample_entries(RG, 20, 30, seed=4)
        out = truncate_normalize(x, n=30, eta=1e6, ensemble=RG)
        np.testing.assert_allclose(out, x, atol=1e-12)

    def test_rademacher_identity_above_one(self):
        rad = EntryEnsemble.rademacher()
        x = sample_entries(rad, 20, 16, seed=5)
        out = truncate_normalize(x, n=16, eta=1.1 / 16**0.25, ensemble=rad)
        np.testing.assert_allclose(out, x, atol=1e-15)

    def test_rg_truncated_variance_closed_form(self):
        # closed-form truncated-normal second moment as the independent
        # oracle: E X^2 1{|X| < c} = (2 Phi(c) - 1) - 2 c phi(c)
        c = 2.0
        mean, var = truncated_moments(RG, c)
        closed = (2 * stats.norm.cdf(c) - 1) - 2 * c * stats.norm.pdf(c)
        assert mean == pytest.approx(0.0, abs=1e-14)
        assert var == pytest.approx(closed, abs=1e-10)

    def test_cg_truncated_variance_closed_form(self):
        # |x|^2 is exponential, so E |x|^2 1{|x| < c} = 1 - (1 + c^2) e^{-c^2}
        c = 1.5
        _, var = truncated_moments(CG, c)
        assert var == pytest.approx(1 - (1 + c * c) * math.exp(-c * c), abs=1e-10)

    def test_degenerate_truncation(self):
        with pytest.raises(DegenerateTruncation):
            truncate_normalize(np.ones((4, 4)), n=4, eta=1e-6, ensemble=RG)

    def test_entries_clipped_out_not_clamped(self):
        x = np.array([[0.5, 3.0], [-2.5, 0.1]])
        c = 1.0  # eta * n^(1/4) with eta=1, n=1
        out = truncate_normalize(x, n=1, eta=1.0, ensemble=RG)
        mean, var = truncated_moments(RG, c)
        expected = (np.where(np.abs(x) < c, x, 0.0) - mean) / math.sqrt(var)
        np.testing.assert_allclose(out, expected, atol=1e-14)

    def test_default_eta_decreases_slowly(self):
        assert default_eta(1024) == pytest.approx(1 / math.log(1024))
        assert default_eta(100) > default_eta(10_000) > 0

    def test_student_t_pipeline_clips(self):
        t11 = EntryEnsemble.student_t(11.0)
        x = sample_entries(t11, 64, 128, seed=6)
        eta = default_eta(128)
        threshold = eta * 128**0.25
        assert (np.abs(x) >= threshold).any()  # heavy tails really clip here
        out = truncate_normalize(x, n=128, eta=eta, ensemble=t11)
        assert np.isfinite(out).all()
        mean, var = truncated_moments(t11, threshold)
        clipped_value = (0.0 - mean) / math.sqrt(var)
        assert np.allclose(out[np.abs(x) >= threshold], clipped_value)


class TestAssemble:
    def test_one_by_one(self):
        b = assemble_B(IDENTITY, np.array([[1.0]]), n=1)
        np.testing.assert_allclose(b, [[1.0]])

    def test_zero_population(self):
        sp0 = PopulationSpectrum.from_pairs([(0.0, 1.0)])
        b = assemble_B(sp0, sample_entries(RG, 6, 8, seed=7), n=8)
        np.testing.assert_allclose(b, np.zeros((6, 6)))

    def test_hermitian_to_machine_precision(self):
        x = sample_entries(CG, 12, 20, seed=8)
        b = assemble_B(IDENTITY, x, n=20)
        assert np.max(np.abs(b - b.conj().T)) == 0.0

    def test_expected_trace_oracle(self):
        # E tr B = tr T = p * m1 exactly; 2000 replicates within 4 MC SE
        sp = BATTERY["two_atom"]
        p, n, reps = 8, 16, 2000
        traces = []
        for i in range(reps):
            x = sample_entries(RG, p, n, seed=replicate_seed(11, i))
            traces.append(np.trace(assemble_B(sp, x, n)).real)
        target = p * sp.moment(1)
        se = np.std(traces, ddof=1) / math.sqrt(reps)
        assert abs(np.mean(traces) - target) <= 4 * se

    def test_apportionment_largest_remainder(self):
        sp = PopulationSpectrum.from_pairs([(0.4, 0.5), (1.0, 0.5)])
        diag = population_diagonal(sp, 5)
        # quotas 2.5/2.5; the tie goes to the larger atom
        assert list(diag) == [0.4, 0.4, 1.0, 1.0, 1.0]
        assert population_diagonal(sp, 4).tolist() == [0.4, 0.4, 1.0, 1.0]

    def test_apportionment_counts_sum(self):
        sp = BATTERY["five_atom"]
        for p in (7, 16, 33):
            assert population_diagonal(sp, p).size == p


class TestEigenvalues:
    def test_diagonal(self):
        np.testing.assert_allclose(eigenvalues(np.diag([3.0, 1.0, 2.0])), [1, 2, 3])

    def test_identity(self):
        np.testing.assert_allclose(eigenvalues(np.eye(5)), np.ones(5))

    def test_trace_identity_random_hermitian(self):
        rng = np.random.default_rng(10)
        a = rng.standard_normal((8, 8))
        b = (a + a.T) / 2
        eigs = eigenvalues(b, check=True)
        assert np.sum(eigs) == pytest.approx(np.trace(b), abs=1e-10)
        assert all(x <= y for x, y in zip(eigs, eigs[1:]))


class TestLssCentered:
    def test_constant_exactly_zero(self):
        f1 = TestFunction.polynomial([1.0])
        eigs = np.array([0.5, 1.0, 2.0])
        assert lss_centered(f1, eigs, IDENTITY, 0.5, p=3) == pytest.approx(0.0, abs=1e-9)

    def test_zero_population_zero_statistic(self):
        sp0 = PopulationSpectrum.from_pairs([(0.0, 1.0)])
        eigs = np.zeros(4)
        assert lss_centered(F_X, eigs, sp0, 0.5, p=4) == pytest.approx(0.0, abs=1e-12)

    def test_linear_matches_trace(self):
        p, n = 12, 24
        x = sample_entries(RG, p, n, seed=12)
        b = assemble_B(IDENTITY, x, n)
        eigs = eigenvalues(b)
        got = lss_centered(F_X, eigs, IDENTITY, p / n, p)
        assert got == pytest.approx(np.trace(b) - p * 1.0, abs=1e-8)

    def test_log_rejects_nonpositive_eigenvalues(self):
        with pytest.raises(LogDomain):
            lss_centered(TestFunction.log(), np.array([-0.1, 1.0]), IDENTITY, 0.25, 2,
                         centering=0.0)


class TestRunExperiment:
    def _config(self, **kw):
        defaults = dict(ratio=AspectRatio(p=16, n=32), spectrum=IDENTITY, ensemble=RG,
                        f=F_X, replicates=8, root_seed=777)
        defaults.update(kw)
        return SimConfig(**defaults)

    def test_deterministic_record(self):
        cfg = self._config()
        mom = compute_moments(F_X, IDENTITY, 0.5, "RG")
        r1 = run_experiment(cfg, mom)
        r2 = run_experiment(cfg, mom)
        assert [r.value for r in r1.rows] == [r.value for r in r2.rows]
        assert [r.seed for r in r1.rows] == [r.seed for r in r2.rows]

    def test_threads_do_not_change_values(self):
        cfg = self._config(replicates=12)
        mom = compute_moments(F_X, IDENTITY, 0.5, "RG")
        seq = run_experiment(cfg, mom, threads=1)
        par = run_experiment(cfg, mom, threads=4)
        assert [r.value for r in seq.rows] == [r.value for r in par.rows]
        assert [r.index for r in par.rows] == list(range(12))

    def test_normalized_variance_near_one(self):
        # chi-square concentration: 2000 samples put the sample variance of
        # the unit-variance statistic within 0.1 of 1
        cfg = self._config(ratio=AspectRatio(p=128, n=256), replicates=2000,
                           root_seed=2024)
        mom = compute_moments(F_X, IDENTITY, 0.5, "RG")
        rec = run_experiment(cfg, mom)
        assert abs(rec.variance - 1.0) <= 0.1
        assert abs(rec.mean) <= 0.1
        assert 0.0 <= rec.ks <= 1.0
        # edge fluctuations at this n occasionally leave the +-eps/2 band;
        # the contract is counting + logging, not failure
        assert rec.confinement_violations <= 0.05 * cfg.replicates

    def test_memory_budget_enforced(self):
        with pytest.raises(ValueError, match="memory budget"):
            self._config(ratio=AspectRatio(p=1 << 14, n=1 << 14))

    def test_truncation_policy_applies(self):
        t11 = EntryEnsemble.student_t(11.0)
        cfg = self._config(ensemble=t11, truncation=TruncationPolicy("on", None),
                           replicates=4)
        mom = compute_moments(F_X, IDENTITY, 0.5, "RG")
        rec = run_experiment(cfg, mom)
        assert len(rec.rows) == 4
        assert np.isfinite(rec.values()).all()
