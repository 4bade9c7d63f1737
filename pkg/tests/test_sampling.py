import numpy as np
import pytest
from scipy import stats

from inversio.errors import DomainError, InvalidArgumentError
from inversio.families import get_family
from inversio.rng import RngStream
from inversio.sampling import (
    besq_transition,
    euler_step,
    one_sided_stable,
    sample_besq_exact,
    sample_path,
    sample_paths,
    sample_stable_increment,
)
from inversio.state import CEMETERY_STATE, make_grid, vector_state

N_LAW = 20000
P_MIN = 1e-3  # deterministic under fixed seeds; law mismatches give p ~ 0


class TestBesqTransition:
    """The transition law is t * chi'^2_delta(x/t); scipy.ncx2 is the oracle."""

    @pytest.mark.parametrize("delta", [3.0, 1.0, 2.5])
    def test_decomposition_branch_matches_ncx2(self, delta):
        gen = np.random.default_rng(11)
        t, x = 0.5, 1.2
        draws = besq_transition(gen, delta, np.full(N_LAW, x), t)
        p = stats.kstest(draws / t, stats.ncx2(delta, x / t).cdf).pvalue
        assert p > P_MIN

    def test_poisson_mixture_branch_matches_ncx2(self):
        gen = np.random.default_rng(12)
        t, x, delta = 0.4, 0.9, 0.7
        draws = besq_transition(gen, delta, np.full(N_LAW, x), t)
        p = stats.kstest(draws / t, stats.ncx2(delta, x / t).cdf).pvalue
        assert p > P_MIN

    def test_start_at_zero_is_central_chi_square(self):
        gen = np.random.default_rng(13)
        t, delta = 0.3, 0.7
        draws = besq_transition(gen, delta, np.zeros(N_LAW), t)
        p = stats.kstest(draws / t, stats.chi2(delta).cdf).pvalue
        assert p > P_MIN

    def test_moments(self):
        # E Y = x + delta t, Var Y = 4 x t + 2 delta t^2
        gen = np.random.default_rng(14)
        t, x, delta = 0.8, 2.0, 3.5
        draws = besq_transition(gen, delta, np.full(200000, x), t)
        mean, var = draws.mean(), draws.var(ddof=1)
        se = draws.std(ddof=1) / np.sqrt(draws.size)
        assert abs(mean - (x + delta * t)) < 5 * se
        assert abs(var - (4 * x * t + 2 * delta * t ** 2)) < 0.02 * var

    def test_broadcasts_mixed_branches(self):
        gen = np.random.default_rng(15)
        delta = np.array([0.5, 3.0])
        out = besq_transition(gen, delta, np.ones(2), 0.1)
        assert out.shape == (2,)
        assert (out > 0).all()

    def test_sample_besq_exact_scalar_and_validation(self):
        assert isinstance(sample_besq_exact(2.0, 1.0, 0.5, RngStream(1)), float)
        assert sample_besq_exact(2.0, 1.0, 0.5, RngStream(1), size=7).shape == (7,)
        with pytest.raises(InvalidArgumentError):
            sample_besq_exact(0.0, 1.0, 0.5, RngStream(1))
        with pytest.raises(InvalidArgumentError):
            sample_besq_exact(2.0, -1.0, 0.5, RngStream(1))
        with pytest.raises(InvalidArgumentError):
            sample_besq_exact(2.0, 1.0, 0.0, RngStream(1))


class TestOneSidedStable:
    def test_laplace_transform(self):
        # E exp(-l S) = exp(-l**a)
        gen = np.random.default_rng(21)
        for a in (0.3, 0.5, 0.75):
            s = one_sided_stable(gen, a, 200000)
            for lam in (0.5, 1.0, 2.0):
                vals = np.exp(-lam * s)
                se = vals.std(ddof=1) / np.sqrt(vals.size)
                assert abs(vals.mean() - np.exp(-lam ** a)) < 5 * se, (a, lam)

    def test_half_stable_is_levy(self):
        # a = 1/2 has the closed form S ~ Levy(1/2), i.e. 1/(2S) ~ chi^2_1
        gen = np.random.default_rng(22)
        s = one_sided_stable(gen, 0.5, N_LAW)
        p = stats.kstest(1.0 / (2.0 * s), stats.chi2(1).cdf).pvalue
        assert p > P_MIN

    def test_index_validation(self):
        gen = np.random.default_rng(0)
        for a in (0.0, 1.0, 1.5):
            with pytest.raises(InvalidArgumentError):
                one_sided_stable(gen, a, 3)


class TestStableIncrement:
    def test_alpha_two_is_brownian(self):
        incr = sample_stable_increment(2.0, 0.25, 1, RngStream(31), size=N_LAW)
        p = stats.kstest(incr[:, 0], stats.norm(0, 0.5).cdf).pvalue
        assert p > P_MIN

    def test_cauchy_projection(self):
        # alpha = 1: E exp(i<u,X>) = exp(-dt |u| / sqrt(2)), so a coordinate
        # is Cauchy with scale dt / sqrt(2)
        dt = 0.3
        incr = sample_stable_increment(1.0, dt, 2, RngStream(32), size=N_LAW)
        p = stats.kstest(incr[:, 0], stats.cauchy(0, dt / np.sqrt(2)).cdf).pvalue
        assert p > P_MIN

    def test_isotropy(self):
        incr = sample_stable_increment(1.5, 0.1, 2, RngStream(33), size=N_LAW)
        angles = np.arctan2(incr[:, 1], incr[:, 0])
        p = stats.kstest(angles, stats.uniform(-np.pi, 2 * np.pi).cdf).pvalue
        assert p > P_MIN

    def test_scalar_default(self):
        assert sample_stable_increment(1.5, 0.1, 3, RngStream(34)).shape == (3,)

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            sample_stable_increment(2.5, 0.1, 1, RngStream(0))
        with pytest.raises(InvalidArgumentError):
            sample_stable_increment(1.5, 0.0, 1, RngStream(0))
        with pytest.raises(InvalidArgumentError):
            sample_stable_increment(1.5, 0.1, 0, RngStream(0))
        with pytest.raises(InvalidArgumentError):
            sample_stable_increment(1.5, 0.1, 1, "not an rng")


class TestEulerStep:
    def test_diagonal_dispersion(self):
        s = vector_state([1.0, 2.0])
        out = euler_step(lambda x: -x, lambda x: np.array([2.0, 3.0]), s, 0.01, np.array([1.0, -1.0]))
        np.testing.assert_allclose(out.data, [1.0 - 0.01 + 0.2, 2.0 - 0.02 - 0.3])

    def test_matrix_dispersion(self):
        s = vector_state([0.0, 0.0])
        sig = np.array([[1.0, 0.0], [1.0, 1.0]])
        out = euler_step(lambda x: np.zeros(2), lambda x: sig, s, 0.04, np.array([1.0, 2.0]))
        np.testing.assert_allclose(out.data, [0.2, 0.6])

    def test_rejects_cemetery(self):
        with pytest.raises(InvalidArgumentError):
            euler_step(lambda x: x, lambda x: x, CEMETERY_STATE, 0.01, np.zeros(1))


class TestSamplePaths:
    def test_shapes_and_initial_state(self):
        fam = get_family("bes", nu=0.5)
        grid = make_grid(0.5, 0.1)
        batch = sample_paths(fam, np.array([1.0]), grid, RngStream(41), 16)
        assert len(batch) == 16
        assert batch.values.shape == (16, 6, 1)
        np.testing.assert_array_equal(batch.values[:, 0, 0], 1.0)
        assert batch.alive.all()

    def test_deterministic_under_stream(self):
        fam = get_family("fspbes", n=2, alpha=1.5, nu=(0.5, 1.0), sigma=(1.0, 1.0))
        grid = make_grid(0.2, 0.05)
        a = sample_paths(fam, np.array([1.0, 1.0]), grid, RngStream(42), 8)
        b = sample_paths(fam, np.array([1.0, 1.0]), grid, RngStream(42), 8)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.alive, b.alive)
        c = sample_paths(fam, np.array([1.0, 1.0]), grid, RngStream(42).child(0), 8)
        assert not np.array_equal(a.values, c.values)

    def test_exact_stepper_composes_to_the_marginal(self):
        # five exact BESQ substeps must give the single-step law
        fam = get_family("besq", delta=3.0)
        grid = make_grid(0.5, 0.1)
        batch = sample_paths(fam, np.array([1.2]), grid, RngStream(43), N_LAW)
        draws = batch.values[:, -1, 0]
        p = stats.kstest(draws / 0.5, stats.ncx2(3.0, 1.2 / 0.5).cdf).pvalue
        assert p > P_MIN

    def test_absorption_freezes_values(self):
        # near-singular start and a Euler stepper (non-integer delta), so a
        # fair share of paths overshoots into indefinite matrices and dies
        fam = get_family("wishart", m=2, delta=2.5)
        grid = make_grid(0.5, 0.05)
        batch = sample_paths(fam, np.array([1.0, 0.0, 1e-4]), grid, RngStream(44), 256)
        alive = batch.alive
        assert not alive.all()
        assert not np.any(alive[:, 1:] & ~alive[:, :-1])
        dead_at = np.argmin(alive, axis=1)
        for i in np.flatnonzero(~alive[:, -1])[:10]:
            k = dead_at[i]
            assert (batch.values[i, k:] == batch.values[i, k]).all()
            assert batch.path(int(i)).lifetime == pytest.approx(grid.t[k])

    def test_x0_validation(self):
        fam = get_family("bm", n=3)
        grid = make_grid(0.1, 0.1)
        with pytest.raises(DomainError):
            sample_paths(fam, np.ones(2), grid, RngStream(0), 1)
        with pytest.raises(DomainError):
            sample_paths(fam, CEMETERY_STATE, grid, RngStream(0), 1)
        with pytest.raises(DomainError):
            sample_paths(get_family("wishart", m=2, delta=3.0), vector_state([1.0, 0.0, 1.0]), grid, RngStream(0), 1)

    def test_single_path_wrapper(self):
        fam = get_family("bm", n=2)
        grid = make_grid(0.2, 0.1)
        p = sample_path(fam, np.array([0.4, 0.4]), grid, RngStream(45))
        assert p.values.shape == (3, 2)
        assert p.lifetime == np.inf


class TestRngStream:
    def test_generator_is_reproducible(self):
        a = RngStream(7).generator().normal(size=5)
        b = RngStream(7).generator().normal(size=5)
        np.testing.assert_array_equal(a, b)

    def test_children_are_distinct(self):
        root = RngStream(7)
        seen = [root.generator().normal()] + [root.child(k).generator().normal() for k in range(20)]
        assert len(set(np.round(seen, 12))) == len(seen)

    def test_nested_children_do_not_collide(self):
        a = RngStream(7).child(0).child(1)
        b = RngStream(7).child(1)
        assert a.stream_id != b.stream_id
        assert a.generator().normal() != b.generator().normal()

    def test_seed_validation(self):
        with pytest.raises(InvalidArgumentError):
            RngStream(1.5)
        with pytest.raises(InvalidArgumentError):
            RngStream(1, stream_id="x")
        with pytest.raises(InvalidArgumentError):
            RngStream(1).child(-1)
