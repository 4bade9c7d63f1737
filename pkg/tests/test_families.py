import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inversio.errors import DomainError, InvalidArgumentError, UnsupportedError
from inversio.families import (
    FAMILY_DESCRIPTIONS,
    as_state_data,
    get_family,
    goe_embedding,
    identity_map,
    radial_process_value,
    random_states,
    squares_map,
)
from inversio.state import CEMETERY_STATE, sym_unpack, symmatrix_state, vector_state

ALL_FAMILIES = [
    ("fspbes", dict(n=2, alpha=1.5, nu=(0.5, 1.0), sigma=(1.0, 1.0))),
    ("bes", dict(nu=0.5)),
    ("bes", dict(nu=1.5)),
    ("besq", dict(delta=3.0)),
    ("free_besq", dict(n=2, delta=3.0)),
    ("bm", dict(n=3)),
    ("stable", dict(alpha=1.5, n=2)),
    ("goe", dict(m=2)),
    ("wishart", dict(m=2, delta=3.0)),
    ("dyson", dict(n=2)),
    ("noncolliding_besq", dict(n=2, delta=3.0)),
    ("hyperbolic_bessel", dict(n=3)),
]

IDS = ["%s-%s" % (fid, "-".join("%s=%s" % kv for kv in sorted(p.items()))) for fid, p in ALL_FAMILIES]


def states_for(family, size, seed=0):
    return random_states(family, size, np.random.default_rng(seed))


@pytest.mark.parametrize("fid,params", ALL_FAMILIES, ids=IDS)
class TestCharacteristicIdentities:
    def test_involution_is_an_involution(self, fid, params):
        fam = get_family(fid, **params)
        x = states_for(fam, 500)
        back = fam.involution(fam.involution(x))
        assert np.max(np.abs(back - x) / np.maximum(np.abs(x), 1.0)) < 1e-12

    def test_h_pairing(self, fid, params):
        fam = get_family(fid, **params)
        x = states_for(fam, 500)
        prod = fam.excessive_h(x) * fam.excessive_h(fam.involution(x))
        assert np.max(np.abs(prod - 1.0)) < 1e-12

    def test_v_pairing(self, fid, params):
        fam = get_family(fid, **params)
        x = states_for(fam, 500)
        prod = fam.speed_v(x) * fam.speed_v(fam.involution(x))
        assert np.max(np.abs(prod - 1.0)) < 1e-12

    def test_rho_inverts(self, fid, params):
        fam = get_family(fid, **params)
        if fam.rho is None:
            pytest.skip("no homogeneity data")
        x = states_for(fam, 500)
        prod = fam.rho(x) * fam.rho(fam.involution(x))
        assert np.max(np.abs(prod - 1.0)) < 1e-12

    def test_jacobian_matches_finite_differences(self, fid, params):
        fam = get_family(fid, **params)
        if fam.jacobian_I is None:
            pytest.skip("no Jacobian registered")
        for x in states_for(fam, 3, seed=5):
            step = 1e-6 * (1.0 + np.abs(x))
            cols = []
            for j in range(fam.n):
                e = np.zeros(fam.n)
                e[j] = step[j]
                cols.append((fam.involution(x + e) - fam.involution(x - e)) / (2 * step[j]))
            det = abs(np.linalg.det(np.stack(cols, axis=1)))
            assert det == pytest.approx(float(fam.jacobian_I(x)), rel=1e-4)

    def test_grad_log_h_matches_finite_differences(self, fid, params):
        fam = get_family(fid, **params)
        if fam.grad_log_h is None:
            pytest.skip("no analytic gradient")
        for x in states_for(fam, 3, seed=7):
            step = 1e-6 * (1.0 + np.abs(x))
            grad = np.array([
                (np.log(fam.excessive_h(x + s * e)) - np.log(fam.excessive_h(x - s * e))) / (2 * s)
                for j in range(fam.n)
                for s, e in [(step[j], np.eye(fam.n)[j])]
            ])
            np.testing.assert_allclose(fam.grad_log_h(x), grad, rtol=1e-4, atol=1e-8)

    def test_random_states_are_valid(self, fid, params):
        fam = get_family(fid, **params)
        for x in states_for(fam, 200, seed=11):
            fam.validate_state(x)

    def test_involution_preserves_the_state_space(self, fid, params):
        fam = get_family(fid, **params)
        for x in states_for(fam, 200, seed=13):
            fam.validate_state(fam.involution(x))


class TestFrozenValues:
    """Closed-form characteristics pinned at explicit points."""

    def test_bes3(self):
        fam = get_family("bes", nu=0.5)
        assert fam.name == "bes(delta=3)"
        x = np.array([1.7])
        assert fam.excessive_h(x) == pytest.approx(1 / 1.7, rel=1e-14)
        assert fam.involution(x)[0] == pytest.approx(1 / 1.7, rel=1e-14)
        assert fam.speed_v(x) == pytest.approx(1.7 ** 4, rel=1e-14)
        assert fam.radial_bessel_dim == 3.0

    def test_besq(self):
        fam = get_family("besq", delta=3.0)
        x = np.array([4.0])
        assert fam.excessive_h(x) == pytest.approx(0.5, rel=1e-14)
        assert fam.involution(x)[0] == pytest.approx(0.25, rel=1e-14)
        assert get_family("besq", delta=2.0).excessive_h(x) == pytest.approx(1.0)

    def test_bm3_is_newtonian(self):
        fam = get_family("bm", n=3)
        x = np.array([1.0, 2.0, 2.0])
        assert fam.excessive_h(x) == pytest.approx(1 / 3.0, rel=1e-14)
        np.testing.assert_allclose(fam.involution(x), x / 9.0, rtol=1e-14)
        assert fam.speed_v(x) == pytest.approx(81.0)
        assert not get_family("bm", n=2).ip_supported

    def test_stable(self):
        fam = get_family("stable", alpha=1.5, n=2)
        x = np.array([3.0, 4.0])
        assert fam.excessive_h(x) == pytest.approx(5.0 ** -0.5, rel=1e-14)
        assert fam.speed_v(x) == pytest.approx(5.0 ** 3, rel=1e-14)
        assert fam.sampler.kind == "jump"

    def test_goe(self):
        fam = get_family("goe", m=2)
        x = np.array([1.0, 1.0, 1.0])  # rho = 1 + 2 + 1
        assert fam.rho(x) == pytest.approx(4.0)
        assert fam.excessive_h(x) == pytest.approx(0.5, rel=1e-14)
        mat = sym_unpack(x, 2)
        assert fam.rho(x) == pytest.approx(np.sum(mat * mat))

    def test_wishart(self):
        fam = get_family("wishart", m=2, delta=3.0)
        x = np.array([1.0, 0.0, 1.0])  # identity, trace 2
        assert fam.excessive_h(x) == pytest.approx(0.25, rel=1e-14)
        assert fam.speed_v(x) == pytest.approx(4.0, rel=1e-14)
        np.testing.assert_allclose(fam.involution(x), x / 4.0, rtol=1e-14)
        assert fam.radial_bessel_dim == 6.0

    def test_dyson(self):
        fam = get_family("dyson", n=2)
        x = np.array([-1.0, 2.0])
        assert fam.excessive_h(x) == pytest.approx(0.2, rel=1e-14)
        assert fam.speed_v(x) == pytest.approx(25.0, rel=1e-14)
        assert fam.radial_bessel_dim == 4.0

    def test_noncolliding_besq(self):
        fam = get_family("noncolliding_besq", n=2, delta=3.0)
        x = np.array([1.0, 3.0])  # rho = sum = 4
        assert fam.excessive_h(x) == pytest.approx(4.0 ** -4, rel=1e-14)
        np.testing.assert_allclose(fam.involution(x), x / 16.0, rtol=1e-14)
        assert fam.radial_bessel_dim == 10.0

    def test_hyperbolic_bessel(self):
        fam = get_family("hyperbolic_bessel", n=3)
        r = np.array([0.8])
        assert fam.involution(r)[0] == pytest.approx(np.arctanh(np.exp(-1.6)), rel=1e-14)
        assert fam.excessive_h(r) == pytest.approx(np.sqrt(2) / np.expm1(1.6), rel=1e-14)
        assert fam.speed_v(r) == pytest.approx(np.sinh(1.6) ** 2, rel=1e-14)
        assert fam.rho is None

    def test_fspbes(self):
        fam = get_family("fspbes", n=2, alpha=1.5, nu=(0.5, 1.0), sigma=(1.0, 1.0))
        x = np.array([1.0, 1.0])
        assert fam.rho(x) == pytest.approx(2.0)
        assert fam.excessive_h(x) == pytest.approx(2.0 ** -2.5, rel=1e-14)
        assert fam.radial_bessel_dim == 7.0


class TestRegistry:
    def test_descriptions_cover_every_family(self):
        fams = {fid for fid, _ in ALL_FAMILIES}
        assert fams <= set(FAMILY_DESCRIPTIONS)

    def test_unknown_family(self):
        with pytest.raises(InvalidArgumentError, match="unknown family"):
            get_family("levy_flight")

    def test_unknown_parameter_names_the_key(self):
        with pytest.raises(InvalidArgumentError, match="gamma"):
            get_family("bes", gamma=1.0)

    def test_params_dict_and_kwargs_merge(self):
        fam = get_family("fspbes", {"n": 2}, alpha=2.0)
        assert fam.params["alpha"] == 2.0

    @pytest.mark.parametrize("fid,params,key", [
        ("stable", dict(alpha=2.5, n=3), "alpha"),
        ("stable", dict(alpha=1.5, n=1), "alpha"),
        ("besq", dict(delta=0.0), "delta"),
        ("fspbes", dict(n=3, nu=(0.5, 1.0)), "nu"),
        ("fspbes", dict(n=1, nu=-1.0), "nu"),
        ("fspbes", dict(n=1, sigma=0.0), "sigma"),
        ("fspbes", dict(n=1, alpha=0.0), "alpha"),
        ("goe", dict(m=1), "m"),
        ("wishart", dict(m=2, delta=0.5), "delta"),
        ("dyson", dict(n=1), "n"),
        ("noncolliding_besq", dict(n=1, delta=3.0), "n"),
        ("hyperbolic_bessel", dict(n=2), "n"),
    ])
    def test_bad_parameter_values_name_the_key(self, fid, params, key):
        with pytest.raises(InvalidArgumentError, match="^%s:" % key):
            get_family(fid, **params)

    def test_wishart_accepts_low_integer_shape(self):
        fam = get_family("wishart", m=4, delta=2.0)
        assert fam.params["delta"] == 2.0
        with pytest.raises(InvalidArgumentError):
            get_family("wishart", m=4, delta=2.5)

    def test_state_validation(self):
        fam = get_family("dyson", n=2)
        with pytest.raises(DomainError):
            fam.validate_state(np.array([2.0, 1.0]))
        fam = get_family("noncolliding_besq", n=2, delta=3.0)
        with pytest.raises(DomainError):
            fam.validate_state(np.array([-1.0, 2.0]))
        fam = get_family("wishart", m=2, delta=3.0)
        with pytest.raises(DomainError):
            fam.validate_state(np.array([1.0, 2.0, 1.0]))  # indefinite


class TestStateCoercion:
    def test_as_state_data_accepts_arrays_states_and_matrices(self):
        fam = get_family("wishart", m=2, delta=3.0)
        packed = np.array([2.0, 0.5, 1.0])
        np.testing.assert_array_equal(as_state_data(fam, packed), packed)
        np.testing.assert_array_equal(as_state_data(fam, sym_unpack(packed, 2)), packed)
        np.testing.assert_array_equal(as_state_data(fam, symmatrix_state(packed)), packed)

    def test_as_state_data_rejects_mismatches(self):
        fam = get_family("bm", n=3)
        with pytest.raises(DomainError):
            as_state_data(fam, np.ones(2))
        with pytest.raises(DomainError):
            as_state_data(fam, CEMETERY_STATE)
        with pytest.raises(DomainError):
            as_state_data(fam, symmatrix_state(np.eye(2)))
        with pytest.raises(DomainError):
            as_state_data(get_family("goe", m=2), vector_state([1.0, 0.0, 1.0]))

    def test_radial_process_value(self):
        fam = get_family("wishart", m=2, delta=3.0)
        assert radial_process_value(fam, np.array([1.0, 0.0, 1.0])) == pytest.approx(np.sqrt(2.0))
        with pytest.raises(UnsupportedError):
            radial_process_value(get_family("hyperbolic_bessel", n=3), np.array([1.0]))


class TestBijections:
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_goe_embedding_round_trip(self, seed):
        phi = goe_embedding(2)
        x = np.random.default_rng(seed).normal(size=3)
        np.testing.assert_allclose(phi.inverse(phi.forward(x)), x, rtol=1e-14)

    def test_goe_embedding_conjugates_characteristics(self):
        # rho_goe(phi(x)) = |x|^2, so h and v agree through the map
        bm, goe = get_family("bm", n=3), get_family("goe", m=2)
        phi = goe_embedding(2)
        x = states_for(bm, 100, seed=3)
        np.testing.assert_allclose(goe.rho(phi.forward(x)), bm.rho(x), rtol=1e-14)
        np.testing.assert_allclose(
            goe.involution(phi.forward(x)), phi.forward(bm.involution(x)), rtol=1e-13)

    def test_squares_map_conjugates_bes_and_besq(self):
        bes, besq = get_family("bes", nu=0.5), get_family("besq", delta=3.0)
        phi = squares_map(1)
        x = states_for(bes, 100, seed=4)
        np.testing.assert_allclose(besq.rho(phi.forward(x)), bes.rho(x), rtol=1e-14)
        np.testing.assert_allclose(
            besq.involution(phi.forward(x)), phi.forward(bes.involution(x)), rtol=1e-13)

    def test_identity_map(self):
        phi = identity_map(4)
        x = np.arange(4.0)
        assert phi.forward(x) is x and phi.inverse(x) is x
