import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inversio.errors import InvalidArgumentError
from inversio.state import (
    CEMETERY_STATE,
    Path,
    State,
    TimeGrid,
    eval_or_zero,
    make_grid,
    sym_pack,
    sym_unpack,
    symmatrix_state,
    vector_state,
)


class TestState:
    def test_vector_state(self):
        s = vector_state([1.0, 2.0, 3.0])
        assert s.kind == "vector"
        assert s.dim_info == (3,)
        np.testing.assert_array_equal(s.data, [1.0, 2.0, 3.0])

    def test_scalar_promotes_to_length_one_vector(self):
        s = vector_state(1.5)
        assert s.dim_info == (1,)
        assert s.data.shape == (1,)

    def test_cemetery(self):
        assert CEMETERY_STATE.is_cemetery
        assert not vector_state([0.0]).is_cemetery

    def test_cemetery_rejects_data(self):
        with pytest.raises(InvalidArgumentError):
            State("cemetery", np.ones(2), ())

    def test_vector_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            State("vector", np.ones(3), (2,))

    def test_unknown_kind(self):
        with pytest.raises(InvalidArgumentError):
            State("tensor", np.ones(1), (1,))

    def test_symmatrix_from_full_matrix(self):
        mat = np.array([[2.0, 0.5], [0.5, 3.0]])
        s = symmatrix_state(mat)
        assert s.kind == "symmatrix"
        assert s.dim_info == (2, 2)
        np.testing.assert_array_equal(s.data, [2.0, 0.5, 3.0])
        np.testing.assert_array_equal(s.matrix(), mat)

    def test_symmatrix_from_packed(self):
        s = symmatrix_state(np.array([2.0, 0.5, 3.0]))
        assert s.dim_info == (2, 2)

    def test_symmatrix_rejects_nontriangular_length(self):
        with pytest.raises(InvalidArgumentError):
            symmatrix_state(np.ones(4))

    def test_symmatrix_rejects_asymmetric(self):
        with pytest.raises(InvalidArgumentError):
            symmatrix_state(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_matrix_requires_symmatrix(self):
        with pytest.raises(InvalidArgumentError):
            vector_state([1.0]).matrix()

    def test_eval_or_zero(self):
        f = lambda x: float(np.sum(x))
        assert eval_or_zero(f, vector_state([1.0, 2.0])) == 3.0
        assert eval_or_zero(f, CEMETERY_STATE) == 0.0


@given(
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=0, max_value=2**32 - 1),
)
@settings(max_examples=50, deadline=None)
def test_sym_pack_unpack_round_trip(m, seed):
    gen = np.random.default_rng(seed)
    a = gen.normal(size=(m, m))
    mat = a + a.T
    packed = sym_pack(mat)
    assert packed.shape == (m * (m + 1) // 2,)
    np.testing.assert_allclose(sym_unpack(packed, m), mat, rtol=0, atol=0)


def test_sym_pack_order_is_upper_row_major():
    mat = np.array([[11.0, 12.0, 13.0], [12.0, 22.0, 23.0], [13.0, 23.0, 33.0]])
    np.testing.assert_array_equal(sym_pack(mat), [11, 12, 13, 22, 23, 33])


def test_sym_pack_batched():
    mats = np.stack([np.eye(2), 2 * np.eye(2)])
    np.testing.assert_array_equal(sym_pack(mats), [[1, 0, 1], [2, 0, 2]])


class TestTimeGrid:
    def test_make_grid_covers_t_end(self):
        g = make_grid(1.0, 0.1)
        assert len(g) == 11
        assert g.t[-1] >= 1.0 - 1e-12
        assert g.step == 0.1

    def test_make_grid_non_divisible(self):
        g = make_grid(0.25, 0.1)
        # rounds the step count up so the grid reaches past t_end
        assert g.t[-1] == pytest.approx(0.3)

    def test_make_grid_single_step(self):
        g = make_grid(0.1, 0.1)
        np.testing.assert_allclose(g.t, [0.0, 0.1])

    @pytest.mark.parametrize("t_end,dt", [(0.0, 0.1), (1.0, 0.0), (1.0, -0.1), (0.1, 0.2)])
    def test_make_grid_rejects_bad_args(self, t_end, dt):
        with pytest.raises(InvalidArgumentError):
            make_grid(t_end, dt)

    def test_make_grid_rejects_nonfinite(self):
        with pytest.raises(InvalidArgumentError):
            make_grid(np.inf, 0.1)

    def test_explicit_grid_must_start_at_zero(self):
        with pytest.raises(InvalidArgumentError):
            TimeGrid(np.array([0.1, 0.2]))

    def test_explicit_grid_must_increase(self):
        with pytest.raises(InvalidArgumentError):
            TimeGrid(np.array([0.0, 0.2, 0.2]))

    def test_explicit_grid_must_be_1d(self):
        with pytest.raises(InvalidArgumentError):
            TimeGrid(np.array([[0.0, 1.0]]))

    @given(st.floats(min_value=1e-3, max_value=10.0), st.floats(min_value=1e-4, max_value=1.0))
    @settings(max_examples=100, deadline=None)
    def test_make_grid_properties(self, t_end, dt):
        if dt > t_end:
            return
        g = make_grid(t_end, dt)
        assert g.t[0] == 0.0
        assert (np.diff(g.t) > 0).all()
        assert g.t[-1] >= t_end - 1e-9 * t_end


class TestPath:
    def grid(self):
        return make_grid(0.3, 0.1)

    def test_state_at_and_lifetime(self):
        p = Path(self.grid(), np.arange(8.0).reshape(4, 2), np.array([True, True, False, False]))
        assert p.lifetime == pytest.approx(0.2)
        np.testing.assert_array_equal(p.state_at(1).data, [2.0, 3.0])
        assert p.state_at(2) is CEMETERY_STATE
        assert p.states[3].is_cemetery

    def test_surviving_path_has_infinite_lifetime(self):
        p = Path(self.grid(), np.zeros((4, 1)), np.ones(4, bool))
        assert p.lifetime == np.inf

    def test_path_must_start_alive(self):
        with pytest.raises(InvalidArgumentError):
            Path(self.grid(), np.zeros((4, 1)), np.array([False, True, True, True]))

    def test_path_cannot_revive(self):
        with pytest.raises(InvalidArgumentError):
            Path(self.grid(), np.zeros((4, 1)), np.array([True, False, True, True]))

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            Path(self.grid(), np.zeros((3, 1)), np.ones(4, bool))
