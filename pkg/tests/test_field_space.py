import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pcsft.field_space import (
    FieldError,
    FieldState,
    Grid,
    WaveFunction,
    born_probability,
    delta_basis,
    delta_state,
    gram_matrix,
    inner_product,
    norm_squared,
    normalize,
)


def field(values, dV=1.0):
    n = len(values)
    return FieldState(Grid.uniform([n], [(0.0, n * dV)]), values)


class TestGrid:
    def test_uniform_cell_volume_and_centres(self):
        g = Grid.uniform([4, 2], [(0, 1), (0, 2)])
        assert g.n == 8
        assert g.dV == pytest.approx(0.25)
        assert tuple(g.points[0]) == (0.125, 0.5)
        assert tuple(g.points[1]) == (0.125, 1.5)

    def test_rejects_unsorted_points(self):
        with pytest.raises(FieldError, match="strictly increasing"):
            Grid(1, np.array([[0.5], [0.25]]), 0.25)

    def test_rejects_duplicates(self):
        with pytest.raises(FieldError):
            Grid(2, np.array([[0.0, 1.0], [0.0, 1.0]]), 1.0)

    @pytest.mark.parametrize("dV", [0.0, -1.0, math.inf])
    def test_rejects_bad_volume(self, dV):
        with pytest.raises(FieldError):
            Grid(1, np.array([[0.0]]), dV)

    def test_points_are_immutable(self):
        g = Grid.uniform([3])
        with pytest.raises(ValueError):
            g.points[0, 0] = 7.0

    def test_region_checks(self):
        g = Grid.uniform([3])
        assert g.check_region([2, 0, 2]) == (0, 2)
        with pytest.raises(FieldError):
            g.check_region([])
        with pytest.raises(FieldError):
            g.check_region([3])


class TestNormalize:
    def test_already_normalised(self):
        assert np.array_equal(normalize(field([1, 0])).amplitudes, [1, 0])

    def test_scaled(self):
        assert np.array_equal(normalize(field([2, 0])).amplitudes, [1, 0])

    def test_quarter_cells(self):
        Psi = normalize(field([1, 1, 1, 1], dV=0.25))
        assert np.array_equal(Psi.amplitudes, [1, 1, 1, 1])

    def test_zero_norm(self):
        with pytest.raises(FieldError, match="degenerate field state"):
            normalize(field([0, 0]))

    def test_wavefunction_rejects_unnormalised(self):
        with pytest.raises(FieldError):
            WaveFunction(Grid.uniform([2], [(0, 2)]), [1, 1])


class TestNormSquared:
    def test_zero(self):
        assert norm_squared(field([0, 0])) == 0

    def test_real(self):
        assert norm_squared(field([1, 2])) == 5

    def test_complex_single_cell(self):
        assert norm_squared(field([3 + 4j], dV=0.1)) == pytest.approx(2.5, rel=1e-15)


class TestBornProbability:
    def test_uniform_two_cells(self):
        assert born_probability(normalize(field([1, 1])), [0]) == pytest.approx(0.5, abs=1e-15)

    def test_one_two(self):
        Psi = normalize(field([1, 2]))
        assert born_probability(Psi, [0]) == pytest.approx(0.2, abs=1e-15)
        assert born_probability(Psi, [1]) == pytest.approx(0.8, abs=1e-15)

    def test_all_cells(self):
        Psi = normalize(field([1, 2j, 3]))
        assert born_probability(Psi, [0, 1, 2]) == pytest.approx(1.0, abs=1e-15)

    def test_invalid_index(self):
        with pytest.raises(FieldError):
            born_probability(normalize(field([1, 2])), [5])


class TestInnerProduct:
    def test_self_is_norm(self):
        f = field([1 + 1j, 2, -3j], dV=0.3)
        assert inner_product(f, f) == pytest.approx(norm_squared(f), rel=1e-15)

    def test_orthogonal_deltas(self):
        g = Grid.uniform([2], [(0, 0.5)])
        e0, e1 = delta_basis(g)
        assert inner_product(e0, e1) == 0
        assert inner_product(e0, e0) == pytest.approx(1.0, rel=1e-15)

    def test_sifting(self):
        g = Grid.uniform([3], [(0, 0.75)])
        phi = FieldState(g, [1 + 2j, -0.5j, 3])
        k = delta_state(g, 1, normalized=False)
        assert inner_product(phi, k) == phi[1]

    def test_grid_mismatch(self):
        with pytest.raises(FieldError):
            inner_product(field([1, 2]), field([1, 2, 3]))

    def test_gram_of_delta_basis(self):
        g = Grid.uniform([5], [(0, 0.7)])
        assert np.allclose(gram_matrix(delta_basis(g)), np.eye(5), atol=1e-14)


# -- properties

complex_amps = st.integers(1, 40).flatmap(
    lambda n: arrays(
        complex, n,
        elements=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
    )
)
volumes = st.floats(1e-3, 10.0)


def nonzero(a):
    return np.sum(np.abs(a) ** 2) > 1e-200


@settings(max_examples=200, deadline=None)
@given(complex_amps, volumes)
def test_normalize_idempotent(a, dV):
    if not nonzero(a):
        return
    f = field(a, dV)
    once = normalize(f)
    twice = normalize(once.as_field)
    assert np.allclose(twice.amplitudes, once.amplitudes, rtol=1e-12, atol=1e-12 * np.abs(once.amplitudes).max())


@settings(max_examples=200, deadline=None)
@given(complex_amps, volumes, st.data())
def test_partition_sums_to_one(a, dV, data):
    if not nonzero(a):
        return
    Psi = normalize(field(a, dV))
    labels = data.draw(arrays(int, a.size, elements=st.integers(0, 3)))
    parts = [np.nonzero(labels == k)[0] for k in range(4)]
    total = math.fsum(born_probability(Psi, p) for p in parts if p.size)
    assert abs(total - 1.0) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(complex_amps, volumes, st.floats(0, 2 * math.pi), st.floats(1e-3, 1e3), st.data())
def test_phase_and_scale_invariance(a, dV, theta, scale, data):
    if not nonzero(a):
        return
    f = field(a, dV)
    g = f.scaled(scale * complex(math.cos(theta), math.sin(theta)))
    region = data.draw(st.lists(st.integers(0, a.size - 1), min_size=1, unique=True))
    assert born_probability(normalize(g), region) == pytest.approx(born_probability(normalize(f), region), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(complex_amps, volumes, st.data())
def test_delta_sifting_exact(a, dV, data):
    f = field(a, dV)
    i = data.draw(st.integers(0, a.size - 1))
    k = delta_state(f.grid, i, normalized=False)
    assert inner_product(f, k) == pytest.approx(f[i], rel=1e-15, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(complex_amps, complex_amps)
def test_conjugate_symmetry(a, b):
    n = min(a.size, b.size)
    f, g = field(a[:n]), field(b[:n])
    assert inner_product(f, g) == pytest.approx(inner_product(g, f).conjugate(), rel=1e-12, abs=1e-9)
