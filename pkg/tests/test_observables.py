import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pcsft.field_space import FieldError, FieldState, Grid, delta_state, norm_squared
from pcsft.observables import (
    Constant,
    ErgodicWindowError,
    Moments,
    PositionDensity,
    QuadraticObservable,
    TotalEnergy,
    ensemble_average,
    ergodicity_report,
    evaluate_quadratic,
    functional_series,
    operator_trace,
    position_density,
    sample_covariance,
    time_average,
    time_average_error_sweep,
)
from pcsft.signal_gen import ProcessParams, init_driver, sample_ensemble


@pytest.fixture
def grid():
    return Grid.uniform([5], [(0.0, 0.5)])


@pytest.fixture
def psi(grid):
    return FieldState(grid, [0.2, 1.0 - 0.5j, 2j, 0.0, -1.0])


def ar1_mean_sd(a: float, n: int) -> float:
    """Exact sd of the mean of |eta_k|^2 over n steps of the unit complex AR(1)."""
    rho = a * a
    m = np.arange(1, n)
    var = (n + 2 * np.sum((n - m) * rho ** m)) / n ** 2
    return math.sqrt(var)


def random_hermitian(rng, n):
    m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (m + m.conj().T) / 2


class TestQuadratic:
    def test_identity_is_energy(self, psi, grid):
        assert evaluate_quadratic(QuadraticObservable.identity(grid), psi) == pytest.approx(norm_squared(psi), rel=1e-14)

    def test_position_projector(self, psi, grid):
        A = QuadraticObservable.position(grid, 2)
        assert evaluate_quadratic(A, psi) == pytest.approx(abs(psi[2]) ** 2 * grid.dV, rel=1e-14)

    def test_projector_matches_position(self, psi, grid):
        A = QuadraticObservable.projector(delta_state(grid, 1))
        assert A(psi) == pytest.approx(abs(psi[1]) ** 2 * grid.dV, rel=1e-14)

    def test_zero_field(self, grid):
        A = QuadraticObservable(random_hermitian(np.random.default_rng(0), 5), grid)
        assert A(FieldState(grid, np.zeros(5))) == 0

    def test_non_hermitian(self, grid):
        m = np.zeros((5, 5))
        m[0, 1] = 1.0
        with pytest.raises(FieldError, match="Hermitian"):
            QuadraticObservable(m, grid)

    def test_dimension_mismatch(self, grid, psi):
        with pytest.raises(FieldError):
            QuadraticObservable(np.eye(4), grid)
        A = QuadraticObservable.identity(Grid.uniform([3]))
        with pytest.raises(FieldError, match="dimension"):
            A(psi)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_real_and_linear(self, seed):
        rng = np.random.default_rng(seed)
        g = Grid.uniform([6], [(0.0, 0.6)])
        phi = FieldState(g, rng.standard_normal(6) + 1j * rng.standard_normal(6))
        A = QuadraticObservable(random_hermitian(rng, 6), g)
        B = QuadraticObservable(random_hermitian(rng, 6), g)
        raw = complex(np.vdot(phi.amplitudes, A.matrix @ phi.amplitudes))
        assert abs(raw.imag) < 1e-10 * max(1.0, abs(raw.real))
        lhs = (A + B)(phi)
        rhs = A(phi) + B(phi)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


class TestPositionDensity:
    def test_modulus_squared(self, grid):
        phi = FieldState(grid, [0, 3j, 0, 0, 0])
        assert position_density(phi, 1) == 9

    @settings(max_examples=50, deadline=None)
    @given(st.complex_numbers(max_magnitude=100, allow_nan=False, allow_infinity=False))
    def test_homogeneous(self, c):
        g = Grid.uniform([2])
        phi = FieldState(g, [1 + 2j, -0.5])
        assert position_density(phi.scaled(c), 0) == pytest.approx(abs(c) ** 2 * position_density(phi, 0), rel=1e-12, abs=1e-300)

    def test_ensemble_mean(self, psi):
        f = PositionDensity(1)
        avg = ensemble_average(f, sample_ensemble(psi, 100_000, seed=12))
        assert avg.value == pytest.approx(abs(psi[1]) ** 2, rel=0.01)


class TestTimeAverage:
    def test_frozen_driver_exact(self, psi):
        p = ProcessParams(tau_pq=math.inf, dt=1e-5, eta0=0.6 - 0.8j)
        d = init_driver(p)
        val = time_average(PositionDensity(2), d, psi, 0.01)
        assert val == pytest.approx(abs(d.eta) ** 2 * abs(psi[2]) ** 2, rel=1e-14)

    def test_constant_functional(self, psi):
        d = init_driver(ProcessParams(seed=1))
        assert time_average(Constant(1.0), d, psi, 0.01) == 1.0

    def test_window_too_short(self, psi):
        d = init_driver(ProcessParams())
        with pytest.raises(ErgodicWindowError, match="ergodic window too short"):
            time_average(TotalEnergy(), d, psi, 50e-4)

    def test_energy_over_long_window(self, psi):
        p = ProcessParams(seed=2)
        val = time_average(TotalEnergy(), init_driver(p), psi, 1e4 * p.tau_pq)
        assert val == pytest.approx(norm_squared(psi), rel=0.03)

    def test_quadratic_fast_path_matches_generic(self, psi):
        p = ProcessParams(seed=3)
        f = QuadraticObservable.position(psi.grid, 1)

        def generic(phi):
            return f(phi)

        etas = init_driver(p).trajectory(2000)
        fast = functional_series(f, etas, psi)
        slow = functional_series(generic, etas, psi)
        assert np.allclose(fast, slow, rtol=1e-12, atol=1e-15)

    def test_error_matches_ar1_theory(self, psi):
        p = ProcessParams(seed=0)
        f = PositionDensity(1)
        Delta = 1e3 * p.tau_pq
        n = int(round(Delta / p.dt))
        errs = [time_average(f, init_driver(p, r), psi, Delta) - f(psi) for r in range(200)]
        rms = math.sqrt(np.mean(np.square(errs)))
        sd = ar1_mean_sd(p.coefficients()[0], n) * f(psi)
        # rms of 200 draws: relative sampling error ~ 1/sqrt(400) = 5%
        assert rms == pytest.approx(sd, rel=0.2)


class TestEnsemble:
    def test_single_sample(self, psi):
        avg = ensemble_average(TotalEnergy(), [psi])
        assert avg.value == norm_squared(psi) and avg.n == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            ensemble_average(TotalEnergy(), [])

    def test_total_energy(self, psi):
        avg = ensemble_average(TotalEnergy(), sample_ensemble(psi, 100_000, seed=9))
        assert abs(avg.value - norm_squared(psi)) <= 3 * avg.stderr

    def test_covariance_trace(self, psi):
        samples = sample_ensemble(psi, 20_000, seed=10)
        D = sample_covariance(samples)
        avg = ensemble_average(TotalEnergy(), samples)
        assert operator_trace(D, psi.grid) == pytest.approx(avg.value, rel=1e-12)
        assert abs(operator_trace(D, psi.grid) - norm_squared(psi)) <= 3 * avg.stderr


class TestMoments:
    @settings(max_examples=100, deadline=None)
    @given(arrays(float, st.integers(2, 60), elements=st.floats(-1e3, 1e3)), st.data())
    def test_merge_matches_pooled(self, x, data):
        cut = data.draw(st.integers(0, x.size))
        pooled = Moments.of(x)
        merged = Moments.of(x[:cut]).merge(Moments.of(x[cut:]))
        assert merged.n == pooled.n
        assert merged.mean == pytest.approx(pooled.mean, rel=1e-9, abs=1e-9)
        assert merged.m2 == pytest.approx(pooled.m2, rel=1e-9, abs=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, 12, elements=st.floats(-10, 10)))
    def test_merge_order_independent(self, x):
        parts = [Moments.of(x[i:i + 3]) for i in range(0, 12, 3)]
        a = parts[0].merge(parts[1]).merge(parts[2].merge(parts[3]))
        b = parts[3].merge(parts[1]).merge(parts[0]).merge(parts[2])
        assert a.mean == pytest.approx(b.mean, rel=1e-9, abs=1e-12)
        assert a.m2 == pytest.approx(b.m2, rel=1e-9, abs=1e-9)


class TestErgodicityReport:
    def test_agreement_at_defaults(self, psi):
        p = ProcessParams(seed=5)
        rep = ergodicity_report(PositionDensity(1), psi, p, 1e4 * p.tau_pq, 10_000)
        assert rep.converged and not rep.flagged
        assert abs(rep.difference) <= 3 * rep.combined_error

    def test_constant_functional_zero_difference(self, psi):
        p = ProcessParams(seed=5)
        rep = ergodicity_report(Constant(1.0), psi, p, 1e4 * p.tau_pq, 1000)
        assert rep.difference == 0.0

    def test_short_window_flagged(self, psi):
        p = ProcessParams(seed=5)
        rep = ergodicity_report(PositionDensity(1), psi, p, p.tau_pq, 10_000)
        assert not rep.converged and rep.flagged


def test_decay_sweep_slope(psi):
    p = ProcessParams(seed=4)
    deltas = [1e3 * p.tau_pq, 10 ** 3.5 * p.tau_pq, 1e4 * p.tau_pq]
    sw = time_average_error_sweep(PositionDensity(1), psi, p, deltas, replicas=60)
    assert sw.slope == pytest.approx(-0.5, abs=0.15)
