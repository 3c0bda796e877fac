import math

import numpy as np
import pytest

from pcsft import _kernels
from pcsft.field_space import FieldState, Grid, norm_squared
from pcsft.signal_gen import (
    ProcessError,
    ProcessParams,
    field_at,
    field_state,
    init_driver,
    make_rng,
    sample_ensemble,
    sample_etas,
    step_driver,
)


@pytest.fixture
def psi():
    g = Grid.uniform([4], [(0.0, 1.0)])
    return FieldState(g, [0.5, 1 + 1j, -2j, 0.0])


def trajectory_by_steps(params, n, replica=0):
    d = init_driver(params, replica)
    out = []
    for _ in range(n):
        out.append(d.eta)
        step_driver(d)
    return np.array(out), d


class TestParams:
    def test_defaults(self):
        p = ProcessParams()
        assert (p.tau_pq, p.dt, p.gamma) == (1e-4, 1e-5, 1.0)

    def test_step_too_coarse(self):
        with pytest.raises(ProcessError, match="dt <= tau_pq/10"):
            ProcessParams(tau_pq=1e-4, dt=2e-5)

    def test_lists_every_violation(self):
        with pytest.raises(ProcessError) as exc:
            ProcessParams(tau_pq=-1.0, dt=0.0, gamma=-2.0)
        msg = str(exc.value)
        assert "tau_pq" in msg and "dt" in msg and "gamma" in msg

    def test_frozen_coefficients(self):
        assert ProcessParams(tau_pq=math.inf).coefficients() == (1.0, 0.0)

    def test_coefficients_preserve_unit_variance(self):
        a, c = ProcessParams(tau_pq=1e-4, dt=1e-5).coefficients()
        assert a == pytest.approx(math.exp(-0.1))
        assert a * a + 2 * c * c == pytest.approx(1.0, rel=1e-15)


class TestDriver:
    def test_same_seed_same_trajectory(self):
        p = ProcessParams(seed=11)
        a, _ = trajectory_by_steps(p, 500)
        b, _ = trajectory_by_steps(p, 500)
        assert np.array_equal(a, b)

    def test_replicas_differ(self):
        p = ProcessParams(seed=11)
        a, _ = trajectory_by_steps(p, 50, 0)
        b, _ = trajectory_by_steps(p, 50, 1)
        assert not np.array_equal(a, b)

    def test_chunked_trajectory_matches_single_steps(self):
        p = ProcessParams(seed=3)
        ref, d_ref = trajectory_by_steps(p, 70_000)
        d = init_driver(p)
        fast = d.trajectory(70_000)
        assert np.array_equal(fast, ref)
        assert d.eta == d_ref.eta and d.step_index == d_ref.step_index

    def test_frozen_driver_is_constant(self):
        d = init_driver(ProcessParams(tau_pq=math.inf, seed=5))
        eta0 = d.eta
        assert np.all(d.trajectory(1000) == eta0)

    def test_white_noise_limit_uncorrelated(self):
        # dt >> tau_pq is rejected by ProcessParams, so drive the update directly
        a = math.exp(-10.0)
        c = math.sqrt(-math.expm1(-20.0) / 2)
        noise = make_rng(8).standard_normal((200_000, 2))
        re, im = np.empty(200_000), np.empty(200_000)
        _kernels.ou_path(0.3, -0.1, a, c, noise, re, im)
        eta = re + 1j * im
        lag1 = np.mean(eta[2:] * eta[1:-1].conj())
        assert abs(lag1) < 5 / math.sqrt(eta.size)

    def test_stationary_initial_law(self):
        draws = np.array([init_driver(ProcessParams(seed=s)).eta for s in range(100_000)])
        m = np.mean(np.abs(draws) ** 2)
        assert m == pytest.approx(1.0, abs=0.01)

    def test_long_run_second_moment(self):
        d = init_driver(ProcessParams(seed=21))
        x = np.abs(d.trajectory(1_000_000)) ** 2
        # batch means over 100 correlation times
        b = x.reshape(-1, 1000).mean(axis=1)
        se = b.std(ddof=1) / math.sqrt(b.size)
        assert abs(x.mean() - 1.0) <= 3 * se

    @pytest.mark.parametrize("k", [1, 5, 10, 30])
    def test_autocorrelation_matches_exponential(self, k):
        p = ProcessParams(seed=99)
        eta = init_driver(p).trajectory(1_000_000)
        prod = eta[:-k] * eta[k:].conj()
        est = prod.mean()
        blocks = prod[: prod.size // 1000 * 1000].reshape(-1, 1000).mean(axis=1)
        se = max(blocks.real.std(ddof=1), blocks.imag.std(ddof=1)) / math.sqrt(blocks.size)
        expected = math.exp(-k * p.dt / p.tau_pq)
        assert abs(est.real - expected) <= 3 * se
        assert abs(est.imag) <= 3 * se


class TestField:
    def test_unit_driver_reproduces_psi(self, psi):
        d = init_driver(ProcessParams(tau_pq=math.inf, eta0=1.0))
        assert all(field_at(d, psi, i) == psi[i] for i in range(4))
        assert np.array_equal(field_state(d, psi).amplitudes, psi.amplitudes)

    def test_zero_cell_stays_zero(self, psi):
        d = init_driver(ProcessParams(seed=4))
        for _ in range(100):
            assert field_at(d, psi, 3) == 0
            d.step()

    def test_ensemble_density_matches_psi(self, psi):
        etas = sample_etas(100_000, seed=13)
        dens = np.abs(etas * psi[1]) ** 2
        assert dens.mean() == pytest.approx(abs(psi[1]) ** 2, rel=0.01)

    def test_rank_one_covariance(self, psi):
        etas = sample_etas(100_000, seed=17)
        phi = etas[:, None] * psi.amplitudes[None, :]
        cov = phi.T @ phi.conj() / etas.size
        expect = np.outer(psi.amplitudes, psi.amplitudes.conj())
        # sample covariance error ~ |psi_x psi_y| / sqrt(n)
        tol = 5 * np.abs(expect) / math.sqrt(etas.size) + 1e-15
        assert np.all(np.abs(cov - expect) <= tol)


class TestEnsemble:
    def test_reproducible_single_draw(self, psi):
        a = sample_ensemble(psi, 1, seed=5)[0]
        b = sample_ensemble(psi, 1, seed=5)[0]
        assert np.array_equal(a.amplitudes, b.amplitudes)

    def test_mean_energy(self, psi):
        samples = sample_ensemble(psi, 100_000, seed=6)
        e = np.array([norm_squared(s) for s in samples])
        assert e.mean() == pytest.approx(norm_squared(psi), rel=0.01)

    def test_zero_mean(self, psi):
        samples = sample_ensemble(psi, 100_000, seed=7)
        v = np.array([s[1] for s in samples])
        se = abs(psi[1]) / math.sqrt(2 * v.size)
        assert abs(v.real.mean()) <= 3 * se and abs(v.imag.mean()) <= 3 * se

    def test_needs_one_sample(self, psi):
        with pytest.raises(ValueError):
            sample_ensemble(psi, 0, seed=1)

    def test_rng_streams_are_keyed(self):
        a = make_rng(1, 0).standard_normal(4)
        b = make_rng(1, 1).standard_normal(4)
        c = make_rng(1, 0).standard_normal(4)
        assert not np.array_equal(a, b) and np.array_equal(a, c)
