import math

import numpy as np
import pytest

from invquant.data import Dataset, sample_dataset
from invquant.errors import NumericalError, OptimizerStall, PreconditionerError
from invquant.lattice import Lattice, LatticeOperator, PotentialField, build_truncated_rbf
from invquant.optimizer import (Evaluation, InitialGuess, OptimizerConfig, Parameterization,
                                Preconditioner, QuantumProblem, enforce_symmetry_constraint,
                                initial_guess_delta_peaks, iterate, stationarity_residual,
                                total_log_posterior)
from invquant.priors import EnergyPenalty, GaussianPrior
from invquant.spectral import position_likelihood, solve


@pytest.fixture(scope="module")
def toy():
    lat = Lattice(24, 0.5)
    x = lat.x - lat.x.mean()
    vt = PotentialField(0.4 * x**2 / 9 - 0.8 * np.exp(-x**2), lat)
    vt = vt - vt.values[0]
    p = position_likelihood(*solve(1.0, vt, 2.0))
    data = sample_dataset(p, lat, 300, 7, 2.0)
    prior = GaussianPrior(PotentialField.zeros(lat), build_truncated_rbf(lat, 1.0), 0.5)
    return lat, vt, data, prior


def _problem(toy, **kw):
    lat, _, data, prior = toy
    return QuantumProblem(lat, 1.0, 2.0, kw.pop("data", data), kw.pop("priors", [prior]), **kw)


class TestIterate:
    def test_no_data_returns_prior_mean(self, toy):
        lat, *_ = toy
        v0 = PotentialField(np.sin(lat.x) * 0.3, lat)
        v0 = v0 - v0.values * (np.arange(lat.n_points) % (lat.n_points - 1) == 0)
        prior = GaussianPrior(v0, build_truncated_rbf(lat, 1.0), 0.5)
        res = iterate(OptimizerConfig(initial_guess="custom", custom_guess=PotentialField.zeros(lat)),
                      _problem(toy, data=Dataset(np.zeros(0)), priors=[prior]))
        assert res.converged and res.iterations_used <= 5
        np.testing.assert_allclose(res.potential.values, v0.values, atol=1e-8)

    def test_trace_monotone_and_fixed_point(self, toy):
        prob = _problem(toy)
        cfg = OptimizerConfig(preconditioner="gauss_newton", gradient_tolerance=1e-9)
        res = iterate(cfg, prob)
        assert res.converged and res.stop_reason in ("gradient", "posterior", "roundoff")
        assert np.all(np.diff(res.log_posterior_trace) >= 0)
        assert len(res.log_posterior_trace) == res.iterations_used + 1
        # one more step from the solution barely moves it
        again = iterate(OptimizerConfig(initial_guess="custom", custom_guess=res.potential,
                                        max_iterations=1, preconditioner="gauss_newton"), prob)
        assert np.abs(again.potential.values - res.potential.values).max() < 1e-6

    def test_preconditioners_agree(self, toy):
        prob = _problem(toy)
        lat = toy[0]
        ref = iterate(OptimizerConfig(preconditioner="gauss_newton", gradient_tolerance=1e-10), prob)
        plain = iterate(OptimizerConfig(preconditioner="prior", gradient_tolerance=1e-10,
                                        max_iterations=5000), prob)
        ident = iterate(OptimizerConfig(preconditioner="identity", gradient_tolerance=1e-10,
                                        max_iterations=20000, custom_guess=ref.potential,
                                        initial_guess="custom"), prob)
        for r in (plain, ident):
            l1 = np.abs(r.potential.values - ref.potential.values).sum() * lat.spacing
            assert l1 < 1e-3

    def test_pins_and_symmetric_mode(self):
        lat = Lattice.centered(21, 0.5)
        vt = PotentialField(0.1 * lat.x**2, lat)
        vt = vt - vt.values[0]
        data = sample_dataset(position_likelihood(*solve(1.0, vt, 1.0)), lat, 200, 3)
        prior = GaussianPrior(PotentialField.zeros(lat), build_truncated_rbf(lat, 1.0), 0.5)
        prob = QuantumProblem(lat, 1.0, 1.0, data, [prior],
                              parameterization=Parameterization.symmetric(lat))
        res = iterate(OptimizerConfig(preconditioner="gauss_newton"), prob)
        v = res.potential.values
        np.testing.assert_array_equal(v, v[::-1])
        assert v[0] == 0.0 and v[-1] == 0.0

    def test_zero_iterations_echo_start(self, toy):
        lat = toy[0]
        guess = PotentialField(np.linspace(0, 1, lat.n_points) * 0.0, lat)
        res = iterate(OptimizerConfig(max_iterations=0, initial_guess="custom", custom_guess=guess),
                      _problem(toy))
        assert res.iterations_used == 0 and len(res.log_posterior_trace) == 1
        np.testing.assert_array_equal(res.potential.values, guess.values)
        assert not res.converged and res.stop_reason == "max_iterations"

    def test_metadata_records_rules(self, toy):
        res = iterate(OptimizerConfig(max_iterations=0), _problem(toy))
        meta = res.metadata
        assert meta["max_shrinks"] == 30 and meta["posterior_window"] == 3
        assert meta["min_density"] == 1e-300 and meta["parameterization"] == "interior"
        assert meta["gradient_threshold"] == pytest.approx(1e-6 * 600)

    def test_delta_peak_start(self, toy):
        lat, _, data, _ = toy
        peaks = initial_guess_delta_peaks(data, lat)
        counts = np.bincount(lat.index_of(data.coordinates), minlength=lat.n_points).astype(float)
        counts[[0, -1]] = 0.0
        np.testing.assert_allclose(peaks.values, -counts / lat.spacing)
        res = iterate(OptimizerConfig(initial_guess="delta_peaks", preconditioner="gauss_newton"),
                      _problem(toy))
        assert res.converged


class TestFailures:
    def test_indefinite_custom_preconditioner(self, toy):
        lat = toy[0]
        bad = LatticeOperator(-np.eye(lat.n_points), lat)
        with pytest.raises(PreconditionerError):
            iterate(OptimizerConfig(preconditioner="custom", custom_operator=bad), _problem(toy))

    def test_prior_preconditioner_needs_prior(self, toy):
        with pytest.raises(PreconditionerError):
            iterate(OptimizerConfig(preconditioner="prior"), _problem(toy, priors=[]))

    def test_stall_is_reported(self, toy):
        lat = toy[0]

        class Downhill:
            # gradient promises ascent that never materializes
            lattice = lat
            reference = PotentialField.zeros(lat)
            parameterization = Parameterization.interior(lat)
            data = None
            gradient_scale = 1.0

            def evaluate(self, v):
                return Evaluation(-float(np.sum(v)) - 1.0, np.ones(lat.n_points))

            def precision(self, v):
                return np.eye(lat.n_points)

        with pytest.raises(OptimizerStall) as exc:
            iterate(OptimizerConfig(), Downhill())
        assert exc.value.trace == [-1.0]

    def test_zero_density_start(self, toy):
        lat, _, data, prior = toy
        wall = np.zeros(lat.n_points)
        wall[1:-1] = 1e6
        guess = PotentialField(wall, lat)
        with pytest.raises(NumericalError):
            iterate(OptimizerConfig(initial_guess="custom", custom_guess=guess),
                    QuantumProblem(lat, 1.0, math.inf, data, [prior]))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(step_eta=0.0)
        with pytest.raises(ValueError):
            OptimizerConfig(max_iterations=-1)
        with pytest.raises(ValueError):
            OptimizerConfig(preconditioner="custom")
        assert OptimizerConfig(preconditioner="identity").preconditioner is Preconditioner.IDENTITY
        assert OptimizerConfig().initial_guess is InitialGuess.REFERENCE


class TestPosterior:
    def test_composition(self, toy):
        lat, vt, data, prior = toy
        pen = EnergyPenalty(5.0, -0.2)
        total = total_log_posterior(vt, data, [prior], pen, 2.0)
        dec, ens = solve(1.0, vt, 2.0)
        p = position_likelihood(dec, ens)
        like = np.log(p[lat.index_of(data.coordinates)]).sum()
        expect = like + prior.log_density(vt)[0] - 2.5 * (ens.average_energy + 0.2) ** 2
        assert total == pytest.approx(expect, rel=1e-12)

    def test_doubling_data_doubles_likelihood(self, toy):
        lat, vt, data, _ = toy
        twice = Dataset(np.concatenate([data.coordinates, data.coordinates]))
        a = total_log_posterior(vt, data, beta=2.0)
        b = total_log_posterior(vt, twice, beta=2.0)
        assert b == pytest.approx(2 * a, rel=1e-12)

    def test_residual_vanishes_at_reconstruction(self, toy):
        lat, _, data, prior = toy
        res = iterate(OptimizerConfig(preconditioner="gauss_newton", gradient_tolerance=1e-10),
                      _problem(toy))
        r = stationarity_residual(res.potential, data, [prior], beta=2.0).values
        assert np.abs(r[1:-1]).max() < 1e-10 * 600 * 10


class TestSymmetry:
    def test_idempotent_and_exact(self):
        lat = Lattice.centered(15, 0.3)
        v = PotentialField(np.random.default_rng(0).standard_normal(15), lat)
        s = enforce_symmetry_constraint(v)
        np.testing.assert_array_equal(s.values, s.values[::-1])
        np.testing.assert_array_equal(enforce_symmetry_constraint(s).values, s.values)

    def test_symmetric_embedding(self):
        lat = Lattice.centered(7, 1.0)
        par = Parameterization.symmetric(lat)
        assert par.n_free == 3
        np.testing.assert_array_equal(par.embedding[:, 0], [0, 1, 0, 0, 0, 1, 0])
        g = np.arange(7.0)
        np.testing.assert_allclose(par.project_gradient(g), [3.0, 3.0, 3.0])
