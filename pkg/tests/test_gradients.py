import warnings

import numpy as np
import pytest

from invquant.data import Dataset, sample_dataset
from invquant.errors import ZeroLikelihoodError
from invquant.gradcheck import finite_difference, relative_error
from invquant.gradients import (contract_parametric, d_average_energy, d_energy, d_energy_penalty,
                                d_log_likelihood, d_orbital, thermal_divided_differences)
from invquant.lattice import Lattice, PotentialField
from invquant.priors import EnergyPenalty, energy_penalty_value
from invquant.spectral import log_likelihood, position_likelihood, solve, thermal_ensemble


def _random_smooth(lat, seed):
    r = np.random.default_rng(seed)
    x = lat.x / lat.length
    return PotentialField(sum(r.normal() * np.cos(np.pi * k * x) / (1 + k) for k in range(5)), lat)


@pytest.fixture(params=[(1.0, 0), (4.0, 1)], ids=["beta1", "beta4"])
def case(request, lat30):
    beta, seed = request.param
    v = _random_smooth(lat30, seed)
    dec, ens = solve(0.8, v, beta)
    data = sample_dataset(position_likelihood(dec, ens), lat30, 20, seed, beta)
    return v, beta, dec, ens, data


def _solve(v, beta):
    return solve(0.8, v, beta)


class TestEnergyDerivative:
    def test_integrates_to_one(self, case):
        v, _, dec, _, _ = case
        for a in range(4):
            assert d_energy(dec, a).integral() == pytest.approx(1.0, abs=1e-12)

    def test_finite_difference(self, case):
        v, beta, dec, _, _ = case
        for a in range(3):
            fd = finite_difference(lambda w: _solve(w, beta)[0].energies[a], v, eps=1e-6)
            assert relative_error(d_energy(dec, a).values, fd) < 1e-5

    def test_even_for_symmetric_well(self):
        lat = Lattice.centered(31, 0.5)
        dec, _ = solve(1.0, PotentialField(0.3 * lat.x**2, lat), 1.0)
        g = d_energy(dec, 0).values
        np.testing.assert_allclose(g, g[::-1], atol=1e-8)


class TestOrbitalDerivative:
    def test_self_overlap_vanishes(self, case):
        _, _, dec, _, _ = case
        lat = dec.lattice
        for a in range(3):
            rows = np.array([d_orbital(dec, a, xe).values for xe in range(lat.n_points)])
            # rows[x', x] = d phi_a(x') / d v(x)
            np.testing.assert_allclose(dec.orbitals[:, a] @ rows * lat.spacing, 0.0, atol=1e-9)

    def test_finite_difference(self, case):
        v, beta, dec, _, _ = case
        for a, xe in ((0, 10), (2, 21)):
            fd = finite_difference(lambda w: _solve(w, beta)[0].orbitals[xe, a], v)
            assert relative_error(d_orbital(dec, a, xe).values, fd) < 1e-4

    def test_two_level_perturbation_by_hand(self):
        lat = Lattice(3, 1.0)
        dec, _ = solve(1.0, PotentialField([0.0, 0.3, 1.1], lat), 1.0)
        e, phi, h = dec.energies, dec.orbitals, lat.spacing
        for a in range(3):
            for xe in range(3):
                expect = np.zeros(3)
                for x in range(3):
                    for g in range(3):
                        if g != a:
                            expect[x] += phi[xe, g] * phi[x, g] * phi[x, a] / (e[a] - e[g])
                np.testing.assert_allclose(d_orbital(dec, a, xe).values, expect, atol=1e-12)
        assert h == 1.0

    def test_near_degenerate_levels_warn(self):
        lat = Lattice(4, 1.0, boundary="periodic")
        dec, _ = solve(1.0, PotentialField([0.0, 1e-9, 0.0, 0.0], lat), 1.0, "periodic")
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            d_orbital(dec, 1, 0, threshold=2e-10)
        assert any(issubclass(w.category, RuntimeWarning) for w in rec)


class TestLogLikelihoodGradient:
    def test_finite_difference(self, case):
        v, beta, dec, ens, data = case
        fd = finite_difference(lambda w: log_likelihood(data, *_solve(w, beta)), v)
        assert relative_error(d_log_likelihood(dec, ens, data).values, fd) < 1e-4

    def test_gauge_invariance(self, case):
        _, _, dec, ens, data = case
        assert abs(d_log_likelihood(dec, ens, data).integral()) < 1e-8

    def test_high_temperature_vanishes(self, lat30):
        v = _random_smooth(lat30, 3)
        dec, ens = solve(0.8, v, 1e-12)
        data = Dataset(lat30.x[[2, 5, 5, 17]])
        assert np.abs(d_log_likelihood(dec, ens, data).values).max() < 1e-8

    def test_translation_equivariant_on_periodic_lattice(self):
        lat = Lattice(20, 1.0, boundary="periodic")
        v = _random_smooth(lat, 5).values
        idx = np.array([1, 4, 4, 9, 13, 19])
        g = []
        for s in (0, 1):
            dec, ens = solve(0.5, PotentialField(np.roll(v, s), lat), 2.0, "periodic")
            g.append(d_log_likelihood(dec, ens, Dataset(lat.x[(idx + s) % 20])).values)
        np.testing.assert_allclose(np.roll(g[0], 1), g[1], atol=1e-10)

    def test_zero_density_datum_is_named(self):
        lat = Lattice(5, 1.0)
        dec, _ = solve(1.0, PotentialField.zeros(lat), 1.0)
        ens = thermal_ensemble(dec, 1e4)
        # ground state of the free box vanishes nowhere; kill one cell artificially
        from invquant.spectral import SpectralDecomposition

        orb = dec.orbitals.copy()
        orb[2, :] = 0.0
        bad = SpectralDecomposition(dec.energies, orb, lat)
        with pytest.raises(ZeroLikelihoodError) as info:
            d_log_likelihood(bad, ens, Dataset(lat.x[[0, 2]]))
        assert info.value.index == 1

    def test_exclude_mode_matches_confluent_without_degeneracy(self, case):
        _, _, dec, ens, data = case
        a = d_log_likelihood(dec, ens, data, degenerate="confluent").values
        b = d_log_likelihood(dec, ens, data, degenerate="exclude").values
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_confluent_handles_exact_degeneracy(self):
        # free periodic ring: every excited level is doubly degenerate
        lat = Lattice(12, 1.0, boundary="periodic")
        v = PotentialField(0.01 * np.cos(2 * np.pi * lat.x / 12 * 3), lat)
        dec, ens = solve(0.5, v, 1.5, "periodic")
        data = Dataset(lat.x[[0, 3, 3, 7]])
        fd = finite_difference(lambda w: log_likelihood(data, *solve(0.5, w, 1.5, "periodic")), v)
        assert relative_error(d_log_likelihood(dec, ens, data).values, fd) < 1e-4


class TestDividedDifferences:
    def test_diagonal_is_derivative_of_weights(self):
        e = np.array([0.0, 0.5, 0.5 + 1e-14, 2.0])
        w = np.exp(-e) / np.exp(-e).sum()
        f = thermal_divided_differences(e, w, 1.0, 1e-10)
        assert f.shape == (4, 4)
        np.testing.assert_allclose(f, f.T, atol=1e-14)


class TestAverageEnergy:
    def test_finite_difference(self, case):
        v, beta, dec, ens, _ = case
        fd = finite_difference(lambda w: _solve(w, beta)[1].average_energy, v)
        assert relative_error(d_average_energy(dec, ens).values, fd) < 1e-4

    def test_shift_integral_is_one(self, case):
        _, _, dec, ens, _ = case
        assert d_average_energy(dec, ens).integral() == pytest.approx(1.0, abs=1e-6)

    def test_low_temperature_limit(self, case):
        v = case[0]
        dec, ens = solve(0.8, v, 1e4)
        np.testing.assert_allclose(d_average_energy(dec, ens).values, dec.orbitals[:, 0] ** 2, atol=1e-6)


class TestEnergyPenaltyGradient:
    def test_zero_at_target(self, case):
        _, _, dec, ens, _ = case
        g = d_energy_penalty(dec, ens, 5.0, ens.average_energy).values
        np.testing.assert_array_equal(g, 0.0)

    def test_chain_rule(self, case):
        _, _, dec, ens, _ = case
        mu, kappa = 3.0, ens.average_energy - 0.4
        expect = mu * (ens.average_energy - kappa) * d_average_energy(dec, ens).values
        np.testing.assert_allclose(d_energy_penalty(dec, ens, mu, kappa).values, expect, atol=1e-10)

    def test_finite_difference(self, case):
        v, beta, dec, ens, _ = case
        pen = EnergyPenalty(7.0, ens.average_energy + 0.25)
        fd = finite_difference(lambda w: energy_penalty_value(pen, _solve(w, beta)[1].average_energy), v)
        assert relative_error(d_energy_penalty(dec, ens, pen.mu, pen.kappa).values, fd) < 1e-4


def test_contract_parametric_chain_rule(case):
    v, beta, dec, ens, _ = case
    lat = v.lattice
    # v(xi) = v + xi_0 * 1 + xi_1 * x
    sens = np.vstack([np.ones(lat.n_points), lat.x])
    g = contract_parametric(d_average_energy(dec, ens), sens)
    eps = 1e-6
    fd = [(_solve(v + eps * s, beta)[1].average_energy - _solve(v - eps * s, beta)[1].average_energy) / (2 * eps)
          for s in sens]
    np.testing.assert_allclose(g, fd, rtol=1e-6)
