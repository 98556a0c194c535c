import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesnmr.model import (AcquisitionConfig, FidRecord, NoiseModel, NuisanceParams, SpeciesTable,
                            basis_matrices, complex_basis, ppm_to_rad_s, rad_s_to_ppm,
                            simulate_fid)
from oracles import design_matrix, random_instance

ACQ = AcquisitionConfig()


def two_species():
    return SpeciesTable.from_dict({"a": [(10.0, 1.0), (20.0, 2.0)], "b": [(-5.0, 3.0)]})


def test_ppm_conversion_values():
    assert ppm_to_rad_s(1.0, ACQ) == pytest.approx(471.238898038469, rel=1e-14)
    assert ppm_to_rad_s(209.29, ACQ) == pytest.approx(209.29 * 150 * math.pi, rel=1e-14)
    # 209.29 * 75 * 2 pi = 98625.589 (a rounded 98627 figure is not reachable by arithmetic)
    assert ppm_to_rad_s(209.29, ACQ) == pytest.approx(98625.58897, abs=1e-4)


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_ppm_round_trip(x):
    assert rad_s_to_ppm(ppm_to_rad_s(x, ACQ), ACQ) == pytest.approx(x, rel=1e-12, abs=1e-12)


def test_single_line_basis_at_origin():
    table = SpeciesTable.from_dict({"a": [(10.0, 4.0)], "b": [(50.0, 6.0)]})
    psi = NuisanceParams.from_ppm(table.freqs_ppm, ACQ)
    Phi, Psi = basis_matrices(psi, table, ACQ, ACQ.times, ACQ.times)
    np.testing.assert_allclose(Phi[0], [4.0, 6.0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(Psi[0], [0.0, 0.0], atol=1e-15)


def test_basis_matches_loop_oracle():
    rng = np.random.default_rng(1)
    table = two_species()
    acq = AcquisitionConfig(40, 1e-3, 1.0)
    psi = NuisanceParams(2 * np.pi * rng.uniform(-30, 30, 3), 0.7, 3e-4, 12.0)
    t_re, t_im = acq.times, acq.times[:25] + 5e-4
    Phi, Psi = basis_matrices(psi, table, acq, t_re, t_im)
    np.testing.assert_allclose(np.vstack([Phi, Psi]), design_matrix(psi, table, acq, t_re, t_im),
                               rtol=1e-12, atol=1e-12)


def test_theta_period():
    table = two_species()
    psi = NuisanceParams.from_ppm(table.freqs_ppm, ACQ, 0.3, 1e-5, 20.0)
    psi2 = NuisanceParams.from_ppm(table.freqs_ppm, ACQ, 0.3 + 2 * np.pi, 1e-5, 20.0)
    a = complex_basis(psi, table, 0.0, ACQ.times)
    b = complex_basis(psi2, table, 0.0, ACQ.times)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-11)


@settings(max_examples=30, deadline=None)
@given(theta=st.floats(-10, 10), tau=st.floats(0, 1e-3), amp=st.floats(0.1, 10),
       alpha=st.floats(0, 100))
def test_quadrature_modulus_independent_of_phase(theta, tau, amp, alpha):
    table = SpeciesTable.from_dict({"x": [(33.0, 2.5)]})
    psi = NuisanceParams.from_ppm(table.freqs_ppm, ACQ, theta, tau, alpha)
    fid = simulate_fid([amp], psi, None, table, ACQ, seed=0)
    expected = amp * 2.5 * np.exp(-alpha * ACQ.times)
    np.testing.assert_allclose(np.abs(fid.complex), expected, rtol=1e-10)


def test_noise_free_is_linear_in_amplitudes():
    table = two_species()
    psi = NuisanceParams.from_ppm(table.freqs_ppm, ACQ, 0.2, 1e-5, 30.0)
    f1 = simulate_fid([1.0, 0.0], psi, None, table, ACQ, 0)
    f2 = simulate_fid([0.0, 1.0], psi, None, table, ACQ, 0)
    f = simulate_fid([2.0, -3.0], psi, None, table, ACQ, 0)
    np.testing.assert_allclose(f.complex, 2 * f1.complex - 3 * f2.complex, atol=1e-12)


def test_simulate_is_seed_reproducible():
    table = two_species()
    psi = NuisanceParams.from_ppm(table.freqs_ppm, ACQ, 0.1, 0.0, 10.0)
    a = simulate_fid([1.0, 2.0], psi, NoiseModel(0.5), table, ACQ, 11)
    b = simulate_fid([1.0, 2.0], psi, NoiseModel(0.5), table, ACQ, 11)
    c = simulate_fid([1.0, 2.0], psi, NoiseModel(0.5), table, ACQ, 12)
    assert np.array_equal(a.y1, b.y1) and np.array_equal(a.y2, b.y2)
    assert not np.array_equal(a.y1, c.y1)


def test_simulated_noise_variance():
    table = two_species()
    psi = NuisanceParams.from_ppm(table.freqs_ppm, ACQ)
    fid = simulate_fid([0.0, 0.0], psi, NoiseModel(2.0), table, ACQ, 3)
    assert np.var(np.concatenate([fid.y1, fid.y2])) == pytest.approx(2.0, rel=0.05)


def test_species_permutation_permutes_columns():
    table = two_species()
    psi = NuisanceParams.from_ppm(table.freqs_ppm, ACQ, 0.4, 2e-5, 5.0)
    perm = [1, 0]
    t2 = table.permuted(perm)
    psi2 = NuisanceParams(psi.freqs_rad_s[table.line_permutation(perm)], 0.4, 2e-5, 5.0)
    Phi, _ = basis_matrices(psi, table, ACQ, ACQ.times, ACQ.times)
    Phi2, _ = basis_matrices(psi2, t2, ACQ, ACQ.times, ACQ.times)
    np.testing.assert_array_equal(Phi[:, perm], Phi2)


@pytest.mark.parametrize("bad", [
    {},
    {"a": []},
    {"a": [(1.0, 0.0)]},
    {"a": [(1.0, -2.0)]},
])
def test_table_validation(bad):
    with pytest.raises(ValueError):
        SpeciesTable.from_dict(bad)


def test_duplicate_species_rejected():
    from bayesnmr.model import Line, Species
    s = Species("a", (Line(1.0, 1.0),))
    with pytest.raises(ValueError, match="duplicate"):
        SpeciesTable((s, s))


def test_type_invariants():
    with pytest.raises(ValueError):
        AcquisitionConfig(n_samples=1)
    with pytest.raises(ValueError):
        AcquisitionConfig(dt_s=0.0)
    with pytest.raises(ValueError):
        NoiseModel(0.0)
    with pytest.raises(ValueError):
        NuisanceParams(np.zeros(2), alpha_per_s=-1.0)
    with pytest.raises(ValueError, match="increasing"):
        FidRecord([0.0, 0.0], [1.0, 2.0], [0.0], [1.0])
    with pytest.raises(ValueError):
        NuisanceParams(np.zeros(2)).check(two_species())
    with pytest.raises(ValueError):
        simulate_fid([1.0], NuisanceParams(np.zeros(3)), None, two_species(), ACQ, 0)


def test_unequal_channel_grids():
    rng = np.random.default_rng(0)
    fid, psi, table = random_instance(rng)
    assert fid.y1.size + fid.y2.size >= 2
    if not fid.shared_grid:
        with pytest.raises(ValueError):
            fid.complex
