import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesnmr import io
from bayesnmr.ft import (FtPipeline, PeakIntegral, PeakWindow, Spectrum, apodization,
                         baseline_correct, default_windows, estimate_sigma_S, ft_quantify,
                         integrate_peaks, preprocess, spectral_noise_sd)
from bayesnmr.model import AcquisitionConfig, NoiseModel, NuisanceParams, SpeciesTable, simulate_fid

ACQ = AcquisitionConfig()
TABLE = io.read_species()
SEPARATED = SpeciesTable.from_dict({"a": [(60.0, 1.0)], "b": [(-40.0, 1.0)]})


def clean(table, a, theta=0.0, tau=0.0, alpha=30.0, freqs=None):
    freqs = table.freqs_ppm if freqs is None else freqs
    psi = NuisanceParams.from_ppm(freqs, ACQ, theta, tau, alpha)
    return simulate_fid(a, psi, None, table, ACQ, 0)


def test_single_line_peak_position():
    table = SpeciesTable.from_dict({"x": [(42.0, 1.0)]})
    spec = preprocess(clean(table, [1.0]), 1.0, 16384)
    bin_ppm = abs(spec.freq_axis_ppm[1] - spec.freq_axis_ppm[0])
    assert abs(spec.freq_axis_ppm[np.argmax(spec.intensity)] - 42.0) <= bin_ppm
    assert np.all(np.diff(spec.freq_axis_ppm) < 0)


def test_phase_correction_restores_absorption():
    table = SpeciesTable.from_dict({"x": [(42.0, 1.0)]})
    ref = preprocess(clean(table, [1.0]), 1.0, 16384)
    phased = preprocess(clean(table, [1.0], theta=1.1, tau=5e-6), 1.0, 16384, 1.1, 5e-6)
    # per-bin first-order correction is exact only on resonance; the leftover phase
    # (w - dw) tau against the dispersive tail costs a few 1e-3 of the window sum
    m = ref.mask(41.0, 43.0)
    assert phased.intensity[m].sum() == pytest.approx(ref.intensity[m].sum(), rel=3e-3)
    assert phased.intensity.max() == pytest.approx(ref.intensity.max(), rel=1e-3)


def test_mixture_shows_five_peaks_at_tabulated_positions():
    fid = clean(TABLE, [0.5, 0.5])
    spec = preprocess(fid, 1.0, 16384)
    for f in TABLE.freqs_ppm:
        m = spec.mask(f - 0.3, f + 0.3)
        assert spec.intensity[m].max() > 10 * np.abs(spec.intensity[spec.mask(-250, -50)]).max()


def test_zerofill_too_short():
    with pytest.raises(ValueError, match="smaller"):
        preprocess(clean(SEPARATED, [1, 1]), 1.0, 1024)


def test_dft_round_trip():
    fid = simulate_fid([1.0, 0.5], NuisanceParams.from_ppm(SEPARATED.freqs_ppm, ACQ, 0, 0, 20),
                       NoiseModel(0.1), SEPARATED, ACQ, 2)
    padded = np.zeros(16384, complex)
    padded[:ACQ.n_samples] = fid.complex * apodization(fid.times_real_s, 1.0)
    back = np.fft.ifft(np.fft.fft(padded))
    assert np.max(np.abs(back - padded)) <= 1e-10 * np.max(np.abs(padded))


def test_cubic_baseline_removed():
    ax = np.linspace(100, -100, 4001)
    trend = 1e3 * (1 + 0.02 * ax - 3e-4 * ax ** 2 + 2e-6 * ax ** 3)
    win = [PeakWindow("a", 0, 10.0, 20.0)]
    out = baseline_correct(Spectrum(ax, trend), 3, win)
    keep = ~Spectrum(ax, trend).mask(10.0, 20.0)
    assert abs(out.intensity[keep].mean()) <= 1e-8 * np.abs(trend).max()


def test_constant_offset_removed_order_zero():
    ax = np.linspace(10, -10, 101)
    out = baseline_correct(Spectrum(ax, np.full(101, 3.25)), 0)
    np.testing.assert_allclose(out.intensity, 0.0, atol=1e-12)


def test_baseline_needs_enough_points():
    ax = np.linspace(1, -1, 5)
    with pytest.raises(ValueError):
        baseline_correct(Spectrum(ax, np.ones(5)), 3, [PeakWindow("a", 0, -0.9, 0.9)])
    with pytest.raises(ValueError):
        baseline_correct(Spectrum(ax, np.ones(5)), -1)


def test_drift_does_not_move_integrals():
    fid = clean(TABLE, [0.3, 0.7])
    wins = default_windows(TABLE)
    raw = preprocess(fid, 1.0, 16384)
    drift = 0.02 * raw.intensity.max() * (1 + (raw.freq_axis_ppm / 300) ** 2)
    a = integrate_peaks(baseline_correct(raw, 3, wins), wins)
    b = integrate_peaks(baseline_correct(raw.with_intensity(raw.intensity + drift), 3, wins), wins)
    for x, y in zip(a, b):
        assert abs(x.S - y.S) <= 0.01 * abs(x.S)


def test_integral_ratio_three_to_seven():
    fid = clean(SEPARATED, [0.3, 0.7])
    wins = default_windows(SEPARATED, 5.0)
    ints = integrate_peaks(FtPipeline(zerofill_to=16384).spectrum(fid, wins), wins)
    assert ints[0].S / ints[1].S == pytest.approx(3 / 7, abs=1e-3)


def test_integrate_errors_and_overlap_warning():
    spec = Spectrum(np.linspace(10, -10, 201), np.ones(201))
    with pytest.raises(ValueError, match="no bins"):
        integrate_peaks(spec, [PeakWindow("a", 0, 0.01, 0.02)])
    with pytest.raises(ValueError, match="outside"):
        integrate_peaks(spec, [PeakWindow("a", 0, 9.0, 11.0)])
    with pytest.warns(UserWarning, match="overlap"):
        integrate_peaks(spec, [PeakWindow("a", 0, 0.0, 2.0), PeakWindow("b", 0, 1.0, 3.0)])


def test_hand_computed_three_peak_instance():
    table = SpeciesTable.from_dict({"p": [(1.0, 1.0), (2.0, 1.0)], "q": [(3.0, 6.0)]})
    wins = [PeakWindow("p", 0, 0.5, 1.5), PeakWindow("p", 1, 1.5, 2.5), PeakWindow("q", 0, 2.5, 3.5)]
    ints = [PeakIntegral(2.0, 10), PeakIntegral(2.0, 10), PeakIntegral(12.0, 10)]
    res = ft_quantify(ints, wins, table, 0.1)
    np.testing.assert_allclose(res.I, [2.0, 2.0])
    np.testing.assert_allclose(res.C, [0.5, 0.5])
    # worked by hand: E_I^2 = (10 * 0.01 / 4 * 2, 10 * 0.01 / 36) = (1/20, 1/360),
    # sum E_I^2 / (sum I)^2 = (19/360) / 16, E_j = C_j sqrt(E_Ij^2 / I_j^2 + that)
    np.testing.assert_allclose(res.E_I, [np.sqrt(1 / 20), np.sqrt(1 / 360)], rtol=1e-12)
    tail = 19 / 360 / 16
    np.testing.assert_allclose(res.E, [0.5 * np.sqrt(1 / 80 + tail), 0.5 * np.sqrt(1 / 1440 + tail)],
                               rtol=1e-12)
    np.testing.assert_allclose(res.snr_per_peak, [20.0, 20.0, 20.0])
    assert res.snr == pytest.approx(20.0, rel=1e-14)


def test_equal_integrals_and_noise_free_limit():
    table = SpeciesTable.from_dict({"p": [(1.0, 2.0)], "q": [(3.0, 4.0)]})
    wins = [PeakWindow("p", 0, 0.5, 1.5), PeakWindow("q", 0, 2.5, 3.5)]
    res = ft_quantify([PeakIntegral(2.0, 5), PeakIntegral(4.0, 5)], wins, table, 0.0)
    np.testing.assert_allclose(res.C, [0.5, 0.5])
    np.testing.assert_allclose(res.E, [0.0, 0.0])
    with pytest.raises(ValueError):
        ft_quantify([PeakIntegral(-2.0, 5), PeakIntegral(-4.0, 5)], wins, table, 0.1)
    with pytest.raises(ValueError, match="no peak window"):
        ft_quantify([PeakIntegral(2.0, 5)], wins[:1], table, 0.1)


def test_noise_free_recovers_concentration():
    fid = clean(SEPARATED, [0.3, 0.7])
    wins = default_windows(SEPARATED, 5.0)
    res, _ = FtPipeline().run(fid, SEPARATED, wins, sigma_S=1.0)
    np.testing.assert_allclose(res.C, [0.3, 0.7], atol=1e-3)
    assert abs(res.C.sum() - 1) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_linearity(c):
    fid = simulate_fid([0.4, 0.6], NuisanceParams.from_ppm(TABLE.freqs_ppm, ACQ, 0.5, 5e-6, 50),
                       NoiseModel(1e-3), TABLE, ACQ, 4)
    wins = default_windows(TABLE)
    pipe = FtPipeline()
    a, _ = pipe.run(fid, TABLE, wins, 0.5, 5e-6)
    b, _ = pipe.run(fid.scaled(c), TABLE, wins, 0.5, 5e-6)
    np.testing.assert_allclose(b.per_peak_S, c * a.per_peak_S, rtol=1e-9)
    np.testing.assert_allclose(b.C, a.C, rtol=0, atol=1e-12)


def test_zerofill_invariance():
    fid = clean(SEPARATED, [0.3, 0.7])
    wins = default_windows(SEPARATED, 5.0)
    Cs = [FtPipeline(zerofill_to=n).run(fid, SEPARATED, wins, sigma_S=1.0)[0].C
          for n in (8192, 16384, 65536)]
    for C in Cs[1:]:
        np.testing.assert_allclose(C, Cs[0], atol=1e-3)


def test_sigma_S_matches_propagated_noise():
    table = SpeciesTable.from_dict({"x": [(0.0, 1.0)]})
    psi = NuisanceParams.from_ppm([0.0], ACQ)
    v = 0.3
    est = []
    for seed in range(100):
        fid = simulate_fid([0.0], psi, NoiseModel(v), table, ACQ, seed)
        est.append(estimate_sigma_S(preprocess(fid, 1.0, 16384), (-250, -50)))
    assert np.mean(est) == pytest.approx(spectral_noise_sd(fid, 1.0, v), rel=0.10)


def test_sigma_S_edge_cases():
    ax = np.linspace(100, -300, 4001)
    assert estimate_sigma_S(Spectrum(ax, np.full(4001, 2.0)), (-250, -50)) == 0.0
    with pytest.raises(ValueError, match="overlaps"):
        estimate_sigma_S(Spectrum(ax, np.ones(4001)), (-250, -50), [PeakWindow("a", 0, -60, -40)])
    with pytest.raises(ValueError, match="bins"):
        estimate_sigma_S(Spectrum(ax, np.ones(4001)), (-50.0, -49.0))


def test_low_concentration_overestimated_next_to_strong_peak():
    # 5% butanone, SNR about 6: the 29.43 ppm window sits on the tail of the 27.1 ppm line
    from bayesnmr.harness import snr_to_noise_v
    a = np.array([0.05, 0.95])
    psi = NuisanceParams.from_ppm(TABLE.freqs_ppm, ACQ, 0.5, 5e-6, 50.0)
    wins = default_windows(TABLE)
    v = snr_to_noise_v(5.9, a, TABLE, ACQ, psi)
    errs = []
    for seed in range(20):
        fid = simulate_fid(a, psi, NoiseModel(v), TABLE, ACQ, seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res, _ = FtPipeline().run(fid, TABLE, wins, 0.5, 5e-6)
        errs.append(res.C[0] - 0.05)
    assert np.mean(errs) > 0


def test_window_validation():
    with pytest.raises(ValueError):
        PeakWindow("a", 0, 2.0, 1.0)
    with pytest.raises(ValueError):
        Spectrum(np.array([1.0, 2.0, 1.5]), np.zeros(3))
