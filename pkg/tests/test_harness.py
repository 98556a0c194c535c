import json

import numpy as np
import pytest

from bayesnmr import harness, io
from bayesnmr.ft import FtPipeline, default_windows
from bayesnmr.harness import (SweepConfig, cell_seed, count_local_maxima, likelihood_scan,
                              measured_snr, parse_grid, peak_signals, run_sweep, snr_to_noise_v,
                              write_sweep)
from bayesnmr.inference import EvidenceObjective, vague_gamma
from bayesnmr.model import AcquisitionConfig, NoiseModel, NuisanceParams, ppm_to_rad_s, simulate_fid

TABLE = io.read_species()
ACQ = AcquisitionConfig()
TRUTH = NuisanceParams.from_ppm(TABLE.freqs_ppm, ACQ, 0.5, 5e-6, 50.0)
MIX = np.array([0.3, 0.7])


def test_doubling_snr_quarters_variance():
    for conv in ("height", "integral"):
        v1 = snr_to_noise_v(4.0, MIX, TABLE, ACQ, TRUTH, convention=conv)
        v2 = snr_to_noise_v(8.0, MIX, TABLE, ACQ, TRUTH, convention=conv)
        assert v2 == pytest.approx(v1 / 4, rel=1e-12)


def test_snr_round_trip():
    v = snr_to_noise_v(9.3, MIX, TABLE, ACQ, TRUTH)
    wins = default_windows(TABLE, 0.5, TRUTH.freqs_ppm(ACQ))
    got = [measured_snr(simulate_fid(MIX, TRUTH, NoiseModel(v), TABLE, ACQ, s), TABLE, wins,
                        0.5, 5e-6).min() for s in range(20)]
    assert np.mean(got) == pytest.approx(9.3, rel=0.15)


def test_butanone_to_cyclohexane_snr_ratio():
    # weakest butanone peak at SNR 26 puts cyclohexane near 381 with raw (un-normalized) signals
    wins = default_windows(TABLE, 0.5, TRUTH.freqs_ppm(ACQ))
    clean = simulate_fid(MIX, TRUTH, None, TABLE, ACQ, 0)
    sig = peak_signals(clean, TABLE, wins, 0.5, 5e-6, normalized=False)
    assert sig[4] / sig[:4].min() == pytest.approx(381 / 26, rel=0.20)


def test_snr_validation():
    with pytest.raises(ValueError):
        snr_to_noise_v(0.0, MIX, TABLE, ACQ, TRUTH)
    with pytest.raises(ValueError):
        peak_signals(simulate_fid(MIX, TRUTH, None, TABLE, ACQ, 0), TABLE, default_windows(TABLE),
                     0.5, 5e-6, convention="area")


@pytest.fixture(scope="module")
def fid26():
    v = snr_to_noise_v(26.0, MIX, TABLE, ACQ, TRUTH)
    return simulate_fid(MIX, TRUTH, NoiseModel(v), TABLE, ACQ, 7), v


def test_scan_single_point_equals_direct_evaluation(fid26):
    fid, v = fid26
    gamma = vague_gamma(fid, TRUTH, TABLE)
    rows = likelihood_scan(fid, TABLE, TRUTH, v, "theta", [0.5], gamma)
    assert rows == [(0.5, EvidenceObjective(fid, TABLE, gamma)(TRUTH, v))]


def test_scan_maximum_at_generating_frequency(fid26):
    fid, v = fid26
    w0 = TRUTH.freqs_rad_s[0]
    grid = w0 + ppm_to_rad_s(np.linspace(-1, 1, 401), ACQ)
    rows = likelihood_scan(fid, TABLE, TRUTH, v, "freq[0]", grid)
    best = grid[int(np.argmax([r[1] for r in rows]))]
    assert abs(best - w0) <= ppm_to_rad_s(0.01, ACQ)
    named = likelihood_scan(fid, TABLE, TRUTH, v, "freq:butanone[0]", grid[:3])
    assert named == rows[:3]


def test_noise_variance_scan_is_unimodal(fid26):
    fid, v = fid26
    rows = likelihood_scan(fid, TABLE, TRUTH, v, "v", np.logspace(-4, 4, 161) * v)
    ll = np.array([r[1] for r in rows])
    slope_sign = np.sign(np.diff(ll))
    assert np.count_nonzero(np.diff(slope_sign)) == 1
    assert count_local_maxima(ll) == 1
    assert rows[int(np.argmax(ll))][0] == pytest.approx(v, rel=0.15)


def test_frequency_surface_grows_more_multimodal_at_low_snr():
    grid = TRUTH.freqs_rad_s[0] + ppm_to_rad_s(np.linspace(-3, 3, 601), ACQ)
    counts = {}
    for snr in (5.9, 2.1):
        v = snr_to_noise_v(snr, MIX, TABLE, ACQ, TRUTH)
        total = 0
        for seed in range(3):
            fid = simulate_fid(MIX, TRUTH, NoiseModel(v), TABLE, ACQ, seed)
            total += count_local_maxima([r[1] for r in likelihood_scan(
                fid, TABLE, TRUTH, v, "freq[0]", grid)])
        counts[snr] = total
    assert counts[2.1] > counts[5.9]


def test_scan_rejects_bad_dimension(fid26):
    fid, v = fid26
    for dim in ("phase", "freq[9]", "freq:water[0]"):
        with pytest.raises(ValueError):
            likelihood_scan(fid, TABLE, TRUTH, v, dim, [0.0])


def test_count_local_maxima():
    assert count_local_maxima([0, 1, 0, 2, 0]) == 2
    assert count_local_maxima([0, 1, 1, 0]) == 1
    assert count_local_maxima([1, 2, 3]) == 0


def test_parse_grid():
    np.testing.assert_allclose(parse_grid("0:1:5"), [0, 0.25, 0.5, 0.75, 1])
    np.testing.assert_array_equal(parse_grid("2:9:1"), [2.0])
    for bad in ("1:2", "a:b:c", "0:1:0"):
        with pytest.raises(ValueError):
            parse_grid(bad)


def test_cell_seeds_distinct():
    seeds = {cell_seed(0, k, r, *x) for k in range(3) for r in range(30) for x in ((), (1,))}
    assert len(seeds) == 180


def test_truth_shared_across_snr_levels():
    cfg = SweepConfig(snr_targets=(9.3, 2.1), repetitions=3)
    a = harness.draw_truth(cfg, TABLE, 1)
    assert np.array_equal(a.freqs_rad_s, harness.draw_truth(cfg, TABLE, 1).freqs_rad_s)
    jitter = a.freqs_ppm(ACQ) - TABLE.freqs_ppm
    assert np.all(np.abs(jitter) <= 3.0)


def test_config_validation_and_round_trip():
    cfg = SweepConfig(snr_targets=(4.2,), repetitions=2, ft=FtPipeline(zerofill_to=8192))
    back = SweepConfig.from_dict(json.loads(io.dumps(cfg.to_dict())))
    assert back == cfg
    for bad in [dict(mixture=(("butanone", 0.5), ("cyclohexane", 0.6))), dict(repetitions=0),
                dict(which="neither"), dict(snr_convention="peak"), dict(snr_targets=(0.0,))]:
        with pytest.raises(ValueError):
            SweepConfig(**bad)
    with pytest.raises(ValueError, match="not in species table"):
        SweepConfig(mixture=(("water", 1.0),)).amplitudes(TABLE)


def test_sweep_pipelines_share_identical_fid(monkeypatch):
    seen = {"bayes": [], "ft": []}
    real_fit, real_run = harness.fit, FtPipeline.run

    def spy_fit(fid, *a, **k):
        seen["bayes"].append(fid)
        return real_fit(fid, *a, **k)

    def spy_run(self, fid, *a, **k):
        seen["ft"].append(fid)
        return real_run(self, fid, *a, **k)

    monkeypatch.setattr(harness, "fit", spy_fit)
    monkeypatch.setattr(FtPipeline, "run", spy_run)
    run_sweep(SweepConfig(snr_targets=(9.3,), repetitions=1, samples=500))
    (fb,), (ff,) = seen["bayes"], seen["ft"]
    assert np.array_equal(fb.y1, ff.y1) and np.array_equal(fb.y2, ff.y2)


def test_failed_cells_are_recorded_not_fatal(monkeypatch):
    calls = {"n": 0}
    real_fit = harness.fit

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("boom")
        return real_fit(*a, **k)

    monkeypatch.setattr(harness, "fit", flaky)
    res = run_sweep(SweepConfig(snr_targets=(9.3,), repetitions=2, samples=500, which="bayes"))
    assert [c.error for c in res.cells] == ["RuntimeError: boom", None]
    assert res.summary(9.3)["n_failed"] == 1

    monkeypatch.setattr(harness, "fit", lambda *a, **k: (_ for _ in ()).throw(RuntimeError("x")))
    with pytest.raises(RuntimeError, match="sweep runs failed"):
        run_sweep(SweepConfig(snr_targets=(9.3,), repetitions=2, which="bayes"))


def test_sweep_output_is_byte_identical(tmp_path):
    cfg = SweepConfig(snr_targets=(5.9,), repetitions=1, seed=3, samples=1000)
    for d in ("a", "b"):
        write_sweep(run_sweep(cfg), tmp_path / d)
    for name in ("table2.csv", "fig_compare.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert not (tmp_path / "a" / "timing.csv").exists()
    head = (tmp_path / "a" / "table2.csv").read_text().splitlines()[0]
    assert head.split(",") == harness.TABLE2_COLUMNS
