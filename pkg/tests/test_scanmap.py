import math

import numpy as np
import pytest

from scanmap import (
    PRESETS, find_attack_points, get_preset, mismatch_ratios, normalize_scan,
    pinhole_filter, pinhole_window, simulate_raw_scan, synthesize_scan,
)
from shared.models import (
    POLARIZATIONS, DomainError, EfficiencyMap, Polarization, RawScan, ScanGrid,
    SearchThresholds,
)
from shared.utils import fov_from_pinhole

GRID_3x3 = ScanGrid(-1.0, 1.0, -1.0, 1.0, 3, 3)


def _map_with_cell(cell, i_phi=1, i_theta=1, background=1.0):
    eta = np.full((4, 3, 3), background)
    eta[:, i_phi, i_theta] = cell
    return EfficiencyMap(GRID_3x3, eta)


# === normalize_scan ===

def test_normalize_scan_subtracts_background():
    grid = ScanGrid(0.0, 1.0, 0.0, 1.0, 2, 2)
    counts = np.zeros((4, 2, 2))
    counts[0] = [[100, 300], [500, 50]]
    raw = RawScan(grid, counts, (50.0, 0.0, 0.0, 0.0))
    emap = normalize_scan(raw)
    assert emap.eta[0].ravel() == pytest.approx([50 / 450, 250 / 450, 1.0, 0.0])


def test_normalize_scan_background_only_channel_is_zero():
    grid = ScanGrid(0.0, 1.0, 0.0, 1.0, 2, 2)
    counts = np.full((4, 2, 2), 20.0)
    emap = normalize_scan(RawScan(grid, counts, (20.0, 20.0, 30.0, 20.0)))
    assert np.all(emap.eta == 0.0)


def test_normalize_scan_background_free():
    grid = ScanGrid(0.0, 1.0, 0.0, 1.0, 2, 2)
    counts = np.arange(16, dtype=float).reshape(4, 2, 2) + 1.0
    emap = normalize_scan(RawScan(grid, counts, (0.0,) * 4))
    expected = counts / counts.reshape(4, -1).max(axis=1)[:, None, None]
    assert emap.eta == pytest.approx(expected)


def test_normalize_scan_is_idempotent(paper_map):
    raw = RawScan(paper_map.grid, paper_map.eta, (0.0,) * 4)
    assert np.array_equal(normalize_scan(raw).eta, paper_map.eta)


def test_raw_scan_rejects_empty_grid():
    with pytest.raises(DomainError):
        ScanGrid(0.0, 1.0, 0.0, 1.0, 1, 5)


def test_simulated_raw_scan_roundtrip(paper_map):
    raw = simulate_raw_scan(paper_map, seed=5)
    emap = normalize_scan(raw)
    assert emap.eta.shape == paper_map.eta.shape
    # Пуассоновский шум при 2e5 отсчётов/с в пике
    assert np.max(np.abs(emap.eta - paper_map.eta)) < 0.03
    assert np.array_equal(raw.counts, simulate_raw_scan(paper_map, seed=5).counts)


# === synthesize_scan ===

def test_synthesize_scan_is_deterministic():
    a = synthesize_scan("paper-like", 1)
    b = synthesize_scan("paper-like", 1)
    assert np.array_equal(a.eta, b.eta)
    assert not np.array_equal(a.eta, synthesize_scan("paper-like", 2).eta)


def test_synthesize_scan_normalized(paper_map):
    assert paper_map.grid.shape == (97, 97)
    assert paper_map.eta.max(axis=(1, 2)) == pytest.approx(np.ones(4))
    assert paper_map.eta.min() >= 0.0


def test_synthesize_scan_unknown_preset():
    with pytest.raises(DomainError):
        synthesize_scan("no-such-preset", 1)
    with pytest.raises(DomainError):
        get_preset("fig-2")


def test_paper_like_meets_paper_thresholds(paper_search):
    limits = SearchThresholds.paper()
    assert paper_search.is_complete
    for pol in POLARIZATIONS:
        best = paper_search.best[pol]
        assert best.eta_target >= limits.eta_min(pol)
        assert best.delta >= limits.delta_min(pol)


def test_zero_feature_has_no_attack_points():
    emap = synthesize_scan("zero-feature", 1)
    result = find_attack_points(emap, SearchThresholds.uniform(0.0, 4.0))
    assert result.is_empty
    assert result.summary_lines() == ["no attack points"]


# === find_attack_points ===

def test_single_cell_selected_for_h():
    emap = _map_with_cell([0.3, 0.29, 0.003, 0.003])
    result = find_attack_points(emap, SearchThresholds.paper())
    best = result.best[Polarization.H]
    assert (best.i_phi, best.i_theta) == (1, 1)
    assert best.delta == pytest.approx(100.0)
    assert result.count(Polarization.H) == 1


def test_delta_is_min_over_noncompatible_pair():
    eta = np.array([0.2, 0.0, 0.0025, 0.0026]).reshape(4, 1, 1)
    assert mismatch_ratios(eta)[0, 0, 0] == pytest.approx(76.92, abs=0.01)


def test_delta_conventions():
    eta = np.array([0.5, 0.0, 0.0, 0.0]).reshape(4, 1, 1)
    deltas = mismatch_ratios(eta)
    assert math.isinf(deltas[0, 0, 0])
    assert deltas[1, 0, 0] == 0.0  # eta_v = 0
    assert deltas[2, 0, 0] == 0.0


def test_uniform_map_has_unit_delta():
    emap = EfficiencyMap(GRID_3x3, np.full((4, 3, 3), 0.7))
    assert np.all(mismatch_ratios(emap.eta) == 1.0)
    assert find_attack_points(emap, SearchThresholds.uniform(0.0, 1.5)).is_empty


def test_ranking_prefers_eta_then_delta_then_row_major():
    eta = np.full((4, 3, 3), 1.0)
    eta[:, 0, 0] = [0.5, 0.0, 0.001, 0.001]   # delta 500
    eta[:, 0, 2] = [0.5, 0.0, 0.0, 0.0]       # delta inf
    eta[:, 2, 0] = [0.5, 0.0, 0.0, 0.0]       # delta inf, позже в порядке строк
    eta[:, 1, 1] = [0.6, 0.0, 0.005, 0.005]   # delta 120, eta больше
    result = find_attack_points(EfficiencyMap(GRID_3x3, eta), SearchThresholds.uniform(0.1, 50.0))
    order = [(p.i_phi, p.i_theta) for p in result.qualifying(Polarization.H)]
    assert order == [(1, 1), (0, 2), (2, 0), (0, 0)]


def test_search_invariant_under_uniform_rescaling(paper_map, paper_search):
    scaled = EfficiencyMap(paper_map.grid, paper_map.eta * 0.37)
    result = find_attack_points(scaled, SearchThresholds.paper())
    for pol in POLARIZATIONS:
        assert result.count(pol) == paper_search.count(pol)
        assert result.best[pol].i_phi == paper_search.best[pol].i_phi
        assert result.best[pol].i_theta == paper_search.best[pol].i_theta


def test_mismatch_ratios_invariant_on_random_maps():
    rng = np.random.default_rng(11)
    # тысяча карт 6x6 в одном массиве, часть каналов погашена
    eta = rng.random((4, 1000, 6, 6))
    eta[rng.random(eta.shape) < 0.05] = 0.0
    scales = rng.uniform(1e-3, 1e3, size=(1, 1000, 1, 1))
    base = mismatch_ratios(eta)
    scaled = mismatch_ratios(eta * scales)
    assert np.isinf(base).any() and (base == 0.0).any()
    np.testing.assert_allclose(scaled, base, rtol=1e-12, atol=0.0)


def test_dark_channel_reported_without_points():
    eta = np.full((4, 3, 3), 0.5)
    eta[1] = 0.0
    eta[0, 1, 1] = 1.0
    eta[2:, 1, 1] = 0.001
    result = find_attack_points(EfficiencyMap(GRID_3x3, eta), SearchThresholds.uniform(0.001, 4.0))
    assert result.count(Polarization.V) == 0
    assert "V: no qualifying points" in result.summary_lines()


# === pinhole_filter ===

def test_pinhole_center_unchanged():
    emap = _map_with_cell([1.0, 1.0, 1.0, 1.0], background=0.5)
    filtered = pinhole_filter(emap, 100.0, 10.0)
    assert filtered.eta[:, 1, 1] == pytest.approx(np.ones(4))


def test_pinhole_attenuates_far_cells():
    grid = ScanGrid(-0.5, 0.5, -0.5, 0.5, 3, 3)
    emap = EfficiencyMap(grid, np.ones((4, 3, 3)))
    filtered = pinhole_filter(emap, 100.0, 10.0)
    # (0.5, 0) мрад: 450 мкрад за краем окна
    assert filtered.eta[0, 2, 1] < 1e-9


def test_pinhole_whole_range_is_identity(paper_map):
    # скан +-1.8384 мрад, поле зрения 3.68 мрад перекрывает его по обеим осям
    filtered = pinhole_filter(paper_map, 3680.0)
    assert np.array_equal(filtered.eta, paper_map.eta)
    assert np.array_equal(pinhole_filter(paper_map, math.inf).eta, paper_map.eta)
    for limits in (SearchThresholds.tight(), SearchThresholds.paper()):
        before = find_attack_points(paper_map, limits)
        after = find_attack_points(filtered, limits)
        assert [after.count(p) for p in POLARIZATIONS] == [before.count(p) for p in POLARIZATIONS]
        assert after.best == before.best


def test_pinhole_narrower_than_range_cuts_corners(paper_map):
    window = pinhole_window(paper_map, 3600.0)
    assert window[48, 48] == 1.0
    assert window[0, 0] < 1e-9


def test_pinhole_removes_mismatch(paper_map):
    unfiltered = find_attack_points(paper_map, SearchThresholds.tight())
    assert not unfiltered.is_empty
    filtered = pinhole_filter(paper_map, fov_from_pinhole(25.0))
    assert find_attack_points(filtered, SearchThresholds.tight()).is_empty


def test_pinhole_never_adds_cells(paper_map):
    limits = SearchThresholds.uniform(0.001, 4.0)
    before = find_attack_points(paper_map, limits)
    after = find_attack_points(pinhole_filter(paper_map, 100.0), limits)
    for pol in POLARIZATIONS:
        assert after.count(pol) <= before.count(pol)


def test_pinhole_rejects_bad_fov(paper_map):
    with pytest.raises(DomainError):
        pinhole_filter(paper_map, 0.0)


def test_fov_from_pinhole():
    assert fov_from_pinhole(25.0) == pytest.approx(100.0)
    assert fov_from_pinhole(100.0, 250.0) == pytest.approx(400.0)


def test_presets_registered():
    assert set(PRESETS) == {"paper-like", "zero-feature"}
