import dataclasses

import numpy as np
import pytest

import montecarlo
from attack_rates import baseline_no_eve, build_strategy, totals_with_eve
from config import Z_SCORE_LIMIT
from model_core import raw_click_probs
from montecarlo import compare_to_analytic, run_trials, sample_click_frequencies
from optimizer import optimize_mode_b
from shared.models import (
    ChannelEffVector, ConfigurationMismatchError, DomainError, LinkModel,
    Polarization, ReceiverModel, Scenario, TrialConfig,
)
from tests.conftest import make_points

ORACLE_PULSES = 10_000_000


def _assert_agrees(record):
    assert len(record.rows) == 10
    for row in record.rows:
        assert row.z is not None, row.quantity
        assert abs(row.z) <= Z_SCORE_LIMIT, row.quantity


def test_click_frequencies_match_analytic():
    receiver = ReceiverModel(c=(0.0,) * 4)
    eff = ChannelEffVector.uniform(0.2)
    freqs, stderr = sample_click_frequencies(1.0, Polarization.H, eff, receiver, 0.9904, 200_000, seed=3)
    expected = raw_click_probs(1.0, Polarization.H, eff, receiver, 0.9904)
    assert expected[0] == pytest.approx(0.0943, abs=1e-4)
    assert np.all(np.abs(freqs - expected) < Z_SCORE_LIMIT * stderr + 1e-12)


def test_click_frequencies_vacuum_without_background():
    receiver = ReceiverModel(c=(0.0,) * 4)
    freqs, stderr = sample_click_frequencies(
        0.0, Polarization.D, ChannelEffVector.uniform(0.4), receiver, 0.98, 1000, seed=1,
    )
    assert np.all(freqs == 0.0)
    assert np.all(stderr == 0.0)


def test_click_frequencies_reject_empty_sample(receiver):
    with pytest.raises(DomainError):
        sample_click_frequencies(1.0, Polarization.H, ChannelEffVector.uniform(0.4), receiver, 0.98, 0, seed=1)


def test_silent_eve_gives_no_sifted_bits(eve, link_3db):
    dark = ReceiverModel(c=(0.0,) * 4)
    strategy = build_strategy(make_points(1.0, 0.1, 0.01), (0.0,) * 4, eve)
    stats = run_trials(TrialConfig(50_000, 2, Scenario.FAKED_STATE_ATTACK, link_3db, dark, strategy))
    assert stats.sifted == 0
    assert stats.errors == 0
    assert stats.qber == 0.0
    assert sum(stats.sent) == 50_000


def test_run_trials_is_deterministic(link_3db, receiver):
    config = TrialConfig(120_000, 9, Scenario.BASELINE_NO_EVE, link_3db, receiver)
    assert run_trials(config) == run_trials(config)
    other = TrialConfig(120_000, 10, Scenario.BASELINE_NO_EVE, link_3db, receiver)
    assert run_trials(other) != run_trials(config)


def test_run_trials_spans_several_chunks(link_3db, receiver, monkeypatch):
    monkeypatch.setattr(montecarlo, "MC_CHUNK_PULSES", 7_000)
    stats = run_trials(TrialConfig(20_001, 4, Scenario.BASELINE_NO_EVE, link_3db, receiver))
    assert sum(stats.sent) == 20_001
    assert stats.errors <= stats.sifted <= stats.n_pulses


def test_attack_scenario_requires_strategy(link_3db):
    with pytest.raises(DomainError):
        TrialConfig(10, 1, Scenario.FAKED_STATE_ATTACK, link_3db)


@pytest.mark.parametrize("loss", [3.0, 9.0, 15.0])
def test_baseline_agrees_with_analytic(loss, receiver):
    link = LinkModel(loss)
    stats = run_trials(TrialConfig(ORACLE_PULSES, 1, Scenario.BASELINE_NO_EVE, link, receiver))
    _assert_agrees(compare_to_analytic(stats, baseline_no_eve(link, receiver)))


def test_attack_agrees_with_analytic(paper_search, receiver, eve, optimizer_config):
    link = LinkModel(6.0)
    solution = optimize_mode_b(paper_search.best, link, receiver, eve, optimizer_config)
    assert solution.converged
    strategy = build_strategy(paper_search.best, solution.mu, eve, link.fidelity_eb)
    stats = run_trials(TrialConfig(ORACLE_PULSES, 1, Scenario.FAKED_STATE_ATTACK, link, receiver, strategy))
    _assert_agrees(compare_to_analytic(stats, totals_with_eve(strategy, link, receiver)))


def test_wrong_analytic_errors_are_detected(receiver, link_3db):
    exact = baseline_no_eve(link_3db, receiver)
    # та же модель, но ошибки завышены вдвое
    inflated = dataclasses.replace(exact, errors=tuple(2 * e for e in exact.errors), qber=2 * exact.qber)
    stats = run_trials(TrialConfig(1_000_000, 23, Scenario.BASELINE_NO_EVE, link_3db, receiver))
    record = compare_to_analytic(stats, inflated)
    assert not record.passed
    failed = {row.quantity for row in record.failures()}
    assert "QBER" in failed and "E(H)" in failed


def test_mismatched_link_is_configuration_error(receiver):
    analytic = baseline_no_eve(LinkModel(3.0, fidelity_ab=0.9831), receiver)
    stats = run_trials(TrialConfig(1000, 23, Scenario.BASELINE_NO_EVE, LinkModel(3.0, fidelity_ab=0.95), receiver))
    with pytest.raises(ConfigurationMismatchError):
        compare_to_analytic(stats, analytic)


def test_mismatched_receiver_is_configuration_error(link_3db, receiver):
    analytic = baseline_no_eve(link_3db, ReceiverModel(c=(0.0,) * 4))
    stats = run_trials(TrialConfig(1000, 23, Scenario.BASELINE_NO_EVE, link_3db, receiver))
    with pytest.raises(ConfigurationMismatchError):
        compare_to_analytic(stats, analytic)


def test_mismatched_strategy_is_configuration_error(link_3db, receiver, eve):
    points = make_points(1.0, 0.1, 0.01)
    simulated = build_strategy(points, (1.0,) * 4, eve)
    analysed = build_strategy(points, (1.0, 1.0, 1.0, 1.5), eve)
    stats = run_trials(TrialConfig(1000, 23, Scenario.FAKED_STATE_ATTACK, link_3db, receiver, simulated))
    assert compare_to_analytic(stats, totals_with_eve(simulated, link_3db, receiver)).rows
    with pytest.raises(ConfigurationMismatchError):
        compare_to_analytic(stats, totals_with_eve(analysed, link_3db, receiver))


def test_tiny_sample_is_insufficient_data(receiver):
    link = LinkModel(30.0)
    stats = run_trials(TrialConfig(10, 1, Scenario.BASELINE_NO_EVE, link, receiver))
    record = compare_to_analytic(stats, baseline_no_eve(link, receiver))
    assert stats.sifted == 0
    assert all(row.z is None for row in record.rows)
    assert record.passed


def test_scenario_mismatch_raises(link_3db, receiver, eve):
    stats = run_trials(TrialConfig(1000, 1, Scenario.BASELINE_NO_EVE, link_3db, receiver))
    strategy = build_strategy(make_points(1.0, 0.1, 0.01), (1.0,) * 4, eve)
    with pytest.raises(ConfigurationMismatchError):
        compare_to_analytic(stats, totals_with_eve(strategy, link_3db, receiver))
