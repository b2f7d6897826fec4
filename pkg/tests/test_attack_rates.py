import numpy as np
import pytest

from attack_rates import (
    attack_rate_vectors, baseline_conditional_rates, baseline_no_eve, build_strategy,
    conditional_error_with_eve, conditional_rate_with_eve, report_from_vectors,
    strategy_efficiencies, totals_with_eve,
)
from model_core import click_matrix, eve_measurement_probs, squashed_basis_prob, squashed_value_prob
from shared.models import (
    POLARIZATIONS, Basis, DomainError, EveMeasurementProbs,
    LinkModel, Polarization, ReceiverModel, Scenario,
)
from tests.conftest import make_points

DARK = ReceiverModel(c=(0.0, 0.0, 0.0, 0.0))


def test_vacuum_strategy_gives_nothing(eve, link_3db):
    strategy = build_strategy(make_points(1.0, 0.1, 0.01), (0.0,) * 4, eve)
    assert conditional_rate_with_eve(Polarization.H, strategy, link_3db, DARK) == 0.0
    assert conditional_error_with_eve(Polarization.H, strategy, link_3db, DARK) == 0.0
    report = totals_with_eve(strategy, link_3db, DARK)
    assert report.rate == 0.0
    assert report.qber == 0.0


def test_single_term_survives_when_eve_always_correct():
    eff = strategy_efficiencies(make_points(1.0, 0.2, 0.05), ReceiverModel())
    mu = np.array([2.0, 2.0, 2.0, 2.0])
    forced = EveMeasurementProbs(1.0, 0.0, 0.0)
    rates, _ = attack_rate_vectors(mu, eff, DARK.background, 0.99, forced)
    p = click_matrix(mu, eff, DARK.background, 0.99)
    assert rates[0] == pytest.approx(squashed_basis_prob(p[0], Basis.HV))


def test_perfect_mismatch_has_no_errors(eve):
    link = LinkModel(3.0, fidelity_ab=1.0, fidelity_eb=1.0)
    strategy = build_strategy(make_points(1.0, 0.0, 0.0), (3.0,) * 4, eve, fidelity_eb=1.0)
    for pol in POLARIZATIONS:
        assert conditional_error_with_eve(pol, strategy, link, DARK) == 0.0
        assert conditional_rate_with_eve(pol, strategy, link, DARK) > 0.0
    assert totals_with_eve(strategy, link, DARK).qber == 0.0


def test_zero_mu_leaves_only_background(eve, receiver):
    link = LinkModel(6.0, fidelity_ab=0.98, fidelity_eb=1.0)
    strategy = build_strategy(make_points(1.0, 0.0, 0.0), (0.0,) * 4, eve, fidelity_eb=1.0)
    report = totals_with_eve(strategy, link, receiver)
    probs = eve_measurement_probs(link.mu_alice, link.fidelity_ab, eve)
    c = receiver.background
    p0 = probs.p_no_single
    for pol in POLARIZATIONS:
        conj = pol.conjugate()
        expected = (1 - p0) * squashed_value_prob(c, conj) + p0 * (
            c[conj.index] - c[conj.index] * c[pol.index] / 2
        )
        assert report.errors[pol.index] == pytest.approx(expected, rel=1e-9)


def test_symmetric_strategy_gives_equal_rates(eve):
    receiver = ReceiverModel(c=(1e-6,) * 4)
    strategy = build_strategy(make_points(0.8, 0.01, 0.004), (5.0,) * 4, eve)
    report = totals_with_eve(strategy, LinkModel(6.0), receiver)
    assert list(report.rates) == pytest.approx([report.rates[0]] * 4, rel=1e-12)
    assert report.rate == pytest.approx(report.rates[0], rel=1e-12)


def test_errors_bounded_by_rates(paper_search, eve, receiver):
    rng = np.random.default_rng(11)
    for _ in range(20):
        mu = tuple(10 ** rng.uniform(-3, 3, 4))
        strategy = build_strategy(paper_search.best, mu, eve)
        report = totals_with_eve(strategy, LinkModel(float(rng.uniform(0, 20))), receiver)
        for r, e in zip(report.rates, report.errors):
            assert 0.0 <= e <= r <= 1.0
        assert 0.0 <= report.qber <= 1.0


def test_report_from_vectors_zero_rate():
    report = report_from_vectors(np.zeros(4), np.zeros(4), Scenario.FAKED_STATE_ATTACK)
    assert report.rate == 0.0 and report.qber == 0.0


def test_strategy_efficiencies_scales_by_eta_det(paper_search):
    points = [paper_search.best[p] for p in POLARIZATIONS]
    eff = strategy_efficiencies(points, ReceiverModel(eta_det=0.4))
    assert eff[0, 0] == pytest.approx(0.4 * points[0].efficiencies.eta_h)
    assert eff.shape == (4, 4)


def test_build_strategy_requires_all_polarizations(paper_search, eve):
    best = dict(paper_search.best)
    best[Polarization.V] = None
    with pytest.raises(DomainError):
        build_strategy(best, (1.0,) * 4, eve)


# === Базовая линия без Евы ===

def test_baseline_low_loss_qber_is_fidelity_limited():
    receiver = ReceiverModel(c=(0.0,) * 4)
    report = baseline_no_eve(LinkModel(20.0, fidelity_ab=0.9831), receiver)
    assert report.qber == pytest.approx(1 - 0.9831, rel=1e-3)
    assert report.scenario is Scenario.BASELINE_NO_EVE


@pytest.mark.parametrize("loss", [0.0, 1.0, 3.0])
def test_baseline_small_loss_approaches_fidelity_limit(loss):
    receiver = ReceiverModel(c=(0.0,) * 4)
    report = baseline_no_eve(LinkModel(loss, fidelity_ab=0.9831), receiver)
    # +-0.05 процентного пункта
    assert abs(report.qber - (1 - 0.9831)) <= 5e-4


def test_baseline_perfect_fidelity_no_background_has_no_errors():
    receiver = ReceiverModel(c=(0.0,) * 4)
    for loss in (0.0, 3.0, 15.0, 30.0):
        assert baseline_no_eve(LinkModel(loss, fidelity_ab=1.0), receiver).qber == 0.0


def test_baseline_qber_increases_with_loss(receiver):
    # ниже ~4 дБ многофотонные двойные щелчки дают провал порядка 1e-5
    qbers = [baseline_no_eve(LinkModel(float(loss)), receiver).qber for loss in range(6, 41)]
    assert all(b > a for a, b in zip(qbers, qbers[1:]))
    assert qbers[-1] > 0.05  # фон доминирует


def test_baseline_low_loss_dip_is_negligible(receiver):
    qbers = [baseline_no_eve(LinkModel(float(loss)), receiver).qber for loss in range(0, 7)]
    assert max(qbers) - min(qbers) < 1e-4


def test_baseline_conditional_rates_match_totals(receiver, link_3db):
    rates, errors = baseline_conditional_rates(link_3db, receiver)
    report = baseline_no_eve(link_3db, receiver)
    assert report.rate == pytest.approx(rates.mean())
    assert np.all(errors <= rates)
