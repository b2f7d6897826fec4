# attack_rates.py
# Скорости просеянного ключа и ошибки: с Евой (faked-state) и без неё.
import logging
from typing import Mapping, Sequence, Tuple, Union

import numpy as np

from config import DEFAULT_FIDELITY_EB, DEFAULT_MU_MAX
from model_core import click_matrix, eve_measurement_probs, squash_tables
from shared.models import (
    POLARIZATIONS, AttackPoint, DomainError, EveDetectorModel, EveMeasurementProbs,
    EveStrategy, LinkModel, Polarization, RateReport, ReceiverModel, Scenario,
)
from shared.utils import model_fingerprint

logger = logging.getLogger(__name__)

# Индексы для векторной записи формул: для посылки Алисы j
_OWN = np.arange(4)
_BASIS = np.array([0, 0, 1, 1])
_CONJ = np.array([1, 0, 3, 2])
_OTHER0 = np.array([2, 2, 0, 0])
_OTHER1 = np.array([3, 3, 1, 1])


def build_strategy(
    points: Union[Mapping[Polarization, AttackPoint], Sequence[AttackPoint]],
    mu: Sequence[float],
    eve: EveDetectorModel,
    fidelity_eb: float = DEFAULT_FIDELITY_EB,
    mu_max: float = DEFAULT_MU_MAX,
) -> EveStrategy:
    """Собирает стратегию Евы из лучших точек атаки и вектора mu (H, V, D, A)."""
    if isinstance(points, Mapping):
        missing = [p.value for p in POLARIZATIONS if points.get(p) is None]
        if missing:
            raise DomainError(f"нет точек атаки для поляризаций: {', '.join(missing)}")
        ordered = tuple(points[p] for p in POLARIZATIONS)
    else:
        ordered = tuple(points)
    return EveStrategy(
        mu=tuple(float(m) for m in mu),
        attack_points=ordered,
        eve=eve,
        fidelity_eb=fidelity_eb,
        mu_max=mu_max,
    )


def strategy_efficiencies(points: Sequence[AttackPoint], receiver: ReceiverModel) -> np.ndarray:
    """
    Абсолютные эффективности eff[k, i] = eta_det * (нормированная карта).

    Строка k — поляризация, которую Ева пересылает под своим углом атаки.
    """
    return receiver.eta_det * np.array([p.efficiencies.as_array() for p in points])


def _background_terms(background: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    c = np.asarray(background, dtype=float)
    c0, c1 = c[_BASIS * 2], c[_BASIS * 2 + 1]
    rate_bg = c0 + c1 - c0 * c1
    error_bg = c[_CONJ] - c[_CONJ] * c / 2.0
    return rate_bg, error_bg


def attack_rate_vectors(
    mu: np.ndarray,
    eff: np.ndarray,
    background: np.ndarray,
    fidelity_eb: float,
    eve_probs: EveMeasurementProbs,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Условные скорости R_e(j) и ошибки E_j для всех посылок Алисы.

    Это ядро, которое вызывает оптимизатор; формулы повторяют опубликованные
    без поправок (1 - c_d)(1 - c_a) в фоновом члене.
    """
    p = click_matrix(mu, eff, background, fidelity_eb)
    basis_probs, value_probs = squash_tables(p)
    pc = eve_probs.p_compatible_correct
    pw = eve_probs.p_compatible_wrong
    pnc = eve_probs.p_noncompatible_single
    p0 = eve_probs.p_no_single
    rate_bg, error_bg = _background_terms(background)

    rates = (
        pc * basis_probs[_OWN, _BASIS]
        + pw * basis_probs[_CONJ, _BASIS]
        + pnc * (basis_probs[_OTHER0, _BASIS] + basis_probs[_OTHER1, _BASIS])
        + p0 * rate_bg
    )
    errors = (
        pc * value_probs[_OWN, _CONJ]
        + pw * value_probs[_CONJ, _CONJ]
        + pnc * (value_probs[_OTHER0, _CONJ] + value_probs[_OTHER1, _CONJ])
        + p0 * error_bg
    )
    rates = np.clip(rates, 0.0, 1.0)
    return rates, np.clip(np.minimum(errors, rates), 0.0, None)


def report_from_vectors(
    rates: np.ndarray, errors: np.ndarray, scenario: Scenario, fingerprint: str = ""
) -> RateReport:
    """R = (1/4) sum R(j), QBER = sum E_j / (4 R); QBER = 0 при R = 0."""
    total = float(np.mean(rates))
    qber = float(np.sum(errors) / (4.0 * total)) if total > 0 else 0.0
    return RateReport(
        rates=tuple(float(r) for r in rates),
        errors=tuple(float(e) for e in errors),
        rate=total,
        qber=qber,
        scenario=scenario,
        fingerprint=fingerprint,
    )


def _strategy_vectors(strategy: EveStrategy, link: LinkModel, receiver: ReceiverModel):
    eve_probs = eve_measurement_probs(link.mu_alice, link.fidelity_ab, strategy.eve)
    eff = strategy_efficiencies(strategy.attack_points, receiver)
    return attack_rate_vectors(
        np.asarray(strategy.mu), eff, receiver.background, strategy.fidelity_eb, eve_probs
    )


def conditional_rate_with_eve(
    alice_sent: Polarization, strategy: EveStrategy, link: LinkModel, receiver: ReceiverModel
) -> float:
    """Скорость просеянного ключа при посылке Алисы `alice_sent` и атаке Евы."""
    rates, _ = _strategy_vectors(strategy, link, receiver)
    return float(rates[Polarization(alice_sent).index])


def conditional_error_with_eve(
    alice_sent: Polarization, strategy: EveStrategy, link: LinkModel, receiver: ReceiverModel
) -> float:
    """Вероятность ошибочного просеянного бита при посылке `alice_sent`."""
    _, errors = _strategy_vectors(strategy, link, receiver)
    return float(errors[Polarization(alice_sent).index])


def totals_with_eve(strategy: EveStrategy, link: LinkModel, receiver: ReceiverModel) -> RateReport:
    rates, errors = _strategy_vectors(strategy, link, receiver)
    report = report_from_vectors(
        rates, errors, Scenario.FAKED_STATE_ATTACK, model_fingerprint(link, receiver, strategy)
    )
    logger.debug(
        f"📊 Атака при {link.loss_db:g} дБ: R_e={report.rate:.4e}, QBER_e={report.qber:.4%}"
    )
    return report


def baseline_conditional_rates(link: LinkModel, receiver: ReceiverModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    Условные R_ab(j) и E_ab(j) без Евы.

    Импульс Алисы приходит со средним mu * T = T^2 и одинаковой связью
    eta_det во всех каналах.
    """
    arriving = link.mu_alice * link.transmittance
    eff = np.full((4, 4), receiver.eta_det)
    p = click_matrix(np.full(4, arriving), eff, receiver.background, link.fidelity_ab)
    basis_probs, value_probs = squash_tables(p)
    rates = basis_probs[_OWN, _BASIS]
    errors = np.minimum(value_probs[_OWN, _CONJ], rates)
    return rates, errors


def baseline_no_eve(link: LinkModel, receiver: ReceiverModel) -> RateReport:
    rates, errors = baseline_conditional_rates(link, receiver)
    return report_from_vectors(rates, errors, Scenario.BASELINE_NO_EVE, model_fingerprint(link, receiver))
