# montecarlo.py
# Стохастический оракул: поимпульсная модель Алиса -> (Ева) -> Боб для проверки формул.
import logging
import math
from typing import List, Tuple

import numpy as np

from attack_rates import strategy_efficiencies
from config import MC_CHUNK_PULSES, Z_SCORE_LIMIT
from model_core import branch_weights
from shared.metrics import PULSES_SIMULATED
from shared.models import (
    POLARIZATIONS, ChannelEffVector, ComparisonRecord, ComparisonRow,
    ConfigurationMismatchError, DomainError, Polarization, RateReport,
    ReceiverModel, Scenario, TrialConfig, TrialStats, binomial_stderr,
)
from shared.utils import model_fingerprint

logger = logging.getLogger(__name__)


def _click_prob(mean: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Точная модель: 1 - (1 - c) exp(-m); фон входит мультипликативно."""
    return -np.expm1(-mean) + background * np.exp(-mean)


def _bob_detect(rng: np.random.Generator, mean: np.ndarray, alice: np.ndarray, background: np.ndarray):
    """
    Щелчки Боба, squashing и просеивание для пакета импульсов.

    Returns:
        (щелчки (n, 4), маска просеянных, маска ошибок)
    """
    n = alice.size
    clicks = rng.random((n, 4)) < _click_prob(mean, background[None, :])
    coin = rng.random(n) < 0.5
    hv = clicks[:, 0] | clicks[:, 1]
    da = clicks[:, 2] | clicks[:, 3]
    # Щелчки в обоих базисах отбрасываются
    valid = hv ^ da
    bob_basis = np.where(hv, 0, 1)
    rows = np.arange(n)
    first = clicks[rows, 2 * bob_basis]
    second = clicks[rows, 2 * bob_basis + 1]
    bit = np.where(first & second, coin, second)
    bob_value = 2 * bob_basis + bit.astype(int)
    sifted = valid & (bob_basis == alice // 2)
    errors = sifted & (bob_value != alice)
    return clicks, sifted, errors


def _baseline_means(config: TrialConfig, alice: np.ndarray) -> np.ndarray:
    link, receiver = config.link, config.receiver
    arriving = link.mu_alice * link.transmittance
    return arriving * branch_weights(link.fidelity_ab)[alice] * receiver.eta_det


def _attack_means(rng: np.random.Generator, config: TrialConfig, alice: np.ndarray) -> np.ndarray:
    """Измерение Евы в случайном базисе и пересылка фальшивого состояния."""
    link, strategy = config.link, config.strategy
    eve = strategy.eve
    n = alice.size
    mu = link.mu_alice
    eve_basis = rng.integers(0, 2, n)
    u_right = rng.random(n)
    u_wrong = rng.random(n)

    compatible = eve_basis == alice // 2
    m_right = np.where(compatible, mu * link.fidelity_ab * eve.eta_e, mu * eve.eta_e / 2.0)
    m_wrong = np.where(compatible, mu * (1.0 - link.fidelity_ab) * eve.eta_e, mu * eve.eta_e / 2.0)
    click_right = u_right < _click_prob(m_right, eve.dark)
    click_wrong = u_wrong < _click_prob(m_wrong, eve.dark)
    # Вакуум или двойной щелчок: Ева ничего не посылает
    single = click_right ^ click_wrong
    result = np.where(
        compatible,
        np.where(click_right, alice, alice ^ 1),
        np.where(click_right, 2 * eve_basis, 2 * eve_basis + 1),
    )

    eff = strategy_efficiencies(strategy.attack_points, config.receiver)
    mu_resend = np.asarray(strategy.mu)[result]
    mean = mu_resend[:, None] * branch_weights(strategy.fidelity_eb)[result] * eff[result]
    return np.where(single[:, None], mean, 0.0)


def _simulate_chunk(rng: np.random.Generator, n: int, config: TrialConfig) -> Tuple[np.ndarray, ...]:
    alice = rng.integers(0, 4, n)
    if config.scenario is Scenario.BASELINE_NO_EVE:
        mean = _baseline_means(config, alice)
    else:
        mean = _attack_means(rng, config, alice)
    clicks, sifted, errors = _bob_detect(rng, mean, alice, config.receiver.background)
    return (
        np.bincount(alice, minlength=4),
        np.bincount(alice[sifted], minlength=4),
        np.bincount(alice[errors], minlength=4),
        clicks.sum(axis=0),
    )


def _trial_fingerprint(config: TrialConfig) -> str:
    if config.scenario is Scenario.FAKED_STATE_ATTACK:
        return model_fingerprint(config.link, config.receiver, config.strategy)
    return model_fingerprint(config.link, config.receiver)


def run_trials(config: TrialConfig) -> TrialStats:
    """
    Моделирует N импульсов и возвращает счётчики.

    Импульсы делятся на блоки по MC_CHUNK_PULSES; каждый блок получает свой
    поток PCG64 из SeedSequence(seed).spawn, суммы не зависят от порядка блоков.
    """
    n_chunks = math.ceil(config.n_pulses / MC_CHUNK_PULSES)
    children = np.random.SeedSequence(config.seed).spawn(n_chunks)
    totals = [np.zeros(4, dtype=np.int64) for _ in range(4)]
    for k, child in enumerate(children):
        n = min(MC_CHUNK_PULSES, config.n_pulses - k * MC_CHUNK_PULSES)
        rng = np.random.Generator(np.random.PCG64(child))
        for total, part in zip(totals, _simulate_chunk(rng, n, config)):
            total += part
    PULSES_SIMULATED.labels(scenario=config.scenario.value).inc(config.n_pulses)

    sent, sifted, errors, clicks = (tuple(int(v) for v in t) for t in totals)
    stats = TrialStats(
        scenario=config.scenario,
        n_pulses=config.n_pulses,
        sent=sent,
        sifted_by_pol=sifted,
        errors_by_pol=errors,
        clicks=clicks,
        fingerprint=_trial_fingerprint(config),
    )
    logger.info(
        f"🎲 {config.scenario.value}: N={config.n_pulses}, просеяно {stats.sifted}, "
        f"ошибок {stats.errors}, R={stats.rate:.4e}, QBER={stats.qber:.4%}"
    )
    return stats


def sample_click_frequencies(
    mu: float,
    sent: Polarization,
    eff: ChannelEffVector,
    receiver: ReceiverModel,
    fidelity: float,
    n_pulses: int,
    seed: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Частоты щелчков четырёх детекторов при фиксированном импульсе.

    Args:
        eff: абсолютные эффективности каналов

    Returns:
        (частоты, стандартные ошибки), форма (4,)
    """
    if n_pulses < 1:
        raise DomainError(f"n_pulses={n_pulses} must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    mean = mu * branch_weights(fidelity)[Polarization(sent).index] * eff.as_array()
    clicks = rng.random((n_pulses, 4)) < _click_prob(mean, receiver.background)[None, :]
    freqs = clicks.mean(axis=0)
    stderr = np.sqrt(freqs * (1.0 - freqs) / n_pulses)
    return freqs, stderr


def _row(quantity: str, analytic: float, estimate: float, stderr: float) -> ComparisonRow:
    z = (estimate - analytic) / stderr if stderr > 0 else None
    return ComparisonRow(quantity, float(analytic), float(estimate), float(stderr), z, Z_SCORE_LIMIT)


def compare_to_analytic(stats: TrialStats, report: RateReport) -> ComparisonRecord:
    """
    z-оценки для R, QBER, R(j) и E_j.

    Величины с нулевой стандартной ошибкой не проверяются (недостаточно данных).
    """
    if stats.scenario is not report.scenario:
        raise ConfigurationMismatchError(
            f"статистика для '{stats.scenario.value}', аналитика для '{report.scenario.value}'"
        )
    if report.fingerprint and report.fingerprint != stats.fingerprint:
        raise ConfigurationMismatchError(
            f"статистика и аналитика посчитаны для разных моделей "
            f"(линия, приёмник или стратегия): {stats.fingerprint} != {report.fingerprint}"
        )
    rows: List[ComparisonRow] = [
        _row("R", report.rate, stats.rate, stats.rate_stderr),
        _row("QBER", report.qber, stats.qber, stats.qber_stderr),
    ]
    for pol in POLARIZATIONS:
        j = pol.index
        n = stats.sent[j]
        rate = stats.sifted_by_pol[j] / n if n else 0.0
        error = stats.errors_by_pol[j] / n if n else 0.0
        rows.append(_row(f"R({pol.value})", report.rates[j], rate, binomial_stderr(rate, n)))
        rows.append(_row(f"E({pol.value})", report.errors[j], error, binomial_stderr(error, n)))

    record = ComparisonRecord(rows=tuple(rows), scenario=stats.scenario)
    if record.passed:
        logger.info(f"✅ {stats.scenario.value}: все |z| <= {Z_SCORE_LIMIT:g}")
    else:
        names = ", ".join(row.quantity for row in record.failures())
        logger.warning(f"⚠️ {stats.scenario.value}: расхождение по {names}")
    return record
