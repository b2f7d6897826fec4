# model_core.py
# Элементарные вероятности щелчков Боба (с фоном) и измерений Евы.
import logging
from typing import Union

import numpy as np

from shared.models import (
    Basis, ChannelEffVector, DomainError, EveDetectorModel, EveMeasurementProbs,
    Polarization, ReceiverModel,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def branch_weights(fidelity: float) -> np.ndarray:
    """
    Доли среднего числа фотонов, приходящиеся на каждый детектор.

    Строка — посланная поляризация (H, V, D, A), столбец — канал Боба (h, v, d, a).
    Светоделитель 50:50 выбирает базис, PBS делит по поляризации с точностью F;
    в несовместимом базисе свет делится поровну.
    """
    if not (0.5 <= fidelity <= 1.0):
        raise DomainError(f"fidelity={fidelity} outside [0.5, 1]")
    w = np.full((4, 4), 0.25)
    for k in range(4):
        w[k, k] = fidelity / 2.0
        w[k, k ^ 1] = (1.0 - fidelity) / 2.0
    return w


def click_matrix(mu: np.ndarray, eff: np.ndarray, background: np.ndarray, fidelity: float) -> np.ndarray:
    """
    Сырые вероятности щелчков p_i(k) для всех посланных поляризаций сразу.

    Args:
        mu: средние числа фотонов по посланным поляризациям, форма (4,)
        eff: абсолютные эффективности, eff[k, i] — канал i в точке атаки k
        background: фоновые вероятности c_i, форма (4,)
        fidelity: точность поляризационного деления

    Returns:
        Матрица (4, 4), значения обрезаны до [0, 1]
    """
    mu = np.asarray(mu, dtype=float)
    mean = mu[:, None] * branch_weights(fidelity) * np.asarray(eff, dtype=float)
    return np.clip(np.asarray(background)[None, :] - np.expm1(-mean), 0.0, 1.0)


def raw_click_probs(
    mu_j: float,
    sent: Polarization,
    eff: ChannelEffVector,
    receiver: ReceiverModel,
    fidelity: float,
) -> np.ndarray:
    """
    Вероятность щелчка каждого из четырёх детекторов Боба до squashing.

    Args:
        mu_j: среднее число фотонов посланного импульса
        sent: поляризация импульса
        eff: абсолютные эффективности каналов для угла падения
        receiver: фон c_i берётся отсюда
        fidelity: Eve-Bob или Alice-Bob точность

    Returns:
        Массив (p_h, p_v, p_d, p_a)
    """
    if not (np.isfinite(mu_j) and mu_j >= 0):
        raise DomainError(f"mu={mu_j} must be >= 0")
    sent = Polarization(sent)
    weights = branch_weights(fidelity)[sent.index]
    mean = mu_j * weights * eff.as_array()
    return np.clip(receiver.background - np.expm1(-mean), 0.0, 1.0)


def _check_clicks(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 4:
        raise DomainError(f"ожидался вектор из 4 вероятностей, форма {p.shape}")
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise DomainError("вероятности щелчков должны лежать в [0, 1]")
    return p


def squashed_basis_prob(p: np.ndarray, basis: Basis) -> ArrayLike:
    """
    Вероятность, что после squashing Боб измерил в данном базисе.

    Двойной щелчок в одном базисе сохраняется (случайный бит), щелчки
    в разных базисах отбрасываются. Работает и для пакета векторов (..., 4).
    """
    p = _check_clicks(p)
    i0, i1 = Basis(basis).channel_indices
    j0, j1 = Basis(basis).other().channel_indices
    quiet_other = (1.0 - p[..., j0]) * (1.0 - p[..., j1])
    return quiet_other * (p[..., i0] + p[..., i1] - p[..., i0] * p[..., i1])


def squashed_value_prob(p: np.ndarray, value: Polarization) -> ArrayLike:
    """Вероятность результата `value` после squashing; двойной щелчок даёт половину."""
    p = _check_clicks(p)
    value = Polarization(value)
    own = value.index
    partner = own ^ 1
    j0, j1 = value.basis().other().channel_indices
    quiet_other = (1.0 - p[..., j0]) * (1.0 - p[..., j1])
    return (p[..., own] - p[..., own] * p[..., partner] / 2.0) * quiet_other


def squash_tables(p: np.ndarray):
    """
    Вероятности по базисам и по значениям для матрицы щелчков (4, 4).

    Returns:
        (basis_probs, value_probs): basis_probs[k, b] — базис b (0=HV, 1=DA)
        при посылке k; value_probs[k, i] — значение i при посылке k.
    """
    p = np.asarray(p, dtype=float)
    q = 1.0 - p
    # quiet[:, b] — ни один детектор базиса b не щёлкнул
    quiet = np.stack([q[:, 0] * q[:, 1], q[:, 2] * q[:, 3]], axis=-1)
    both = np.stack([p[:, 0] * p[:, 1], p[:, 2] * p[:, 3]], axis=-1)
    any_click = np.stack([p[:, 0] + p[:, 1], p[:, 2] + p[:, 3]], axis=-1) - both
    basis_probs = any_click * quiet[:, ::-1]
    value_probs = (p - np.repeat(both, 2, axis=-1) / 2.0) * np.repeat(quiet[:, ::-1], 2, axis=-1)
    return basis_probs, value_probs


def eve_measurement_probs(mu: float, fidelity_ae: float, eve: EveDetectorModel) -> EveMeasurementProbs:
    """
    Вероятности однократного щелчка у Евы при перехвате импульса Алисы.

    Тёмные отсчёты Евы (< 1e-9) здесь не учитываются; они есть только
    в стохастической модели.
    """
    if not (np.isfinite(mu) and mu >= 0):
        raise DomainError(f"mu={mu} must be >= 0")
    if not (0.5 <= fidelity_ae <= 1.0):
        raise DomainError(f"fidelity={fidelity_ae} outside [0.5, 1]")
    right = mu * fidelity_ae * eve.eta_e
    wrong = mu * (1.0 - fidelity_ae) * eve.eta_e
    half = mu * eve.eta_e / 2.0
    p_c = 0.5 * -np.expm1(-right) * np.exp(-wrong)
    p_w = 0.5 * np.exp(-right) * -np.expm1(-wrong)
    p_nc = 0.5 * -np.expm1(-half) * np.exp(-half)
    return EveMeasurementProbs(float(p_c), float(p_w), float(p_nc))
