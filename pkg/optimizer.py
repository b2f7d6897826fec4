# optimizer.py
# Выбор интенсивностей Евы (mu_H, mu_V, mu_D, mu_A) при условии совпадения скоростей.
import logging
import math
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from attack_rates import (
    attack_rate_vectors, baseline_conditional_rates, baseline_no_eve,
    build_strategy, report_from_vectors, strategy_efficiencies,
)
from config import DEFAULT_FIDELITY_AB, DEFAULT_FIDELITY_EB, PENALTY_WEIGHT, QBER_ABORT_THRESHOLD
from model_core import eve_measurement_probs
from shared.metrics import OBJECTIVE_EVALUATIONS, OPTIMIZER_RUNS, SWEEP_POINTS
from shared.models import (
    POLARIZATIONS, AttackPoint, DomainError, EveDetectorModel, EveStrategy,
    InfeasibleAttackError, LabError, LinkModel, OptimizationResult, OptimizerConfig,
    OptimizerMode, Polarization, RateReport, ReceiverModel, Scenario, SweepResult,
)

logger = logging.getLogger(__name__)

AttackPoints = Union[Mapping[Polarization, Optional[AttackPoint]], Sequence[AttackPoint]]

# Шаг сканирования при поиске интервала для корня: одна декада mu
_BRACKET_STEP = math.log(10.0)
_SWEEP_XTOL = 1e-13
# Режим A: начальный симплекс в одну декаду по каждой координате формы
_SIMPLEX_STEP = math.log(10.0)
_SIMPLEX_XTOL = 1e-7
_SHIFT_STEP = 0.5
# Доля mu у второстепенных поляризаций в стартах с одной доминирующей
_MINOR_SHARE = 1e-2


def _ordered_points(points: AttackPoints) -> Tuple[AttackPoint, ...]:
    if isinstance(points, Mapping):
        missing = [p.value for p in POLARIZATIONS if points.get(p) is None]
        if missing:
            raise DomainError(f"нет точек атаки для поляризаций: {', '.join(missing)}")
        return tuple(points[p] for p in POLARIZATIONS)
    ordered = tuple(points)
    if len(ordered) != 4 or any(p.polarization is not pol for p, pol in zip(ordered, POLARIZATIONS)):
        raise DomainError("нужны точки атаки H, V, D, A в этом порядке")
    return ordered


class AttackProblem:
    """
    Модель атаки при фиксированных углах и потерях.

    Всё, что не зависит от mu, вычисляется один раз; оптимизаторы работают
    в пространстве x = ln(mu).
    """

    def __init__(
        self,
        points: AttackPoints,
        link: LinkModel,
        receiver: ReceiverModel,
        eve: EveDetectorModel,
        config: OptimizerConfig,
    ):
        self.points = _ordered_points(points)
        self.link = link
        self.receiver = receiver
        self.eve = eve
        self.config = config
        self.eff = strategy_efficiencies(self.points, receiver)
        self.eve_probs = eve_measurement_probs(link.mu_alice, link.fidelity_ab, eve)
        self.baseline = baseline_no_eve(link, receiver)
        self.targets, _ = baseline_conditional_rates(link, receiver)
        if not self.baseline.rate > 0:
            raise DomainError(f"R_ab = 0 при потерях {link.loss_db:g} дБ")
        self.lower = math.log(config.mu_min)
        self.upper = math.log(config.mu_max)
        self.evaluations = 0
        # последний найденный общий сдвиг ln(mu), с него начинается следующий поиск
        self.shift = 0.0

    @property
    def target_rate(self) -> float:
        return self.baseline.rate

    def vectors(self, mu: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        self.evaluations += 1
        OBJECTIVE_EVALUATIONS.inc()
        return attack_rate_vectors(
            np.asarray(mu, dtype=float), self.eff, self.receiver.background,
            self.link.fidelity_eb, self.eve_probs,
        )

    def report(self, mu: np.ndarray) -> RateReport:
        rates, errors = self.vectors(mu)
        return report_from_vectors(rates, errors, Scenario.FAKED_STATE_ATTACK)

    def strategy(self, mu: Sequence[float]) -> EveStrategy:
        return build_strategy(self.points, mu, self.eve, self.link.fidelity_eb, self.config.mu_max)

    def in_bounds(self, mu: np.ndarray) -> bool:
        return bool(np.all(mu >= self.config.mu_min * (1 - 1e-12))
                    and np.all(mu <= self.config.mu_max * (1 + 1e-12)))

    def result(self, mode: OptimizerMode, mu: np.ndarray, iterations: int, message: str = "") -> OptimizationResult:
        """Собирает результат; флаг сходимости выставляется только по невязкам."""
        mu = np.asarray(mu, dtype=float)
        rates, errors = self.vectors(mu)
        report = report_from_vectors(rates, errors, Scenario.FAKED_STATE_ATTACK)
        if mode is OptimizerMode.PER_POLARIZATION_RATES:
            residuals = tuple(float(abs(r / t - 1.0)) for r, t in zip(rates, self.targets))
        else:
            residuals = (float(abs(report.rate / self.target_rate - 1.0)),)
        converged = (
            max(residuals) <= self.config.constraint_tol
            and self.in_bounds(mu)
            and not message
        )
        if not converged and not message:
            message = f"невязка {max(residuals):.3e} > {self.config.constraint_tol:g}"
        return OptimizationResult(
            mode=mode,
            mu=tuple(float(m) for m in mu),
            qber=report.qber,
            rate=report.rate,
            rates=report.rates,
            target_rate=self.target_rate,
            residuals=residuals,
            converged=converged,
            iterations=iterations,
            message=message,
        )


# === Скалярный корень с поиском интервала ===

def _scan_grid(lower: float, upper: float) -> np.ndarray:
    grid = np.arange(lower, upper, _BRACKET_STEP)
    return np.append(grid, upper)


def _increasing_root(fun, lower: float, upper: float) -> float:
    """
    Первый корень fun на возрастающей ветви в [lower, upper].

    Raises:
        InfeasibleAttackError: fun > 0 уже на нижней границе или не достигает нуля
    """
    grid = _scan_grid(lower, upper)
    prev_x = grid[0]
    prev_v = fun(prev_x)
    if prev_v >= 0:
        if prev_v == 0:
            return float(prev_x)
        raise InfeasibleAttackError("цель ниже скорости при минимальном mu")
    for x in grid[1:]:
        v = fun(x)
        if v >= 0:
            if v == 0:
                return float(x)
            return float(optimize.brentq(fun, prev_x, x, xtol=1e-14, maxiter=500))
        prev_x, prev_v = x, v
    raise InfeasibleAttackError("цель выше максимально достижимой скорости")


def _best_effort(fun, lower: float, upper: float) -> float:
    """Точка сетки с наименьшей |fun| для диагностики недостижимой цели."""
    grid = _scan_grid(lower, upper)
    values = np.array([abs(fun(x)) for x in grid])
    return float(grid[int(np.argmin(values))])


# === Режим B: четыре уравнения R_e(j) = R_ab(j) ===

def _solve_rate_system(problem: AttackProblem) -> Tuple[np.ndarray, int, str]:
    """
    Метод Гаусса-Зейделя по координатам ln(mu_j) со скалярным Брентом,
    затем уточнение гибридным методом Ньютона.

    Returns:
        (mu, число проходов, сообщение об ошибке или "")
    """
    cfg = problem.config
    x = np.zeros(4)
    message = ""
    sweeps = 0
    for sweeps in range(1, cfg.max_iterations + 1):
        previous = x.copy()
        for j in range(4):
            def gap(xj, j=j):
                trial = x.copy()
                trial[j] = xj
                return problem.vectors(np.exp(trial))[0][j] - problem.targets[j]

            try:
                x[j] = _increasing_root(gap, problem.lower, problem.upper)
            except InfeasibleAttackError as e:
                x[j] = _best_effort(gap, problem.lower, problem.upper)
                message = f"R_e({POLARIZATIONS[j].value}) недостижима: {e}"
                logger.warning(f"⚠️ {problem.link.loss_db:g} дБ: {message}")
                return np.exp(x), sweeps, message
        if np.max(np.abs(x - previous)) < _SWEEP_XTOL:
            break
    else:
        message = f"нет сходимости за {cfg.max_iterations} проходов"

    def residual(z):
        return problem.vectors(np.exp(z))[0] / problem.targets - 1.0

    current = np.max(np.abs(residual(x)))
    polished = optimize.root(residual, x, method="hybr", options={"xtol": 1e-15})
    if polished.success:
        z = polished.x
        if (np.all(z >= problem.lower) and np.all(z <= problem.upper)
                and np.max(np.abs(residual(z))) <= current):
            x = z
            message = ""
    return np.exp(x), sweeps, message


def optimize_mode_b(
    points: AttackPoints,
    link: LinkModel,
    receiver: ReceiverModel,
    eve: EveDetectorModel,
    config: OptimizerConfig,
) -> OptimizationResult:
    """
    Решает систему R_e(j)(mu) = R_ab(j) для всех четырёх поляризаций.

    Свободы для минимизации не остаётся: QBER_e определяется решением.
    """
    problem = AttackProblem(points, link, receiver, eve, config)
    mu, sweeps, message = _solve_rate_system(problem)
    result = problem.result(OptimizerMode.PER_POLARIZATION_RATES, mu, sweeps, message)
    _log_result(link, result)
    return result


# === Режим A: минимум QBER_e при R_e = R_ab ===

def _scale_from_bottom(problem: AttackProblem, x: np.ndarray, lo: float, hi: float, gap) -> Tuple[np.ndarray, float]:
    """Первый корень на возрастающей ветви; если его нет, ближайшая к цели точка сетки."""
    try:
        shift = _increasing_root(gap, lo, hi)
    except InfeasibleAttackError:
        shift = _best_effort(gap, lo, hi)
    else:
        problem.shift = shift
    return x + shift, gap(shift)


def _scale_to_total(problem: AttackProblem, x: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Общий сдвиг ln(mu), при котором полная скорость равна R_ab.

    Поиск начинается с предыдущего найденного сдвига и расширяет интервал
    вдвое, пока не сменится знак.

    Returns:
        (сдвинутый x, относительная невязка R_e/R_ab - 1); невязка отлична
        от нуля, только если форма не достигает R_ab в границах mu
    """
    x = np.asarray(x, dtype=float)
    lo = problem.lower - x.min()
    hi = problem.upper - x.max()
    if lo > hi:
        # форма шире допустимого диапазона: прижимаем к верхней границе
        x = np.clip(x - x.max() + problem.upper, problem.lower, problem.upper)
        lo = hi = 0.0

    def gap(shift):
        rates, _ = problem.vectors(np.exp(x + shift))
        return float(np.mean(rates)) / problem.target_rate - 1.0

    a = min(max(problem.shift, lo), hi)
    ga = gap(a)
    if ga == 0.0:
        return x + a, 0.0
    direction = 1.0 if ga < 0 else -1.0
    step = _SHIFT_STEP
    while True:
        b = min(max(a + direction * step, lo), hi)
        gb = gap(b)
        if np.sign(gb) != np.sign(ga):
            break
        if b == a:
            # пик скорости пройден или цель вне границ
            return _scale_from_bottom(problem, x, lo, hi, gap)
        a, ga = b, gb
        step *= 2.0
    shift = optimize.brentq(gap, min(a, b), max(a, b), xtol=_SWEEP_XTOL, maxiter=500)
    problem.shift = shift
    return x + shift, gap(shift)


def _with_anchor(y: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], y))


def _starting_shapes(problem: AttackProblem, x_b: np.ndarray, config: OptimizerConfig) -> List[np.ndarray]:
    """
    Формы ln(mu) относительно mu_H для стартов симплекса.

    Решение режима B, по одному старту на каждую доминирующую поляризацию
    и `restarts` log-равномерных точек из [mu_min, mu_max].
    """
    starts = [np.asarray(x_b, dtype=float)]
    for j in range(4):
        x = np.full(4, math.log(_MINOR_SHARE))
        x[j] = 0.0
        starts.append(x)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    starts.extend(rng.uniform(problem.lower, problem.upper, size=(config.restarts, 4)))
    return [x[1:] - x[0] for x in starts]


def optimize_mode_a(
    points: AttackPoints,
    link: LinkModel,
    receiver: ReceiverModel,
    eve: EveDetectorModel,
    config: OptimizerConfig,
) -> OptimizationResult:
    """
    Минимизирует QBER_e при ограничении |R_e/R_ab - 1| <= tol.

    Симплекс Нелдера-Мида ищет форму (mu_V/mu_H, mu_D/mu_H, mu_A/mu_H) в
    логарифмах; общий масштаб подбирается так, чтобы R_e = R_ab. Формы, для
    которых это недостижимо в границах mu, получают внешний штраф на
    невязку. Лучший старт спускается повторно с новым симплексом. Решение
    режима B входит в число кандидатов, поэтому результат не хуже режима B.
    """
    problem = AttackProblem(points, link, receiver, eve, config)
    mu_b, sweeps, message_b = _solve_rate_system(problem)
    x_b = np.log(mu_b)
    # objective_tol относительный: в долях QBER_ab
    fatol = config.objective_tol * max(problem.baseline.qber, config.objective_tol)

    def objective(y):
        x, miss = _scale_to_total(problem, _with_anchor(y))
        rates, errors = problem.vectors(np.exp(x))
        total = float(np.mean(rates))
        qber = float(np.sum(errors) / (4.0 * total)) if total > 0 else 1.0
        return qber + PENALTY_WEIGHT * miss ** 2

    def descend(y0):
        simplex = np.vstack([y0, y0 + _SIMPLEX_STEP * np.eye(3)])
        return optimize.minimize(
            objective, y0, method="Nelder-Mead",
            options={
                "initial_simplex": simplex, "xatol": _SIMPLEX_XTOL,
                "fatol": fatol, "maxfev": config.max_iterations,
            },
        )

    candidates: List[np.ndarray] = []
    if not message_b:
        candidates.append(x_b)
    iterations = sweeps
    best_y, best_value = None, math.inf
    for y0 in _starting_shapes(problem, x_b, config):
        found = descend(y0)
        iterations += int(found.nfev)
        candidates.append(_scale_to_total(problem, _with_anchor(found.x))[0])
        if found.fun < best_value:
            best_y, best_value = np.asarray(found.x), float(found.fun)
    if best_y is not None:
        found = descend(best_y)
        iterations += int(found.nfev)
        candidates.append(_scale_to_total(problem, _with_anchor(found.x))[0])

    best_x, best_qber = None, math.inf
    for x in candidates:
        rates, errors = problem.vectors(np.exp(x))
        total = float(np.mean(rates))
        if abs(total / problem.target_rate - 1.0) > config.constraint_tol or not total > 0:
            continue
        qber = float(np.sum(errors) / (4.0 * total))
        if qber < best_qber:
            best_x, best_qber = x, qber

    if best_x is None:
        message = "ни один старт не достиг R_e = R_ab"
        logger.warning(f"⚠️ {link.loss_db:g} дБ: {message}")
        result = problem.result(OptimizerMode.TOTAL_RATE, mu_b, iterations, message)
    else:
        result = problem.result(OptimizerMode.TOTAL_RATE, np.exp(best_x), iterations)
    _log_result(link, result)
    return result


def _log_result(link: LinkModel, result: OptimizationResult):
    outcome = "converged" if result.converged else "failed"
    OPTIMIZER_RUNS.labels(mode=result.mode.value, outcome=outcome).inc()
    if result.converged:
        logger.info(
            f"✅ {link.loss_db:g} дБ, режим {result.mode.value}: QBER_e={result.qber:.4%}, "
            f"невязка {result.max_residual:.2e}"
        )
    else:
        logger.warning(f"⚠️ {link.loss_db:g} дБ, режим {result.mode.value}: {result.message}")


def optimize_attack(
    points: AttackPoints,
    link: LinkModel,
    receiver: ReceiverModel,
    eve: EveDetectorModel,
    config: OptimizerConfig,
) -> OptimizationResult:
    if config.mode is OptimizerMode.TOTAL_RATE:
        return optimize_mode_a(points, link, receiver, eve, config)
    return optimize_mode_b(points, link, receiver, eve, config)


# === Развёртка по потерям ===

def sweep_loss(
    loss_grid: Sequence[float],
    points: AttackPoints,
    receiver: ReceiverModel,
    eve: EveDetectorModel,
    config: OptimizerConfig,
    fidelity_ab: float = DEFAULT_FIDELITY_AB,
    fidelity_eb: float = DEFAULT_FIDELITY_EB,
) -> List[SweepResult]:
    """
    Базовая линия и оптимальная атака для каждой точки сетки потерь.

    Ошибка в одной точке записывается в её статус, развёртка продолжается.
    """
    if not len(loss_grid):
        raise DomainError("пустая сетка потерь")
    try:
        ordered = _ordered_points(points)
    except DomainError as e:
        ordered = None
        logger.warning(f"⚠️ Атака невозможна: {e}")

    results: List[SweepResult] = []
    for loss in loss_grid:
        link = LinkModel(float(loss), fidelity_ab, fidelity_eb)
        baseline = baseline_no_eve(link, receiver)
        if ordered is None:
            results.append(SweepResult(
                loss_db=link.loss_db, rate_ab=baseline.rate, qber_ab=baseline.qber,
                status="no attack available",
            ))
            SWEEP_POINTS.labels(status="no_attack").inc()
            continue
        try:
            res = optimize_attack(ordered, link, receiver, eve, config)
        except LabError as e:
            logger.error(f"❌ {link.loss_db:g} дБ: {e}")
            results.append(SweepResult(
                loss_db=link.loss_db, rate_ab=baseline.rate, qber_ab=baseline.qber,
                status=f"error: {e}",
            ))
            SWEEP_POINTS.labels(status="error").inc()
            continue
        if res.converged and res.qber > QBER_ABORT_THRESHOLD:
            logger.warning(
                f"⚠️ {link.loss_db:g} дБ: QBER_e={res.qber:.2%} выше порога {QBER_ABORT_THRESHOLD:.0%}, "
                f"Алиса и Боб прервали бы сеанс"
            )
        results.append(SweepResult(
            loss_db=link.loss_db,
            rate_ab=baseline.rate,
            qber_ab=baseline.qber,
            rate_e=res.rate,
            qber_e=res.qber,
            mu=res.mu,
            residual=res.max_residual,
            converged=res.converged,
            status="ok" if res.converged else res.message,
        ))
        SWEEP_POINTS.labels(status="ok" if res.converged else "not_converged").inc()
    return results
