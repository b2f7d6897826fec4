# shared/models.py

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import (
    DEFAULT_BACKGROUND, DEFAULT_CONSTRAINT_TOL, DEFAULT_ETA_DET, DEFAULT_ETA_E,
    DEFAULT_EVE_DARK, DEFAULT_FIDELITY_AB, DEFAULT_FIDELITY_EB,
    DEFAULT_MAX_ITERATIONS, DEFAULT_MU_MAX, DEFAULT_MU_MIN,
    DEFAULT_OBJECTIVE_TOL, DEFAULT_RESTARTS, DEFAULT_SEED, MAX_BACKGROUND,
    MAX_EVE_DARK, PAPER_THRESHOLDS, TIGHT_THRESHOLDS,
)

CHANNELS = ("h", "v", "d", "a")


# === Ошибки ===

class LabError(Exception):
    """Базовая ошибка лаборатории."""


class DomainError(LabError, ValueError):
    """Физически недопустимые параметры модели."""


class ConfigError(LabError):
    """Некорректный файл конфигурации запуска."""


class ScanFormatError(LabError):
    """Повреждённый CSV-файл со сканом или отчётом."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class InfeasibleAttackError(LabError):
    """Ева не может воспроизвести требуемую скорость."""


class ConfigurationMismatchError(LabError):
    """Статистика Монте-Карло и аналитика посчитаны для разных сценариев."""


# === Поляризации и базисы ===

class Basis(str, Enum):
    HV = "HV"
    DA = "DA"

    @property
    def channel_indices(self) -> Tuple[int, int]:
        return (0, 1) if self is Basis.HV else (2, 3)

    def other(self) -> "Basis":
        return Basis.DA if self is Basis.HV else Basis.HV


class Polarization(str, Enum):
    H = "H"
    V = "V"
    D = "D"
    A = "A"

    @property
    def index(self) -> int:
        return _POL_INDEX[self.value]

    def basis(self) -> Basis:
        return Basis.HV if self.index < 2 else Basis.DA

    def conjugate(self) -> "Polarization":
        return POLARIZATIONS[self.index ^ 1]


_POL_INDEX = {"H": 0, "V": 1, "D": 2, "A": 3}
POLARIZATIONS = (Polarization.H, Polarization.V, Polarization.D, Polarization.A)


def _check_probability(name: str, value: float, low: float = 0.0, high: float = 1.0):
    if not (math.isfinite(value) and low <= value <= high):
        raise DomainError(f"{name}={value} outside [{low}, {high}]")


# === Модель приёмника и линии ===

@dataclass(frozen=True)
class ChannelEffVector:
    eta_h: float
    eta_v: float
    eta_d: float
    eta_a: float

    def __post_init__(self):
        for name, value in zip(CHANNELS, self.as_tuple()):
            _check_probability(f"eta_{name}", value)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.eta_h, self.eta_v, self.eta_d, self.eta_a)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=float)

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "ChannelEffVector":
        if len(values) != 4:
            raise DomainError(f"ожидалось 4 эффективности, получено {len(values)}")
        return cls(*(float(v) for v in values))

    @classmethod
    def uniform(cls, value: float) -> "ChannelEffVector":
        return cls(value, value, value, value)


@dataclass(frozen=True)
class ReceiverModel:
    eta_det: float = DEFAULT_ETA_DET
    c: Tuple[float, float, float, float] = DEFAULT_BACKGROUND
    squashing: str = "random-bit"  # двойной щелчок в базисе -> случайный бит, разные базисы -> отброс

    def __post_init__(self):
        if not (0.0 < self.eta_det <= 1.0):
            raise DomainError(f"eta_det={self.eta_det} outside (0, 1]")
        if len(self.c) != 4:
            raise DomainError("нужно ровно 4 фоновые вероятности")
        for name, value in zip(CHANNELS, self.c):
            _check_probability(f"c_{name}", value, 0.0, MAX_BACKGROUND)
        if self.squashing != "random-bit":
            raise DomainError(f"неизвестное правило squashing: {self.squashing}")

    @property
    def background(self) -> np.ndarray:
        return np.asarray(self.c, dtype=float)


@dataclass(frozen=True)
class LinkModel:
    loss_db: float
    fidelity_ab: float = DEFAULT_FIDELITY_AB
    fidelity_eb: float = DEFAULT_FIDELITY_EB

    def __post_init__(self):
        if not (math.isfinite(self.loss_db) and self.loss_db >= 0):
            raise DomainError(f"loss_db={self.loss_db} must be finite and >= 0")
        _check_probability("fidelity_ab", self.fidelity_ab, 0.5, 1.0)
        _check_probability("fidelity_eb", self.fidelity_eb, 0.5, 1.0)

    @property
    def transmittance(self) -> float:
        return 10.0 ** (-self.loss_db / 10.0)

    @property
    def mu_alice(self) -> float:
        # Алиса выбирает среднее число фотонов равным пропусканию линии
        return self.transmittance


@dataclass(frozen=True)
class EveDetectorModel:
    eta_e: float = DEFAULT_ETA_E
    dark: float = DEFAULT_EVE_DARK

    def __post_init__(self):
        if not (0.0 < self.eta_e <= 1.0):
            raise DomainError(f"eta_e={self.eta_e} outside (0, 1]")
        _check_probability("dark", self.dark, 0.0, MAX_EVE_DARK)


@dataclass(frozen=True)
class EveMeasurementProbs:
    p_compatible_correct: float
    p_compatible_wrong: float
    p_noncompatible_single: float

    def __post_init__(self):
        _check_probability("P_c^e", self.p_compatible_correct)
        _check_probability("P_w^e", self.p_compatible_wrong)
        _check_probability("P_nc^e", self.p_noncompatible_single)
        if self.p_compatible_correct + self.p_compatible_wrong + 2 * self.p_noncompatible_single > 1 + 1e-12:
            raise DomainError("P_c^e + P_w^e + 2 P_nc^e > 1")

    @property
    def p_no_single(self) -> float:
        """Вакуум или многократный щелчок: Ева ничего не пересылает."""
        rest = 1.0 - self.p_compatible_correct - self.p_compatible_wrong - 2 * self.p_noncompatible_single
        return max(rest, 0.0)


# === Угловые карты эффективности ===

@dataclass(frozen=True)
class ScanGrid:
    phi_min: float
    phi_max: float
    theta_min: float
    theta_max: float
    n_phi: int
    n_theta: int

    def __post_init__(self):
        if self.n_phi < 2 or self.n_theta < 2:
            raise DomainError(f"сетка {self.n_phi}x{self.n_theta} меньше 2x2")
        if not (self.phi_max > self.phi_min and self.theta_max > self.theta_min):
            raise DomainError("границы сетки должны возрастать")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_phi, self.n_theta)

    @property
    def phi_values(self) -> np.ndarray:
        return np.linspace(self.phi_min, self.phi_max, self.n_phi)

    @property
    def theta_values(self) -> np.ndarray:
        return np.linspace(self.theta_min, self.theta_max, self.n_theta)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """Координаты ячеек (phi, theta) в мрад, индексация [i_phi, i_theta]."""
        return np.meshgrid(self.phi_values, self.theta_values, indexing="ij")

    def header_fields(self) -> Dict[str, str]:
        return {
            "phi_min_mrad": repr(float(self.phi_min)),
            "phi_max_mrad": repr(float(self.phi_max)),
            "theta_min_mrad": repr(float(self.theta_min)),
            "theta_max_mrad": repr(float(self.theta_max)),
            "n_phi": str(self.n_phi),
            "n_theta": str(self.n_theta),
        }


@dataclass(frozen=True, eq=False)
class EfficiencyMap:
    grid: ScanGrid
    eta: np.ndarray  # форма (4, n_phi, n_theta), каналы h, v, d, a

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        if eta.shape != (4,) + self.grid.shape:
            raise DomainError(f"форма карты {eta.shape} не совпадает с сеткой {self.grid.shape}")
        if not np.all(np.isfinite(eta)) or eta.min() < 0 or eta.max() > 1 + 1e-9:
            raise DomainError("нормированные эффективности должны лежать в [0, 1]")
        eta = np.clip(eta, 0.0, 1.0)
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)


def normalize_channels(values: np.ndarray) -> np.ndarray:
    """Делит каждый канал на его максимум; тождественно нулевой канал остаётся нулём."""
    values = np.clip(np.asarray(values, dtype=float), 0.0, None)
    peaks = values.reshape(values.shape[0], -1).max(axis=1)
    out = np.zeros_like(values)
    for ch, peak in enumerate(peaks):
        if peak > 0:
            out[ch] = values[ch] / peak
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class RawScan:
    grid: ScanGrid
    counts: np.ndarray  # скорости счёта, отсчёты/с, форма (4, n_phi, n_theta)
    background: Tuple[float, float, float, float]
    t_int_s: float = 1.0

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        if counts.size == 0:
            raise DomainError("пустой скан")
        if counts.shape != (4,) + self.grid.shape:
            raise DomainError(f"форма скана {counts.shape} не совпадает с сеткой {self.grid.shape}")
        if not np.all(np.isfinite(counts)) or counts.min() < 0:
            raise DomainError("скорости счёта должны быть неотрицательны")
        if len(self.background) != 4 or min(self.background) < 0:
            raise DomainError("нужно 4 неотрицательных фона")
        if self.t_int_s <= 0:
            raise DomainError(f"t_int_s={self.t_int_s} must be > 0")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "background", tuple(float(b) for b in self.background))


@dataclass(frozen=True)
class AttackPoint:
    polarization: Polarization
    phi_mrad: float
    theta_mrad: float
    efficiencies: ChannelEffVector  # нормированные значения карты
    delta: float  # math.inf, если оба несовместимых канала тёмные
    i_phi: int = 0
    i_theta: int = 0

    @property
    def eta_target(self) -> float:
        return self.efficiencies.as_tuple()[self.polarization.index]


@dataclass(frozen=True)
class SearchThresholds:
    limits: Mapping[Polarization, Tuple[float, float]]  # (eta_min, delta_min)

    def __post_init__(self):
        limits = {Polarization(p): (float(e), float(d)) for p, (e, d) in dict(self.limits).items()}
        if set(limits) != set(POLARIZATIONS):
            raise DomainError("пороги нужны для всех четырёх поляризаций")
        for pol, (eta_min, delta_min) in limits.items():
            _check_probability(f"eta_min[{pol.value}]", eta_min)
            if not delta_min >= 1:
                raise DomainError(f"delta_min[{pol.value}]={delta_min} < 1")
        object.__setattr__(self, "limits", limits)

    def eta_min(self, pol: Polarization) -> float:
        return self.limits[pol][0]

    def delta_min(self, pol: Polarization) -> float:
        return self.limits[pol][1]

    @classmethod
    def paper(cls) -> "SearchThresholds":
        return cls(dict(PAPER_THRESHOLDS))

    @classmethod
    def tight(cls) -> "SearchThresholds":
        return cls(dict(TIGHT_THRESHOLDS))

    @classmethod
    def uniform(cls, eta_min: float, delta_min: float) -> "SearchThresholds":
        return cls({p: (eta_min, delta_min) for p in POLARIZATIONS})

    def as_dict(self) -> Dict[str, Dict[str, float]]:
        return {p.value: {"eta_min": e, "delta_min": d} for p, (e, d) in self.limits.items()}


# === Стратегия Евы и отчёты о скоростях ===

class Scenario(str, Enum):
    BASELINE_NO_EVE = "baseline"
    FAKED_STATE_ATTACK = "attack"


@dataclass(frozen=True)
class EveStrategy:
    mu: Tuple[float, float, float, float]  # порядок H, V, D, A
    attack_points: Tuple[AttackPoint, AttackPoint, AttackPoint, AttackPoint]
    eve: EveDetectorModel = field(default_factory=EveDetectorModel)
    fidelity_eb: float = DEFAULT_FIDELITY_EB
    mu_max: float = DEFAULT_MU_MAX

    def __post_init__(self):
        if len(self.mu) != 4 or len(self.attack_points) != 4:
            raise DomainError("стратегия требует 4 значения mu и 4 точки атаки")
        for pol, mu, point in zip(POLARIZATIONS, self.mu, self.attack_points):
            if not (math.isfinite(mu) and 0 <= mu <= self.mu_max):
                raise DomainError(f"mu_{pol.value}={mu} outside [0, {self.mu_max}]")
            if point.polarization is not pol:
                raise DomainError(f"точка атаки {point.polarization.value} стоит на месте {pol.value}")
        _check_probability("fidelity_eb", self.fidelity_eb, 0.5, 1.0)
        object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))


@dataclass(frozen=True)
class RateReport:
    rates: Tuple[float, float, float, float]  # R(j), порядок H, V, D, A
    errors: Tuple[float, float, float, float]  # E_j
    rate: float
    qber: float
    scenario: Scenario = Scenario.FAKED_STATE_ATTACK
    # хэш линии, приёмника и стратегии; пустой, если модель не указана
    fingerprint: str = ""


# === Оптимизатор ===

class OptimizerMode(str, Enum):
    TOTAL_RATE = "total"
    PER_POLARIZATION_RATES = "perpol"


@dataclass(frozen=True)
class OptimizerConfig:
    mode: OptimizerMode = OptimizerMode.PER_POLARIZATION_RATES
    mu_min: float = DEFAULT_MU_MIN
    mu_max: float = DEFAULT_MU_MAX
    constraint_tol: float = DEFAULT_CONSTRAINT_TOL
    objective_tol: float = DEFAULT_OBJECTIVE_TOL
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    restarts: int = DEFAULT_RESTARTS
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        object.__setattr__(self, "mode", OptimizerMode(self.mode))
        if not (0 < self.mu_min < self.mu_max):
            raise DomainError(f"границы mu [{self.mu_min}, {self.mu_max}] некорректны")
        if self.constraint_tol <= 0 or self.objective_tol <= 0:
            raise DomainError("допуски должны быть положительны")
        if self.max_iterations < 1 or self.restarts < 1:
            raise DomainError("max_iterations и restarts должны быть >= 1")


@dataclass(frozen=True)
class OptimizationResult:
    mode: OptimizerMode
    mu: Tuple[float, float, float, float]
    qber: float
    rate: float
    rates: Tuple[float, float, float, float]
    target_rate: float
    residuals: Tuple[float, ...]  # |R_e/R_ab - 1|: одна величина (total) или четыре (perpol)
    converged: bool
    iterations: int
    message: str = ""

    @property
    def max_residual(self) -> float:
        return max(self.residuals) if self.residuals else math.inf


@dataclass(frozen=True)
class SweepResult:
    loss_db: float
    rate_ab: float
    qber_ab: float
    rate_e: float = math.nan
    qber_e: float = math.nan
    mu: Optional[Tuple[float, float, float, float]] = None
    residual: float = math.nan
    converged: bool = False
    status: str = "ok"


# === Монте-Карло ===

@dataclass(frozen=True)
class TrialConfig:
    n_pulses: int
    seed: int
    scenario: Scenario
    link: LinkModel
    receiver: ReceiverModel = field(default_factory=ReceiverModel)
    strategy: Optional[EveStrategy] = None

    def __post_init__(self):
        if self.n_pulses < 1:
            raise DomainError(f"n_pulses={self.n_pulses} must be >= 1")
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.scenario is Scenario.FAKED_STATE_ATTACK and self.strategy is None:
            raise DomainError("сценарий атаки требует стратегию Евы")


@dataclass(frozen=True)
class TrialStats:
    scenario: Scenario
    n_pulses: int
    sent: Tuple[int, int, int, int]
    sifted_by_pol: Tuple[int, int, int, int]
    errors_by_pol: Tuple[int, int, int, int]
    clicks: Tuple[int, int, int, int]  # по детекторам h, v, d, a
    fingerprint: str = ""

    def __post_init__(self):
        if not (self.errors <= self.sifted <= self.n_pulses):
            raise DomainError("нарушено errors <= sifted <= N")

    @property
    def sifted(self) -> int:
        return int(sum(self.sifted_by_pol))

    @property
    def errors(self) -> int:
        return int(sum(self.errors_by_pol))

    @property
    def rate(self) -> float:
        return self.sifted / self.n_pulses

    @property
    def qber(self) -> float:
        return self.errors / self.sifted if self.sifted else 0.0

    @property
    def rate_stderr(self) -> float:
        return binomial_stderr(self.rate, self.n_pulses)

    @property
    def qber_stderr(self) -> float:
        return binomial_stderr(self.qber, self.sifted)


def binomial_stderr(p_hat: float, n: int) -> float:
    if n <= 0:
        return 0.0
    return math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n)


@dataclass(frozen=True)
class ComparisonRow:
    quantity: str
    analytic: float
    estimate: float
    stderr: float
    z: Optional[float]  # None -> недостаточно данных
    limit: float = 3.0

    @property
    def passed(self) -> bool:
        return self.z is None or abs(self.z) <= self.limit


@dataclass(frozen=True)
class ComparisonRecord:
    rows: Tuple[ComparisonRow, ...]
    scenario: Scenario

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def failures(self) -> Tuple[ComparisonRow, ...]:
        return tuple(row for row in self.rows if not row.passed)
