# shared/run_config.py
# JSON-конфигурация запуска: секции с проверкой, неизвестные ключи запрещены.
import json
import logging
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import (
    DEFAULT_BACKGROUND, DEFAULT_CONSTRAINT_TOL, DEFAULT_ETA_DET, DEFAULT_ETA_E,
    DEFAULT_EVE_DARK, DEFAULT_FIDELITY_AB, DEFAULT_FIDELITY_EB, DEFAULT_LOSS_GRID_DB,
    DEFAULT_MAX_ITERATIONS, DEFAULT_MU_MAX, DEFAULT_MU_MIN, DEFAULT_N_PULSES,
    DEFAULT_OBJECTIVE_TOL, DEFAULT_RESTARTS, DEFAULT_SEED, PAPER_THRESHOLDS,
)
from shared.models import (
    POLARIZATIONS, ConfigError, EveDetectorModel, LinkModel, OptimizerConfig,
    OptimizerMode, ReceiverModel, Scenario, SearchThresholds,
)
from shared.utils import canonical_json

logger = logging.getLogger(__name__)

ScanPresetName = Literal["paper-like", "zero-feature"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ReceiverSection(_Section):
    eta_det: float = DEFAULT_ETA_DET
    c: List[float] = Field(default_factory=lambda: list(DEFAULT_BACKGROUND))

    @field_validator("c")
    @classmethod
    def validate_background(cls, v: List[float]) -> List[float]:
        if len(v) != 4:
            raise ValueError("c должен содержать 4 значения (h, v, d, a)")
        return v

    def to_receiver(self) -> ReceiverModel:
        return ReceiverModel(eta_det=self.eta_det, c=tuple(self.c))


class LinkSection(_Section):
    fidelity_ab: float = DEFAULT_FIDELITY_AB
    fidelity_eb: float = DEFAULT_FIDELITY_EB
    loss_db: Union[float, List[float]] = Field(default_factory=lambda: list(DEFAULT_LOSS_GRID_DB))

    @field_validator("loss_db")
    @classmethod
    def validate_loss(cls, v):
        values = v if isinstance(v, list) else [v]
        if not values:
            raise ValueError("сетка потерь пуста")
        if any(x < 0 for x in values):
            raise ValueError("потери должны быть >= 0 дБ")
        return v

    @property
    def loss_grid(self) -> List[float]:
        return [float(x) for x in self.loss_db] if isinstance(self.loss_db, list) else [float(self.loss_db)]

    def to_link(self, loss_db: float) -> LinkModel:
        return LinkModel(loss_db=loss_db, fidelity_ab=self.fidelity_ab, fidelity_eb=self.fidelity_eb)


class EveSection(_Section):
    eta_e: float = DEFAULT_ETA_E
    dark: float = DEFAULT_EVE_DARK

    def to_eve(self) -> EveDetectorModel:
        return EveDetectorModel(eta_e=self.eta_e, dark=self.dark)


class ThresholdLimit(_Section):
    eta_min: float
    delta_min: float


def _paper_limit(pol: str):
    eta_min, delta_min = PAPER_THRESHOLDS[pol]
    return lambda: ThresholdLimit(eta_min=eta_min, delta_min=delta_min)


class ThresholdsSection(_Section):
    H: ThresholdLimit = Field(default_factory=_paper_limit("H"))
    V: ThresholdLimit = Field(default_factory=_paper_limit("V"))
    D: ThresholdLimit = Field(default_factory=_paper_limit("D"))
    A: ThresholdLimit = Field(default_factory=_paper_limit("A"))

    def to_thresholds(self) -> SearchThresholds:
        return SearchThresholds(
            {p: (getattr(self, p.value).eta_min, getattr(self, p.value).delta_min) for p in POLARIZATIONS}
        )


class OptimizerSection(_Section):
    mode: OptimizerMode = OptimizerMode.PER_POLARIZATION_RATES
    mu_min: float = DEFAULT_MU_MIN
    mu_max: float = DEFAULT_MU_MAX
    constraint_tol: float = DEFAULT_CONSTRAINT_TOL
    objective_tol: float = DEFAULT_OBJECTIVE_TOL
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    restarts: int = DEFAULT_RESTARTS

    def to_config(self, seed: int, mode: Optional[OptimizerMode] = None) -> OptimizerConfig:
        return OptimizerConfig(
            mode=mode or self.mode,
            mu_min=self.mu_min,
            mu_max=self.mu_max,
            constraint_tol=self.constraint_tol,
            objective_tol=self.objective_tol,
            max_iterations=self.max_iterations,
            restarts=self.restarts,
            seed=seed,
        )


class ScanSection(_Section):
    preset: ScanPresetName = "paper-like"
    path: Optional[str] = None


class MonteCarloSection(_Section):
    n_pulses: int = DEFAULT_N_PULSES
    scenarios: List[Scenario] = Field(
        default_factory=lambda: [Scenario.BASELINE_NO_EVE, Scenario.FAKED_STATE_ATTACK]
    )
    loss_db: Optional[float] = None  # None -> первая точка сетки link.loss_db

    @field_validator("n_pulses")
    @classmethod
    def validate_n_pulses(cls, v: int) -> int:
        if v < 1:
            raise ValueError("n_pulses должен быть >= 1")
        return v


class RunConfig(_Section):
    seed: int = DEFAULT_SEED
    receiver: ReceiverSection = Field(default_factory=ReceiverSection)
    link: LinkSection = Field(default_factory=LinkSection)
    eve: EveSection = Field(default_factory=EveSection)
    thresholds: ThresholdsSection = Field(default_factory=ThresholdsSection)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    scan: ScanSection = Field(default_factory=ScanSection)
    montecarlo: MonteCarloSection = Field(default_factory=MonteCarloSection)

    @model_validator(mode="after")
    def validate_domain(self) -> "RunConfig":
        # Доменные dataclass-ы бросают DomainError (ValueError) при нарушении инвариантов
        self.receiver.to_receiver()
        for loss in self.link.loss_grid:
            self.link.to_link(loss)
        self.eve.to_eve()
        self.thresholds.to_thresholds()
        self.optimizer.to_config(self.seed)
        return self

    @property
    def mc_loss_db(self) -> float:
        if self.montecarlo.loss_db is not None:
            return self.montecarlo.loss_db
        return self.link.loss_grid[0]

    def with_overrides(self, **changes) -> "RunConfig":
        """Копия с заменёнными полями верхнего уровня или секций ('optimizer.mode')."""
        data = self.model_dump(mode="json")
        for key, value in changes.items():
            section, _, name = key.partition("__")
            if name:
                data[section][name] = value
            else:
                data[section] = value
        return RunConfig.model_validate(data)

    def resolved_dict(self) -> dict:
        return self.model_dump(mode="json")

    def resolved_json(self) -> str:
        return canonical_json(self.resolved_dict())


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """
    Загружает конфигурацию запуска из JSON-файла.

    Args:
        path: путь к файлу; None — значения по умолчанию

    Raises:
        ConfigError: файл не найден, не JSON, неизвестные ключи или недопустимые значения
    """
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"файл конфигурации не найден: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"{path}: некорректный JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: ожидался JSON-объект")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as e:
        errors = "; ".join(
            f"{'.'.join(str(x) for x in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"{path}: {errors}") from None
    logger.info(f"📥 Конфигурация загружена: {path}")
    return cfg
