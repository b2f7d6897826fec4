# shared/metrics.py
import logging

from prometheus_client import CollectorRegistry, Counter, Gauge, write_to_textfile

from shared.storage import ensure_parent_directory

logger = logging.getLogger(__name__)

# Отдельный реестр: в выгрузку попадают только метрики лаборатории
REGISTRY = CollectorRegistry()

# === Метрики Prometheus ===
OBJECTIVE_EVALUATIONS = Counter(
    'mismatch_lab_objective_evaluations_total',
    'Total evaluations of the attack rate model',
    registry=REGISTRY,
)
OPTIMIZER_RUNS = Counter(
    'mismatch_lab_optimizer_runs_total',
    'Optimizer runs by mode and outcome',
    ['mode', 'outcome'],
    registry=REGISTRY,
)
PULSES_SIMULATED = Counter(
    'mismatch_lab_pulses_simulated_total',
    'Pulses simulated by the Monte Carlo oracle',
    ['scenario'],
    registry=REGISTRY,
)
SWEEP_POINTS = Counter(
    'mismatch_lab_sweep_points_total',
    'Loss sweep points by status',
    ['status'],
    registry=REGISTRY,
)
QUALIFYING_CELLS = Gauge(
    'mismatch_lab_qualifying_cells',
    'Grid cells passing the attack-point thresholds',
    ['polarization'],
    registry=REGISTRY,
)


def write_metrics(path: str):
    """Сохраняет реестр в текстовом формате Prometheus."""
    ensure_parent_directory(path)
    write_to_textfile(path, REGISTRY)
    logger.info(f"📈 Метрики записаны в {path}")
