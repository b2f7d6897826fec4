# scanmap.py
# Угловые карты эффективности: нормировка, синтез, поиск углов атаки, диафрагма.
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import (
    DEFAULT_PINHOLE_EDGE_URAD, RAW_BACKGROUND_CPS, RAW_PEAK_RATE_CPS,
    SCAN_HALF_RANGE_MRAD, SCAN_POINTS,
)
from shared.metrics import QUALIFYING_CELLS
from shared.models import (
    POLARIZATIONS, AttackPoint, ChannelEffVector, DomainError, EfficiencyMap,
    Polarization, RawScan, ScanGrid, SearchThresholds, normalize_channels,
)

logger = logging.getLogger(__name__)


# === Пресеты синтетических сканов ===

@dataclass(frozen=True)
class ChannelProfile:
    """Центральный пик канала: смещение центра (мрад), ширина и уровень пола шума."""
    center: Tuple[float, float]
    sigma: float
    floor: float = 0.0
    amplitude: float = 1.0


@dataclass(frozen=True)
class Lobe:
    """Вторичный пик (отражение от грани PBS), только в своём канале."""
    channel: int
    offset_steps: Tuple[int, int]  # смещение от центра сетки в шагах
    amplitude: float
    sigma: float


@dataclass(frozen=True)
class RingFeature:
    radius: float
    width: float
    amplitudes: Tuple[float, float, float, float]
    phase: float = 0.0


@dataclass(frozen=True)
class ScanPreset:
    name: str
    channels: Tuple[ChannelProfile, ChannelProfile, ChannelProfile, ChannelProfile]
    lobes: Tuple[Lobe, ...] = ()
    rings: Tuple[RingFeature, ...] = ()
    ring_modulation: float = 0.0  # общая азимутальная модуляция колец
    floor_jitter: float = 0.0  # относительный разброс пола по ячейкам
    noise: float = 0.0  # относительный мультипликативный шум
    half_range: float = SCAN_HALF_RANGE_MRAD
    n_points: int = SCAN_POINTS

    def __post_init__(self):
        if len(self.channels) != 4:
            raise DomainError(f"пресет {self.name}: нужно 4 профиля каналов")
        if self.half_range <= 0 or self.n_points < 2:
            raise DomainError(f"пресет {self.name}: некорректная сетка")
        if any(c.sigma <= 0 for c in self.channels) or any(l.sigma <= 0 for l in self.lobes):
            raise DomainError(f"пресет {self.name}: ширины пиков должны быть > 0")
        if not (0 <= self.floor_jitter < 1) or self.noise < 0 or not (0 <= self.ring_modulation <= 1):
            raise DomainError(f"пресет {self.name}: параметры шума вне допустимых границ")

    @property
    def grid(self) -> ScanGrid:
        return ScanGrid(
            -self.half_range, self.half_range, -self.half_range, self.half_range,
            self.n_points, self.n_points,
        )


PRESETS: Dict[str, ScanPreset] = {
    # Откалиброван по статистике углов атаки: лепестки H, V, D, A проходят
    # пороги поиска, кольца и пол шума не проходят
    "paper-like": ScanPreset(
        name="paper-like",
        channels=(
            ChannelProfile(center=(0.02, -0.01), sigma=0.24, floor=2.0e-4),
            ChannelProfile(center=(-0.015, 0.02), sigma=0.21, floor=2.5e-4),
            ChannelProfile(center=(0.01, 0.025), sigma=0.25, floor=1.8e-4),
            ChannelProfile(center=(-0.02, -0.015), sigma=0.22, floor=2.2e-4),
        ),
        lobes=(
            Lobe(channel=0, offset_steps=(26, 12), amplitude=0.38, sigma=0.06),
            Lobe(channel=1, offset_steps=(-20, 22), amplitude=0.012, sigma=0.06),
            Lobe(channel=2, offset_steps=(-24, -16), amplitude=0.55, sigma=0.06),
            Lobe(channel=3, offset_steps=(18, -24), amplitude=0.16, sigma=0.06),
        ),
        rings=(
            RingFeature(radius=1.45, width=0.04, amplitudes=(0.015, 0.012, 0.018, 0.014), phase=0.6),
            RingFeature(radius=1.70, width=0.04, amplitudes=(0.013, 0.016, 0.012, 0.017), phase=2.2),
        ),
        ring_modulation=0.5,
        floor_jitter=0.3,
        noise=0.02,
    ),
    "zero-feature": ScanPreset(
        name="zero-feature",
        channels=tuple(ChannelProfile(center=(0.0, 0.0), sigma=0.24) for _ in range(4)),
    ),
}


def get_preset(preset: Union[str, ScanPreset]) -> ScanPreset:
    if isinstance(preset, ScanPreset):
        return preset
    try:
        return PRESETS[preset]
    except KeyError:
        raise DomainError(
            f"неизвестный пресет '{preset}', доступны: {', '.join(sorted(PRESETS))}"
        ) from None


def _gaussian(phi: np.ndarray, theta: np.ndarray, center: Tuple[float, float], sigma: float) -> np.ndarray:
    d2 = (phi - center[0]) ** 2 + (theta - center[1]) ** 2
    return np.exp(-d2 / (2.0 * sigma ** 2))


def synthesize_scan(preset: Union[str, ScanPreset], seed: int) -> EfficiencyMap:
    """
    Синтетическая нормированная карта: центральный пик, лепестки, кольца и пол шума.

    Детерминирована при заданных (preset, seed); генератор PCG64.
    """
    preset = get_preset(preset)
    grid = preset.grid
    phi, theta = grid.mesh()
    step = (grid.phi_max - grid.phi_min) / (grid.n_phi - 1)
    radius = np.hypot(phi, theta)
    azimuth = np.arctan2(theta, phi)

    signal = np.stack([
        prof.amplitude * _gaussian(phi, theta, prof.center, prof.sigma) for prof in preset.channels
    ])
    for lobe in preset.lobes:
        center = (lobe.offset_steps[0] * step, lobe.offset_steps[1] * step)
        signal[lobe.channel] += lobe.amplitude * _gaussian(phi, theta, center, lobe.sigma)
    for ring in preset.rings:
        profile = np.exp(-0.5 * ((radius - ring.radius) / ring.width) ** 2)
        profile = profile * (1.0 + preset.ring_modulation * np.cos(azimuth - ring.phase))
        for ch, amplitude in enumerate(ring.amplitudes):
            signal[ch] += amplitude * profile

    rng = np.random.Generator(np.random.PCG64(seed))
    floors = np.array([prof.floor for prof in preset.channels])[:, None, None]
    jitter = rng.uniform(-1.0, 1.0, size=signal.shape)
    noise = rng.standard_normal(size=signal.shape)
    values = (signal + floors * (1.0 + preset.floor_jitter * jitter)) * (1.0 + preset.noise * noise)

    emap = EfficiencyMap(grid, normalize_channels(values))
    logger.info(f"✅ Синтезирован скан '{preset.name}' (seed={seed}): {grid.n_phi}x{grid.n_theta}")
    return emap


def simulate_raw_scan(
    emap: EfficiencyMap,
    seed: int,
    peak_rate_cps: float = RAW_PEAK_RATE_CPS,
    background_cps: Sequence[float] = RAW_BACKGROUND_CPS,
    t_int_s: float = 1.0,
) -> RawScan:
    """
    Измеренный скан: пуассоновский счёт peak * eta + фон за время интегрирования,
    пересчитанный в отсчёты/с.
    """
    if peak_rate_cps <= 0 or t_int_s <= 0:
        raise DomainError("скорость счёта и время интегрирования должны быть > 0")
    background = np.asarray(background_cps, dtype=float)
    if background.shape != (4,) or np.any(background < 0):
        raise DomainError("нужно 4 неотрицательных фона")
    rng = np.random.Generator(np.random.PCG64(seed))
    expected = (peak_rate_cps * emap.eta + background[:, None, None]) * t_int_s
    counts = rng.poisson(expected) / t_int_s
    return RawScan(emap.grid, counts, tuple(background), t_int_s)


def normalize_scan(raw: RawScan) -> EfficiencyMap:
    """Вычитает фон каждого детектора и делит на максимум по сетке."""
    signal = raw.counts - np.asarray(raw.background)[:, None, None]
    emap = EfficiencyMap(raw.grid, normalize_channels(np.clip(signal, 0.0, None)))
    dark = [ch for ch in range(4) if not np.any(emap.eta[ch] > 0)]
    if dark:
        logger.warning(f"⚠️ Каналы без сигнала над фоном: {dark}")
    return emap


# === Поиск углов атаки ===

def mismatch_ratios(eta: np.ndarray) -> np.ndarray:
    """
    delta_j = eta_j / max(eta_nc0, eta_nc1) для каждой поляризации, форма (4, ...).

    Нулевой знаменатель даёт inf; нулевой числитель даёт 0.
    """
    eta = np.asarray(eta, dtype=float)
    deltas = np.empty_like(eta)
    for pol in POLARIZATIONS:
        j = pol.index
        o0, o1 = pol.basis().other().channel_indices
        denom = np.maximum(eta[o0], eta[o1])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(denom > 0, eta[j] / np.where(denom > 0, denom, 1.0), math.inf)
        deltas[j] = np.where(eta[j] > 0, ratio, 0.0)
    return deltas


@dataclass(frozen=True)
class AttackSearchResult:
    thresholds: SearchThresholds
    points: Dict[Polarization, Tuple[AttackPoint, ...]] = field(default_factory=dict)

    def qualifying(self, pol: Polarization) -> Tuple[AttackPoint, ...]:
        return self.points.get(Polarization(pol), ())

    def count(self, pol: Polarization) -> int:
        return len(self.qualifying(pol))

    @property
    def best(self) -> Dict[Polarization, Optional[AttackPoint]]:
        return {p: (self.points[p][0] if self.points.get(p) else None) for p in POLARIZATIONS}

    @property
    def is_empty(self) -> bool:
        return all(self.count(p) == 0 for p in POLARIZATIONS)

    @property
    def is_complete(self) -> bool:
        """Для всех четырёх поляризаций есть хотя бы одна точка."""
        return all(self.count(p) > 0 for p in POLARIZATIONS)

    def all_points(self) -> List[AttackPoint]:
        return [point for p in POLARIZATIONS for point in self.qualifying(p)]

    def summary_lines(self) -> List[str]:
        if self.is_empty:
            return ["no attack points"]
        lines = []
        for pol in POLARIZATIONS:
            best = self.best[pol]
            if best is None:
                lines.append(f"{pol.value}: no qualifying points")
                continue
            lines.append(
                f"{pol.value}: {self.count(pol)} points, best at "
                f"({best.phi_mrad:.4f}, {best.theta_mrad:.4f}) mrad, "
                f"eta={best.eta_target:.4g}, delta={best.delta:.4g}"
            )
        return lines


def find_attack_points(emap: EfficiencyMap, thresholds: SearchThresholds) -> AttackSearchResult:
    """
    Ячейки, где eta_j >= eta_min(j) и delta_j >= delta_min(j), по убыванию качества.

    Порядок: больше eta_j, затем больше delta_j, затем порядок строк сетки.
    Карта перенормируется, поэтому общий множитель каналов не влияет на результат.
    """
    eta = normalize_channels(emap.eta)
    deltas = mismatch_ratios(eta)
    phis, thetas = emap.grid.phi_values, emap.grid.theta_values
    points: Dict[Polarization, Tuple[AttackPoint, ...]] = {}

    for pol in POLARIZATIONS:
        j = pol.index
        target = eta[j].ravel()
        delta = deltas[j].ravel()
        mask = (target >= thresholds.eta_min(pol)) & (delta >= thresholds.delta_min(pol))
        flat = np.flatnonzero(mask)
        # lexsort: последний ключ главный
        order = flat[np.lexsort((flat, -delta[flat], -target[flat]))]
        ranked = []
        for idx in order:
            i_phi, i_theta = divmod(int(idx), emap.grid.n_theta)
            ranked.append(AttackPoint(
                polarization=pol,
                phi_mrad=float(phis[i_phi]),
                theta_mrad=float(thetas[i_theta]),
                efficiencies=ChannelEffVector.from_sequence(eta[:, i_phi, i_theta]),
                delta=float(delta[idx]),
                i_phi=i_phi,
                i_theta=i_theta,
            ))
        points[pol] = tuple(ranked)
        QUALIFYING_CELLS.labels(polarization=pol.value).set(len(ranked))

    result = AttackSearchResult(thresholds=thresholds, points=points)
    counts = ", ".join(f"{p.value}={result.count(p)}" for p in POLARIZATIONS)
    logger.info(f"🔍 Поиск углов атаки: {counts}")
    return result


# === Контрмера: диафрагма в фокальной плоскости ===

def pinhole_window(emap: EfficiencyMap, fov_urad: float, edge_urad: float = DEFAULT_PINHOLE_EDGE_URAD) -> np.ndarray:
    """
    Окно пропускания: 1 внутри радиуса fov/2, гауссов спад с масштабом edge снаружи.

    Поле зрения, перекрывающее весь диапазон сканирования по обеим осям,
    даёт окно из единиц: такая диафрагма ничего не отсекает.
    """
    if not fov_urad > 0:
        raise DomainError(f"fov={fov_urad} мкрад должно быть > 0")
    if not edge_urad > 0:
        raise DomainError(f"edge={edge_urad} мкрад должно быть > 0")
    grid = emap.grid
    phi, theta = grid.mesh()
    radius_urad = np.hypot(phi, theta) * 1e3
    half_span_urad = 1e3 * max(abs(grid.phi_min), abs(grid.phi_max), abs(grid.theta_min), abs(grid.theta_max))
    if fov_urad / 2.0 >= half_span_urad:
        return np.ones_like(radius_urad)
    outside = np.clip(radius_urad - fov_urad / 2.0, 0.0, None)
    return np.exp(-0.5 * (outside / edge_urad) ** 2)


def pinhole_filter(
    emap: EfficiencyMap, fov_urad: float, edge_urad: float = DEFAULT_PINHOLE_EDGE_URAD
) -> EfficiencyMap:
    """Умножает все каналы на окно диафрагмы и заново нормирует каждый канал."""
    window = pinhole_window(emap, fov_urad, edge_urad)
    filtered = EfficiencyMap(emap.grid, normalize_channels(emap.eta * window[None, :, :]))
    logger.info(f"🔬 Диафрагма: поле зрения {fov_urad:g} мкрад, край {edge_urad:g} мкрад")
    return filtered
