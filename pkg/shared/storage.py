# shared/storage.py
import csv
import logging
import os
from contextlib import contextmanager
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from shared.models import (
    CHANNELS, AttackPoint, ComparisonRecord, DomainError,
    EfficiencyMap, RawScan, ScanFormatError, ScanGrid, SweepResult,
)
from shared.utils import format_float, header_line, parse_float, parse_header_fields

logger = logging.getLogger(__name__)

MAP_COLUMNS = ("phi_mrad", "theta_mrad", "eta_h", "eta_v", "eta_d", "eta_a")
RAW_COLUMNS = ("phi_mrad", "theta_mrad", "cnt_h", "cnt_v", "cnt_d", "cnt_a")
REPORT_COLUMNS = ("pol", "phi_mrad", "theta_mrad", "eta_h", "eta_v", "eta_d", "eta_a", "delta")
SWEEP_COLUMNS = (
    "loss_db", "R_ab", "QBER_ab", "R_e", "QBER_e",
    "mu_H", "mu_V", "mu_D", "mu_A", "residual", "converged",
)
COMPARISON_COLUMNS = ("quantity", "analytic", "estimate", "stderr", "z")
INSUFFICIENT_DATA = "insufficient data"

# Допуск на координаты ячеек при чтении (мрад)
_COORD_TOL = 1e-6


def ensure_parent_directory(path: str):
    """
    Гарантирует существование директории для выходного файла.
    Создаёт директорию, если её нет.
    """
    parent = os.path.dirname(os.path.abspath(path))
    if parent and not os.path.exists(parent):
        try:
            os.makedirs(parent, exist_ok=True)
            logger.info(f"✅ Создана директория: {parent}")
        except OSError as e:
            logger.error(f"❌ Ошибка создания директории {parent}: {e}")
            raise


@contextmanager
def open_output(path: str):
    """
    Контекстный менеджер для записи CSV.
    Перевод строки фиксирован, чтобы файлы совпадали побайтно на любой ОС.
    """
    ensure_parent_directory(path)
    handle = None
    try:
        handle = open(path, "w", encoding="utf-8", newline="\n")
        yield handle
    except OSError as e:
        logger.error(f"❌ Ошибка записи {path}: {e}")
        raise
    finally:
        if handle:
            handle.close()


def write_table(
    path: str,
    columns: Sequence[str],
    rows: Iterable[Sequence[str]],
    header_lines: Sequence[str] = (),
) -> int:
    """
    Записывает таблицу: строки-комментарии, строка с именами столбцов, данные.

    Returns:
        Количество записанных строк данных
    """
    count = 0
    with open_output(path) as f:
        for line in header_lines:
            f.write(line if line.startswith("#") else f"# {line}")
            f.write("\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)
            count += 1
    logger.info(f"📤 {path}: записано строк {count}")
    return count


def read_table(
    path: str, columns: Optional[Sequence[str]] = None
) -> Tuple[Dict[str, str], List[Tuple[int, Dict[str, str]]]]:
    """
    Читает CSV с заголовком из комментариев.

    Args:
        path: путь к файлу
        columns: ожидаемые имена столбцов (None — любые)

    Returns:
        (поля key=value из комментариев, [(номер строки, словарь значений), ...])

    Raises:
        ScanFormatError: с номером строки при любой ошибке формата
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            lines = f.read().splitlines()
    except UnicodeDecodeError as e:
        raise ScanFormatError(1, f"файл не в UTF-8: {e}") from e

    comments: List[str] = []
    numbered: List[Tuple[int, str]] = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if numbered:
                raise ScanFormatError(line_no, "комментарий после начала данных")
            comments.append(line)
            continue
        numbered.append((line_no, line))
    if not numbered:
        raise ScanFormatError(len(lines) + 1, "нет строки с именами столбцов")

    parsed = csv.reader(line for _, line in numbered)
    header_no, header = numbered[0]
    names = [cell.strip() for cell in next(parsed)]
    if columns is not None and tuple(names) != tuple(columns):
        raise ScanFormatError(header_no, f"ожидались столбцы {','.join(columns)}, получено {header}")

    rows: List[Tuple[int, Dict[str, str]]] = []
    for (line_no, _), record in zip(numbered[1:], parsed):
        cells = [cell.strip() for cell in record]
        if len(cells) != len(names):
            raise ScanFormatError(line_no, f"ожидалось {len(names)} значений, получено {len(cells)}")
        rows.append((line_no, dict(zip(names, cells))))
    return parse_header_fields(comments), rows


def _float_cell(line_no: int, row: Dict[str, str], key: str) -> float:
    try:
        return parse_float(row[key])
    except ValueError:
        raise ScanFormatError(line_no, f"{key}: не число '{row[key]}'") from None


def _grid_from_fields(fields: Dict[str, str]) -> ScanGrid:
    try:
        return ScanGrid(
            phi_min=float(fields["phi_min_mrad"]),
            phi_max=float(fields["phi_max_mrad"]),
            theta_min=float(fields["theta_min_mrad"]),
            theta_max=float(fields["theta_max_mrad"]),
            n_phi=int(fields["n_phi"]),
            n_theta=int(fields["n_theta"]),
        )
    except KeyError as e:
        raise ScanFormatError(1, f"в заголовке нет поля {e.args[0]}") from None
    except (ValueError, DomainError) as e:
        raise ScanFormatError(1, f"некорректная сетка в заголовке: {e}") from None


def _read_grid_values(
    path: str, columns: Sequence[str], upper: float = float("inf")
) -> Tuple[Dict[str, str], ScanGrid, np.ndarray]:
    fields, rows = read_table(path, columns)
    grid = _grid_from_fields(fields)
    expected = grid.n_phi * grid.n_theta
    if len(rows) != expected:
        last = rows[-1][0] + 1 if rows else 1
        raise ScanFormatError(last, f"ожидалось {expected} строк данных, получено {len(rows)}")

    phis, thetas = grid.phi_values, grid.theta_values
    values = np.empty((4,) + grid.shape)
    for k, (line_no, row) in enumerate(rows):
        i_phi, i_theta = divmod(k, grid.n_theta)
        phi = _float_cell(line_no, row, columns[0])
        theta = _float_cell(line_no, row, columns[1])
        if abs(phi - phis[i_phi]) > _COORD_TOL or abs(theta - thetas[i_theta]) > _COORD_TOL:
            raise ScanFormatError(
                line_no,
                f"координаты ({phi}, {theta}) не совпадают с сеткой "
                f"({phis[i_phi]:.6g}, {thetas[i_theta]:.6g})",
            )
        for ch, key in enumerate(columns[2:]):
            values[ch, i_phi, i_theta] = _float_cell(line_no, row, key)
            if values[ch, i_phi, i_theta] < 0:
                raise ScanFormatError(line_no, f"{key} < 0")
            if values[ch, i_phi, i_theta] > upper:
                raise ScanFormatError(line_no, f"{key} > {upper:g}")
    return fields, grid, values


def _grid_rows(grid: ScanGrid, values: np.ndarray) -> Iterable[List[str]]:
    phis, thetas = grid.phi_values, grid.theta_values
    for i_phi in range(grid.n_phi):
        for i_theta in range(grid.n_theta):
            yield [format_float(phis[i_phi]), format_float(thetas[i_theta])] + [
                format_float(values[ch, i_phi, i_theta]) for ch in range(4)
            ]


def write_efficiency_map(path: str, emap: EfficiencyMap, header_lines: Sequence[str] = ()) -> int:
    lines = list(header_lines) + [header_line(emap.grid.header_fields())]
    return write_table(path, MAP_COLUMNS, _grid_rows(emap.grid, emap.eta), lines)


def read_efficiency_map(path: str) -> EfficiencyMap:
    """Загружает нормированную карту; значения вне [0, 1] считаются ошибкой формата."""
    _, grid, values = _read_grid_values(path, MAP_COLUMNS, upper=1 + 1e-9)
    emap = EfficiencyMap(grid, values)
    logger.info(f"📥 Карта {path}: {grid.n_phi}x{grid.n_theta}")
    return emap


def write_raw_scan(path: str, raw: RawScan, header_lines: Sequence[str] = ()) -> int:
    extra = {f"bg_{ch}": repr(float(bg)) for ch, bg in zip(CHANNELS, raw.background)}
    extra["t_int_s"] = repr(float(raw.t_int_s))
    lines = list(header_lines) + [header_line(raw.grid.header_fields()), header_line(extra)]
    return write_table(path, RAW_COLUMNS, _grid_rows(raw.grid, raw.counts), lines)


def read_raw_scan(path: str) -> RawScan:
    fields, grid, values = _read_grid_values(path, RAW_COLUMNS)
    try:
        background = tuple(float(fields[f"bg_{ch}"]) for ch in CHANNELS)
        t_int = float(fields.get("t_int_s", "1.0"))
    except KeyError as e:
        raise ScanFormatError(1, f"в заголовке нет поля {e.args[0]}") from None
    except ValueError as e:
        raise ScanFormatError(1, f"некорректный фон: {e}") from None
    try:
        raw = RawScan(grid, values, background, t_int)
    except DomainError as e:
        raise ScanFormatError(1, str(e)) from None
    logger.info(f"📥 Сырой скан {path}: {grid.n_phi}x{grid.n_theta}, t_int={t_int:g} с")
    return raw


def write_attack_report(
    path: str, points: Iterable[AttackPoint], header_lines: Sequence[str] = ()
) -> int:
    """Точки атаки в порядке ранжирования; δ = inf для тёмной несовместимой пары."""
    rows = (
        [p.polarization.value, format_float(p.phi_mrad), format_float(p.theta_mrad)]
        + [format_float(v) for v in p.efficiencies.as_tuple()]
        + [format_float(p.delta)]
        for p in points
    )
    return write_table(path, REPORT_COLUMNS, rows, header_lines)


def write_sweep(path: str, results: Sequence[SweepResult], header_lines: Sequence[str] = ()) -> int:
    lines = list(header_lines)
    # Статусы неудачных точек идут в заголовок: набор столбцов фиксирован
    for r in results:
        if r.status != "ok":
            lines.append(f"# point {format_float(r.loss_db)} dB: {r.status}")

    def row(r: SweepResult) -> List[str]:
        mu = r.mu if r.mu is not None else (float("nan"),) * 4
        return [
            format_float(r.loss_db), format_float(r.rate_ab), format_float(r.qber_ab),
            format_float(r.rate_e), format_float(r.qber_e),
            *(format_float(m) for m in mu),
            format_float(r.residual), "true" if r.converged else "false",
        ]

    return write_table(path, SWEEP_COLUMNS, (row(r) for r in results), lines)


def write_comparison(path: str, record: ComparisonRecord, header_lines: Sequence[str] = ()) -> int:
    rows = (
        [
            row.quantity, format_float(row.analytic), format_float(row.estimate),
            format_float(row.stderr), INSUFFICIENT_DATA if row.z is None else format_float(row.z),
        ]
        for row in record.rows
    )
    return write_table(path, COMPARISON_COLUMNS, rows, header_lines)
