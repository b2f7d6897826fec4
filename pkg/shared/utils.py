# shared/utils.py

import dataclasses
import hashlib
import json
import math
import re
from typing import Any, Dict, Iterable, List, Mapping

from config import RECEIVER_FOCAL_LENGTH_MM
from shared.models import DomainError

_HEADER_FIELD = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)=(\S+)")


def fov_from_pinhole(diameter_um: float, focal_length_mm: float = RECEIVER_FOCAL_LENGTH_MM) -> float:
    """
    Поле зрения (полный угол, мкрад) диафрагмы в фокальной плоскости объектива.
    25 мкм при f = 250 мм дают 100 мкрад.
    """
    if diameter_um <= 0 or focal_length_mm <= 0:
        raise DomainError("диаметр и фокусное расстояние должны быть положительны")
    return diameter_um / focal_length_mm * 1e3


def format_float(value: float) -> str:
    """Фиксированное представление для CSV: одинаковый вход -> одинаковые байты."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.12g}"


def parse_float(token: str) -> float:
    value = float(token.strip())
    if math.isnan(value):
        raise ValueError("NaN недопустим")
    return value


def parse_header_fields(lines: Iterable[str]) -> Dict[str, str]:
    """Собирает пары key=value из строк-комментариев вида '# a=1 b=2'."""
    fields: Dict[str, str] = {}
    for line in lines:
        body = line.lstrip("#").strip()
        for key, value in _HEADER_FIELD.findall(body):
            fields[key] = value
    return fields


def header_line(fields: Mapping[str, Any]) -> str:
    return "# " + " ".join(f"{k}={v}" for k, v in fields.items())


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def run_fingerprint(data: Any) -> str:
    """Короткий хэш конфигурации для заголовков выходных файлов."""
    return hashlib.md5(canonical_json(data).encode("utf-8")).hexdigest()[:12]


def _plain(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


def model_fingerprint(*parts: Any) -> str:
    """Хэш моделей (линия, приёмник, стратегия Евы), по которому сверяются статистика и аналитика."""
    data = [dataclasses.asdict(p) if dataclasses.is_dataclass(p) else p for p in parts]
    payload = json.dumps(data, sort_keys=True, separators=(",", ":"), default=_plain)
    return hashlib.md5(payload.encode("utf-8")).hexdigest()[:12]


def provenance_header(command: str, config: Mapping[str, Any], seed: int) -> List[str]:
    """Строки заголовка с полной конфигурацией запуска."""
    return [
        header_line({"command": command, "seed": seed, "run_hash": run_fingerprint(config)}),
        f"# config={canonical_json(config)}",
    ]
