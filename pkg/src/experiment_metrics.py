"""
Функции для расчета метрик отслеживания силы и формирования таблиц результатов.
"""
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import FormatError, InputError
from src.utils.file_utils import write_file
from src.utils.logging_utils import setup_logger

# Настраиваем логгер
logger = setup_logger("experiment_metrics")

FLOAT_FORMAT = "%.17g"
_RMSE_COLUMN = re.compile(r"^rmse_(?P<method>[a-z0-9]+)_(?P<stat>mean|std)$")
_ETA_COLUMN = re.compile(r"^eta_(?P<candidate>[a-z0-9]+)_vs_(?P<baseline>[a-z0-9]+)$")


def rmse(reference: Sequence[float], actual: Sequence[float]) -> float:
    """
    Среднеквадратичная ошибка sqrt(mean((reference - actual)^2)).

    Raises:
        InputError: ряды пустые или разной длины
    """
    reference = np.asarray(reference, dtype=float).ravel()
    actual = np.asarray(actual, dtype=float).ravel()
    if reference.size == 0:
        raise InputError("RMSE не определена для пустых рядов")
    if reference.size != actual.size:
        raise InputError(f"Длины рядов различаются: {reference.size} и {actual.size}")
    return float(np.sqrt(np.mean((reference - actual) ** 2)))


def eta(baseline_rmse: float, candidate_rmse: float) -> float:
    """Коэффициент улучшения rmse_baseline / rmse_candidate (> 1 - кандидат лучше)."""
    if candidate_rmse == 0:
        return math.inf if baseline_rmse > 0 else math.nan
    return baseline_rmse / candidate_rmse


@dataclass
class MetricsRow:
    """
    Строка таблицы результатов для одной скорости.

    Attributes:
        velocity: Скорость, м/с
        rmse_mean: Средняя RMSE по траекториям для каждого метода, Н
        rmse_std: Стандартное отклонение RMSE по траекториям, Н
        eta: Коэффициенты улучшения {(кандидат, база): значение}
    """
    velocity: float
    rmse_mean: Dict[str, float] = field(default_factory=dict)
    rmse_std: Dict[str, float] = field(default_factory=dict)
    eta: Dict[Tuple[str, str], float] = field(default_factory=dict)

    @property
    def methods(self) -> List[str]:
        return list(self.rmse_mean)

    def columns(self) -> List[str]:
        names = ["velocity"]
        for method in self.methods:
            names += [f"rmse_{method}_mean", f"rmse_{method}_std"]
        names += [f"eta_{candidate}_vs_{baseline}" for candidate, baseline in self.eta]
        return names

    def values(self) -> List[float]:
        values = [self.velocity]
        for method in self.methods:
            values += [self.rmse_mean[method], self.rmse_std[method]]
        values += list(self.eta.values())
        return values


def aggregate_by_velocity(results: Iterable[Dict[str, object]], methods: Sequence[str],
                          eta_pairs: Sequence[Tuple[str, str]]) -> List[MetricsRow]:
    """
    Сводка RMSE отдельных траекторий по скоростям.

    Args:
        results: Записи {"velocity": v, "method": m, "rmse": e}
        methods: Порядок методов в таблице
        eta_pairs: Пары (кандидат, база) для коэффициентов улучшения

    Returns:
        Строки по возрастанию скорости; std выборочное (0 для одной траектории)
    """
    grouped: Dict[float, Dict[str, List[float]]] = defaultdict(lambda: defaultdict(list))
    for record in results:
        grouped[float(record["velocity"])][str(record["method"])].append(float(record["rmse"]))

    rows = []
    for velocity in sorted(grouped):
        by_method = grouped[velocity]
        missing = [m for m in methods if not by_method.get(m)]
        if missing:
            raise InputError(f"Для скорости {velocity} нет результатов методов {missing}")
        row = MetricsRow(velocity=velocity)
        for method in methods:
            values = np.asarray(by_method[method])
            row.rmse_mean[method] = float(np.mean(values))
            row.rmse_std[method] = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
        for candidate, baseline in eta_pairs:
            row.eta[(candidate, baseline)] = eta(row.rmse_mean[baseline], row.rmse_mean[candidate])
        rows.append(row)
    return rows


def metrics_frame(rows: Sequence[MetricsRow]) -> pd.DataFrame:
    """Таблица с детерминированным порядком колонок."""
    if not rows:
        raise InputError("Нет строк для отчёта")
    columns = rows[0].columns()
    for row in rows[1:]:
        if row.columns() != columns:
            raise InputError("Строки таблицы имеют разный набор колонок")
    return pd.DataFrame([row.values() for row in rows], columns=columns)


def _format(value: float) -> str:
    return FLOAT_FORMAT % value


def format_text_table(rows: Sequence[MetricsRow]) -> str:
    """Текстовая таблица; значения записаны так же, как в CSV."""
    frame = metrics_frame(rows)
    cells = [list(frame.columns)] + [[_format(value) for value in record] for record in frame.to_numpy()]
    widths = [max(len(line[i]) for line in cells) for i in range(len(frame.columns))]
    lines = []
    for index, line in enumerate(cells):
        lines.append("  ".join(cell.rjust(width) for cell, width in zip(line, widths)))
        if index == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def report(rows: Sequence[MetricsRow], path_prefix: Union[str, Path],
           formats: Sequence[str] = ("csv", "text")) -> List[Path]:
    """
    Запись таблицы результатов.

    Args:
        rows: Строки таблицы
        path_prefix: Путь без расширения; создаются <prefix>.csv и/или <prefix>.txt
        formats: csv и/или text

    Returns:
        Пути записанных файлов

    Raises:
        InputError: пустая таблица или неизвестный формат
    """
    frame = metrics_frame(rows)
    unknown = set(formats) - {"csv", "text"}
    if unknown:
        raise InputError(f"Неизвестные форматы отчёта: {sorted(unknown)}")

    path_prefix = Path(path_prefix)
    written = []
    if "csv" in formats:
        body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        written.append(write_file(path_prefix.with_suffix(".csv"), body))
    if "text" in formats:
        written.append(write_file(path_prefix.with_suffix(".txt"), format_text_table(rows)))
    for path in written:
        logger.info(f"Отчёт записан: {path}")
    return written


def read_metrics_csv(path: Union[str, Path]) -> List[MetricsRow]:
    """
    Чтение таблицы, записанной report.

    Raises:
        FormatError: колонки не соответствуют формату таблицы
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    if not len(frame.columns) or frame.columns[0] != "velocity":
        raise FormatError(f"Первая колонка таблицы должна быть velocity: {path}")

    rows = []
    for record in frame.to_dict(orient="records"):
        row = MetricsRow(velocity=float(record["velocity"]))
        for column in frame.columns[1:]:
            rmse_match, eta_match = _RMSE_COLUMN.match(column), _ETA_COLUMN.match(column)
            if rmse_match:
                target = row.rmse_mean if rmse_match["stat"] == "mean" else row.rmse_std
                target[rmse_match["method"]] = float(record[column])
            elif eta_match:
                row.eta[(eta_match["candidate"], eta_match["baseline"])] = float(record[column])
            else:
                raise FormatError(f"Неизвестная колонка таблицы: {column}")
        rows.append(row)
    return rows
