"""
Модуль для работы с обучающими выборками аппроксиматора модели.

Включает класс Dataset с кортежами (s_k, x_f,k, delta_s_k), сборку выборок из прогонов
с разделением по целым прогонам, шум датчика силы и сохранение/загрузку в CSV.
"""
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.data_pipeline.rollout import FLOAT_FORMAT, Rollout, format_header, parse_header
from src.errors import ConfigurationError, FormatError, ShapeError
from src.model_approximator import StateMode, state_fields
from src.utils.file_utils import read_file, write_file
from src.utils.logging_utils import setup_logger

# Настраиваем логгер
logger = setup_logger("dataset")

DATASET_SCHEMA = 1
DATASET_MAGIC = "# vaicam-dataset"
SPLITS = ("train", "validation", "test")

SplitSpec = Union[str, Mapping[str, Sequence[int]]]


@dataclass
class Dataset:
    """
    Набор переходов для одного режима состояния.

    Attributes:
        state_mode: Раскладка состояния
        split: train, validation или test
        states: Состояния s_k, (n, d)
        actions: Приложенные уставки по z, (n,)
        deltas: Приращения s_{k+1} - s_k, (n, d)
        rollout_ids: Номер прогона каждого кортежа, (n,)
        steps: Номер шага k внутри прогона, (n,)
        norm_source: Выборка, по которой считаются статистики нормализации
    """
    state_mode: StateMode
    split: str
    states: np.ndarray
    actions: np.ndarray
    deltas: np.ndarray
    rollout_ids: np.ndarray
    steps: np.ndarray
    norm_source: str = "train"

    def __post_init__(self):
        self.state_mode = StateMode(self.state_mode)
        if self.split not in SPLITS:
            raise ConfigurationError(f"Неизвестная выборка {self.split}, ожидается одна из {SPLITS}")
        d = len(state_fields(self.state_mode))
        n = len(self.actions)
        if self.states.shape != (n, d) or self.deltas.shape != (n, d):
            raise ShapeError(
                f"Ожидались состояния и приращения формы ({n}, {d}), "
                f"получено {self.states.shape} и {self.deltas.shape}"
            )
        if len(self.rollout_ids) != n or len(self.steps) != n:
            raise ShapeError("Длины rollout_ids и steps не совпадают с числом кортежей")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def fields(self):
        return state_fields(self.state_mode)

    def inputs(self) -> np.ndarray:
        """Входы сети: состояние и уставка последним столбцом, (n, d + 1)."""
        return np.concatenate([self.states, self.actions[:, None]], axis=1)

    def next_states(self) -> np.ndarray:
        return self.states + self.deltas

    def rollouts(self) -> List[int]:
        return sorted(set(int(i) for i in self.rollout_ids))

    def to_frame(self) -> pd.DataFrame:
        data = {name: self.states[:, i] for i, name in enumerate(self.fields)}
        data["x_f_z"] = self.actions
        data.update({f"d_{name}": self.deltas[:, i] for i, name in enumerate(self.fields)})
        data["rollout_id"] = self.rollout_ids.astype(int)
        data["step"] = self.steps.astype(int)
        return pd.DataFrame(data, columns=dataset_columns(self.state_mode))


def dataset_columns(mode: Union[StateMode, str]) -> List[str]:
    names = list(state_fields(mode))
    return names + ["x_f_z"] + [f"d_{name}" for name in names] + ["rollout_id", "step"]


def _rollout_tuples(rollout: Rollout, mode: StateMode, active_only: bool):
    states = rollout.states(mode)
    start = 0
    if active_only:
        start = rollout.activation_index
        if start is None:
            return None
    current = states[start:-1]
    deltas = states[start + 1:] - current
    actions = rollout.x_c_star_z[start:-1]
    steps = np.arange(start, len(rollout) - 1)
    return current, actions, deltas, steps


def assemble_dataset(rollouts: Sequence[Rollout], split: str = "train",
                     state_mode: Union[StateMode, str, None] = None,
                     rollout_ids: Optional[Sequence[int]] = None,
                     active_only: bool = False) -> Dataset:
    """
    Кортежи (s_k, x_f,k, s_{k+1} - s_k) по всем шагам прогонов.

    Уставкой считается значение, реально отправленное объекту. Кортежи не пересекают
    границы прогонов: прогон из T шагов даёт T - 1 кортежей.

    Args:
        rollouts: Прогоны с одинаковыми dt и режимом состояния
        split: Имя выборки
        state_mode: Режим состояния (по умолчанию режим прогонов)
        rollout_ids: Номера прогонов (по умолчанию позиции в списке)
        active_only: Брать только шаги после обнаружения контакта

    Raises:
        ShapeError: у прогонов различаются режим состояния или dt
    """
    modes = {r.state_mode for r in rollouts}
    if len(modes) > 1:
        raise ShapeError(f"Прогоны собраны в разных режимах состояния: {sorted(m.value for m in modes)}")
    dts = {round(r.dt, 12) for r in rollouts}
    if len(dts) > 1:
        raise ShapeError(f"Прогоны имеют разный шаг dt: {sorted(dts)}")
    if state_mode is None:
        state_mode = modes.pop() if modes else StateMode.DYNAMIC
    state_mode = StateMode(state_mode)
    ids = list(range(len(rollouts))) if rollout_ids is None else list(rollout_ids)

    d = len(state_fields(state_mode))
    parts = {"states": [np.zeros((0, d))], "actions": [np.zeros(0)], "deltas": [np.zeros((0, d))],
             "ids": [np.zeros(0, dtype=int)], "steps": [np.zeros(0, dtype=int)]}
    for rollout_id, rollout in zip(ids, rollouts):
        result = _rollout_tuples(rollout, state_mode, active_only)
        if result is None:
            logger.warning(f"Прогон {rollout_id} без контакта пропущен")
            continue
        current, actions, deltas, steps = result
        parts["states"].append(current)
        parts["actions"].append(actions)
        parts["deltas"].append(deltas)
        parts["ids"].append(np.full(len(actions), rollout_id, dtype=int))
        parts["steps"].append(steps)

    return Dataset(
        state_mode=state_mode, split=split,
        states=np.concatenate(parts["states"]), actions=np.concatenate(parts["actions"]),
        deltas=np.concatenate(parts["deltas"]), rollout_ids=np.concatenate(parts["ids"]),
        steps=np.concatenate(parts["steps"]),
    )


def parse_split_spec(spec: SplitSpec, count: int) -> Dict[str, List[int]]:
    """
    Разбиение номеров прогонов по выборкам.

    Args:
        spec: Строка "a/b" или "a/b/c" (пропорции train/validation/test,
              первые прогоны идут в train) или словарь {выборка: номера прогонов}
        count: Число прогонов

    Returns:
        Словарь {выборка: номера}; каждый прогон попадает ровно в одну выборку
    """
    if isinstance(spec, str):
        if not re.fullmatch(r"\d+(/\d+){1,2}", spec):
            raise ConfigurationError(f"Некорректная спецификация разбиения: {spec!r}")
        weights = [int(part) for part in spec.split("/")]
        total = sum(weights)
        if total == 0:
            raise ConfigurationError("Сумма пропорций разбиения равна нулю")
        bounds = np.round(np.cumsum(weights) / total * count).astype(int)
        starts = np.concatenate([[0], bounds[:-1]])
        return {name: list(range(lo, hi)) for name, lo, hi in zip(SPLITS, starts, bounds)}

    result = {name: sorted(int(i) for i in indices) for name, indices in spec.items()}
    unknown = set(result) - set(SPLITS)
    if unknown:
        raise ConfigurationError(f"Неизвестные выборки: {sorted(unknown)}")
    seen = [i for indices in result.values() for i in indices]
    if len(seen) != len(set(seen)):
        raise ConfigurationError("Прогон не может входить в несколько выборок")
    if any(not 0 <= i < count for i in seen):
        raise ConfigurationError(f"Номера прогонов должны лежать в [0, {count})")
    return result


def assemble_splits(rollouts: Sequence[Rollout], spec: SplitSpec,
                    state_mode: Union[StateMode, str, None] = None,
                    active_only: bool = False) -> Dict[str, Dataset]:
    """
    Сборка выборок с разделением по целым прогонам, никогда по отдельным кортежам.

    Returns:
        Словарь {выборка: Dataset} для выборок с хотя бы одним прогоном
    """
    splits = {}
    for name, indices in parse_split_spec(spec, len(rollouts)).items():
        if not indices:
            continue
        splits[name] = assemble_dataset(
            [rollouts[i] for i in indices], split=name, state_mode=state_mode,
            rollout_ids=indices, active_only=active_only,
        )
        logger.info(f"Выборка {name}: {len(indices)} прогонов, {len(splits[name])} кортежей")
    return splits


def add_force_noise(dataset: Dataset, sigma: float, seed: int) -> Dataset:
    """
    Гауссов шум N(0, sigma) на каждое вхождение измеренной силы f_z.

    Шум привязан к записанному состоянию: если s_{k+1} кортежа k совпадает с s_k
    кортежа k + 1 того же прогона, оба получают одно и то же возмущение, а приращение
    меняется на разность возмущений.

    Args:
        dataset: Исходная выборка (не изменяется)
        sigma: Стандартное отклонение, Н
        seed: Зерно

    Returns:
        Новая выборка; sigma = 0 возвращает копию без изменений
    """
    if sigma < 0:
        raise ConfigurationError(f"sigma не может быть отрицательной: {sigma}")
    states, deltas = dataset.states.copy(), dataset.deltas.copy()
    if sigma == 0 or len(dataset) == 0:
        return replace(dataset, states=states, deltas=deltas)

    rng = np.random.default_rng(seed)
    n = len(dataset)
    noise_now = rng.normal(0.0, sigma, n)
    noise_next = rng.normal(0.0, sigma, n)
    chained = (dataset.rollout_ids[1:] == dataset.rollout_ids[:-1]) & (dataset.steps[1:] == dataset.steps[:-1] + 1)
    noise_next[:-1] = np.where(chained, noise_now[1:], noise_next[:-1])

    column = dataset.fields.index("f_z")
    states[:, column] += noise_now
    deltas[:, column] += noise_next - noise_now
    return replace(dataset, states=states, deltas=deltas)


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Сохраняет выборку в CSV с полной точностью."""
    meta = {"split": dataset.split, "norm_source": dataset.norm_source}
    body = dataset.to_frame().to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return write_file(path, format_header(DATASET_MAGIC, dataset.state_mode, DATASET_SCHEMA, meta) + body)


def load_dataset(path: Union[str, Path], state_mode: Union[StateMode, str, None] = None) -> Dataset:
    """
    Загружает выборку из CSV.

    Raises:
        FormatError: нет файла, другая версия схемы или другой режим состояния
    """
    content = read_file(path)
    if content is None:
        raise FormatError(f"Файл выборки не найден: {path}")
    header = parse_header(content.split("\n", 1)[0], DATASET_MAGIC)
    if header["schema"] != DATASET_SCHEMA:
        raise FormatError(f"Схема выборки {header['schema']} не поддерживается (ожидается {DATASET_SCHEMA})")
    mode = header["state_mode"]
    if state_mode is not None and mode != StateMode(state_mode):
        raise FormatError(f"Выборка записана в режиме {mode.value}, запрошен {StateMode(state_mode).value}")

    frame = pd.read_csv(path, skiprows=1, float_precision="round_trip")
    expected = dataset_columns(mode)
    if list(frame.columns) != expected:
        raise FormatError(f"Колонки выборки {list(frame.columns)} не совпадают с ожидаемыми {expected}")

    names = state_fields(mode)
    column = lambda name: frame[name].to_numpy(dtype=float)
    d = len(names)
    return Dataset(
        state_mode=mode,
        split=header["meta"].get("split", "train"),
        states=np.stack([column(name) for name in names], axis=1).reshape(-1, d),
        actions=column("x_f_z"),
        deltas=np.stack([column(f"d_{name}") for name in names], axis=1).reshape(-1, d),
        rollout_ids=frame["rollout_id"].to_numpy(dtype=int),
        steps=frame["step"].to_numpy(dtype=int),
        norm_source=header["meta"].get("norm_source", "train"),
    )
