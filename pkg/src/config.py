"""
Модуль для работы с конфигурацией экспериментов.

YAML-файл содержит по секции на модуль; каждая секция превращается в dataclass
со значениями по умолчанию, поэтому отсутствующие ключи допустимы, а неизвестные - нет.
"""
import hashlib
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from src.control import DfcConfig, VaicamParams
from src.data_pipeline.references import SineRanges
from src.errors import ConfigurationError
from src.model_approximator import NetworkConfig
from src.plant_sim import EnvironmentModel, ImpedanceGains, PlantConfig
from src.utils.file_utils import read_file

DEFAULT_VELOCITIES = (0.01, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50)

CACHED_STAGES = ("corpora", "models")
# Корпуса зависят от объекта, DFC, параметров данных и профилей валидационных прямых
CORPUS_SECTIONS = ("plant", "environment", "impedance", "dfc", "data")
CORPUS_EXPERIMENT_KEYS = ("velocities", "line_length", "max_duration", "force_mean",
                          "force_amplitude", "force_frequency", "z_offset")


@dataclass
class DataConfig:
    """
    Параметры обучающих корпусов.

    Attributes:
        sma_rollouts: Число прогонов статического корпуса
        sma_split: Разбиение статического корпуса train/validation по прогонам
        dma_train_rollouts: Число обучающих прогонов динамического корпуса
        dma_validation_rollouts: Число валидационных прогонов (по одной прямой на скорость сетки)
        training_duration: Длительность обучающего прогона, с
        noise_sigma: СКО шума датчика силы, Н
        active_only: Брать в выборку только шаги после обнаружения контакта
        setpoint_dither: Полуширина равномерной добавки к уставке z на прогонах корпусов, м
        dither_hold: Сколько шагов держится одно значение добавки
        ranges: Диапазоны случайных синусоид
    """
    sma_rollouts: int = 10
    sma_split: str = "9/1"
    dma_train_rollouts: int = 20
    dma_validation_rollouts: int = 11
    training_duration: float = 3.0
    noise_sigma: float = 0.1
    active_only: bool = False
    setpoint_dither: float = 0.003
    dither_hold: int = 1
    ranges: SineRanges = field(default_factory=SineRanges)

    def validate(self) -> None:
        if self.sma_rollouts < 2 or self.dma_train_rollouts < 1 or self.dma_validation_rollouts < 1:
            raise ConfigurationError("Корпусам нужно хотя бы по одному обучающему и валидационному прогону")
        if not self.training_duration > 0:
            raise ConfigurationError("training_duration должна быть положительной")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma не может быть отрицательной")
        if self.setpoint_dither < 0 or self.dither_hold < 1:
            raise ConfigurationError("setpoint_dither >= 0 и dither_hold >= 1")
        self.ranges.validate()


@dataclass
class ExperimentSettings:
    """
    Параметры тестовой сетки и прогонов экспериментов.

    prediction_horizon = 1 - предсказание на один шаг; H > 1 - разомкнутое предсказание
    на H шагов с повторной привязкой к записанному состоянию.
    """
    seed: int = 0
    velocities: Tuple[float, ...] = DEFAULT_VELOCITIES
    per_velocity: int = 10
    line_length: float = 1.2
    max_duration: Optional[float] = 3.0
    force_mean: float = 15.0
    force_amplitude: float = 5.0
    force_frequency: float = 0.5
    z_offset: float = -0.005
    prediction_horizon: int = 1
    workers: int = 1
    saved_rollouts_per_velocity: int = 1

    def validate(self) -> None:
        grid = list(self.velocities)
        if not grid:
            raise ConfigurationError("Сетка скоростей пуста")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigurationError(f"Сетка скоростей должна строго возрастать: {grid}")
        if not (0 < grid[0] and grid[-1] <= 1.0):
            raise ConfigurationError(f"Скорости должны лежать в (0, 1] м/с: {grid}")
        if self.per_velocity < 1 or self.line_length <= 0:
            raise ConfigurationError("per_velocity >= 1 и line_length > 0")
        if self.max_duration is not None and self.max_duration <= 0:
            raise ConfigurationError("max_duration должна быть положительной")
        if self.prediction_horizon < 1 or self.workers < 1:
            raise ConfigurationError("prediction_horizon и workers должны быть >= 1")
        if self.saved_rollouts_per_velocity < 0:
            raise ConfigurationError("saved_rollouts_per_velocity не может быть отрицательным")


@dataclass
class ExperimentConfig:
    """Полная конфигурация стенда."""
    plant: PlantConfig = field(default_factory=PlantConfig)
    environment: EnvironmentModel = field(default_factory=EnvironmentModel)
    impedance: ImpedanceGains = field(default_factory=ImpedanceGains)
    dfc: DfcConfig = field(default_factory=DfcConfig)
    vaicam: VaicamParams = field(default_factory=VaicamParams)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    data: DataConfig = field(default_factory=DataConfig)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)


SECTIONS = tuple(f.name for f in fields(ExperimentConfig))


def _build(cls, values: Optional[Dict[str, Any]], where: str):
    """Dataclass из словаря: вложенные dataclass собираются рекурсивно, списки становятся кортежами."""
    values = values or {}
    if not isinstance(values, dict):
        raise ConfigurationError(f"Секция {where} должна быть словарём")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigurationError(f"Неизвестные ключи в секции {where}: {unknown}")
    kwargs = {}
    defaults = cls()
    for name, value in values.items():
        default = getattr(defaults, name)
        if is_dataclass(default):
            value = _build(type(default), value, f"{where}.{name}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: Optional[Dict[str, Any]]) -> ExperimentConfig:
    """Конфигурация из словаря (например, результата yaml.safe_load)."""
    data = data or {}
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(f"Неизвестные секции конфигурации: {unknown}")
    sections = {f.name: _build(type(getattr(ExperimentConfig(), f.name)), data.get(f.name), f.name)
                for f in fields(ExperimentConfig)}
    return ExperimentConfig(**sections)


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Словарь с простыми типами (кортежи превращаются в списки)."""
    def plain(value):
        if isinstance(value, dict):
            return {key: plain(item) for key, item in value.items()}
        if isinstance(value, (list, tuple)):
            return [plain(item) for item in value]
        return value
    return plain(asdict(cfg))


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Переопределения вида section.key=value (значение разбирается как YAML).

    Args:
        data: Исходный словарь конфигурации (не изменяется)
        overrides: Список строк-переопределений

    Returns:
        Новый словарь
    """
    result = yaml.safe_load(yaml.safe_dump(data or {}))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or "." not in key:
            raise ConfigurationError(f"Переопределение должно иметь вид section.key=value: {item!r}")
        path = key.split(".")
        target = result
        for part in path[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigurationError(f"{key}: {part} не является секцией")
        target[path[-1]] = yaml.safe_load(raw)
    return result


def load_config(config_path: Optional[str] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """
    Загрузка конфигурации из YAML файла.

    Args:
        config_path: Путь к файлу; None - переменная VAICAM_CONFIG или значения по умолчанию
        overrides: Переопределения section.key=value

    Returns:
        Проверенная конфигурация
    """
    config_path = config_path or os.environ.get("VAICAM_CONFIG")
    data: Dict[str, Any] = {}
    if config_path:
        content = read_file(config_path)
        if content is None:
            raise ConfigurationError(f"Не удалось прочитать файл конфигурации: {config_path}")
        try:
            data = yaml.safe_load(content) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Ошибка парсинга YAML: {e}")
    cfg = config_from_dict(apply_overrides(data, overrides))
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> bool:
    """
    Проверка корректности всех секций.

    Returns:
        True, если конфигурация валидна

    Raises:
        ConfigurationError: первая найденная ошибка
    """
    cfg.environment.validate()
    cfg.impedance.validate()
    cfg.plant.validate(cfg.impedance)
    cfg.dfc.validate()
    cfg.vaicam.validate()
    cfg.network.validate()
    cfg.data.validate()
    cfg.experiment.validate()
    return True


def _digest(data: Dict[str, Any]) -> str:
    canonical = yaml.safe_dump(data, sort_keys=True, default_flow_style=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 канонического YAML-представления конфигурации."""
    return _digest(config_to_dict(cfg))


def stage_config(cfg: ExperimentConfig, stage: str) -> Dict[str, Any]:
    """
    Часть конфигурации, от которой зависит результат кэшируемого этапа.

    Args:
        cfg: Конфигурация
        stage: "corpora" или "models"

    Returns:
        Словарь выбранных секций и ключей
    """
    if stage not in CACHED_STAGES:
        raise ConfigurationError(f"Неизвестный кэшируемый этап {stage!r}, ожидается один из {CACHED_STAGES}")
    data = config_to_dict(cfg)
    selected = {name: data[name] for name in CORPUS_SECTIONS}
    selected["experiment"] = {key: data["experiment"][key] for key in CORPUS_EXPERIMENT_KEYS}
    if stage == "models":
        selected["network"] = data["network"]
    return selected


def stage_hash(cfg: ExperimentConfig, stage: str) -> str:
    """sha256 той части конфигурации, от которой зависит этап."""
    return _digest(stage_config(cfg, stage))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=False, allow_unicode=True)


def velocity_grid(cfg: ExperimentConfig) -> List[float]:
    return [float(v) for v in cfg.experiment.velocities]
