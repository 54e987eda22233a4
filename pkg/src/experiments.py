"""
Оркестрация экспериментов: корпуса, обучение аппроксиматоров, сравнение моделей
(эксперимент I) и сравнение регуляторов (эксперимент II).

Каждый этап кэширует результат в выходной директории, поэтому подкоманды CLI
можно запускать по отдельности, а reproduce просто выполняет их по очереди.
"""
import json
import platform
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import tqdm
import yaml

from src.config import ExperimentConfig, config_hash, config_to_dict, dump_config, stage_hash, velocity_grid
from src.control import ForceTrackingController
from src.data_pipeline.dataset import Dataset, add_force_noise, assemble_dataset, assemble_splits, load_dataset, save_dataset
from src.data_pipeline.references import ReferenceProfile, grid_profiles, line_profile, sample_training_profiles
from src.data_pipeline.rollout import Rollout, collect_rollouts, save_rollout
from src.errors import InputError
from src.experiment_metrics import MetricsRow, aggregate_by_velocity, report, rmse
from src.model_approximator import EnsembleModel, StateMode, StateSample, normalized_mse, train
from src.model_io import load_model, save_model
from src.plant_sim import SurrogatePlant
from src.utils.file_utils import ensure_directory, read_file, write_file, write_json
from src.utils.logging_utils import log_stage, setup_logger

# Настраиваем логгер
logger = setup_logger("experiments")

# Порядок этапов фиксирован: зерно этапа зависит только от главного зерна и номера этапа
STAGES = (
    "sma_profiles", "dma_profiles", "dma_validation", "test_grid",
    "noise_sma", "noise_dma", "train_sma", "train_dma",
)

MODEL_METHODS = ("sma", "dma")
MODEL_ETA = (("dma", "sma"),)
CONTROLLER_METHODS = ("dfc", "oracle", "vaicam")
CONTROLLER_ETA = (("vaicam", "dfc"), ("vaicam", "oracle"))
# ORACLE использует статический аппроксиматор, VAICAM - динамический
CONTROLLER_MODELS = {"dfc": None, "oracle": "sma", "vaicam": "dma"}


def stage_seed(seed: int, stage: str) -> int:
    """Детерминированное зерно этапа, производное от главного зерна."""
    sequence = np.random.SeedSequence([int(seed), STAGES.index(stage)])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def replay_predictions(model: EnsembleModel, rollout: Rollout, horizon: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Прогон записанной траектории через аппроксиматор.

    horizon = 1: s_{k+1} предсказывается по записанным s_k и уставке x_k.
    horizon = H: от каждой H-й точки модель разворачивается на H шагов по своим же
    предсказаниям с записанными уставками.

    Returns:
        (измеренная f_z, предсказанная f_z) для шагов после обнаружения контакта
    """
    start = rollout.activation_index
    empty = (np.zeros(0), np.zeros(0))
    if start is None or start >= len(rollout) - 1:
        return empty
    mode = model.state_mode
    states = rollout.states(mode)
    actions = rollout.x_c_star_z
    last = len(rollout) - 1

    if horizon == 1:
        current = StateSample.from_state_vector(states[start:last], mode)
        predicted = model.predict_next(current, actions[start:last])
        return rollout.f_z[start + 1:], np.asarray(predicted.f_z, dtype=float)

    anchors = np.arange(start, last, horizon)
    current = states[anchors]
    predicted = np.full((len(anchors), horizon), np.nan)
    for h in range(horizon):
        index = anchors + h
        valid = index < last
        if not np.any(valid):
            break
        sample = StateSample.from_state_vector(current, mode)
        step_result = model.predict_next(sample, actions[np.minimum(index, last - 1)])
        current = step_result.state_vector(mode)
        predicted[:, h] = np.where(valid, step_result.f_z, np.nan)

    targets = anchors[:, None] + 1 + np.arange(horizon)
    mask = targets <= last
    return rollout.f_z[targets[mask]], predicted[mask]


def package_versions() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "torch": torch.__version__,
        "pyyaml": yaml.__version__,
        "tqdm": tqdm.__version__,
    }


class ExperimentRunner:
    """
    Класс для проведения экспериментов со стендом.

    Хранит конфигурацию, главное зерно и выходную директорию; результаты этапов
    (выборки, модели, таблицы) пишутся в поддиректории и переиспользуются.
    """

    def __init__(self, cfg: ExperimentConfig, seed: Optional[int] = None, out_dir: str = "results",
                 single_thread: bool = False, progress: bool = False):
        """
        Инициализация.

        Args:
            cfg: Проверенная конфигурация
            seed: Главное зерно (по умолчанию experiment.seed из конфигурации)
            out_dir: Выходная директория
            single_thread: Детерминированный однопоточный режим
            progress: Показывать прогресс-бары
        """
        self.cfg = cfg
        self.seed = cfg.experiment.seed if seed is None else int(seed)
        self.out_dir = ensure_directory(out_dir)
        self.single_thread = single_thread
        self.progress = progress
        self.workers = 1 if single_thread else cfg.experiment.workers
        self.produced: List[str] = []

        self.corpora: Dict[str, Dict[str, Dataset]] = {}
        self.models: Dict[str, EnsembleModel] = {}

    # Пути

    def _path(self, *parts: str) -> Path:
        return self.out_dir.joinpath(*parts)

    def _remember(self, path: Path) -> Path:
        relative = str(Path(path).relative_to(self.out_dir))
        if relative not in self.produced:
            self.produced.append(relative)
        return path

    def _map(self, func: Callable, items: Sequence) -> List:
        if self.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(func, items))
        return [func(item) for item in items]

    # Отметки кэша: этап переиспользуется, только если совпадают зерно и хэш нужной части конфигурации

    def _stamp(self, stage: str) -> Dict[str, Any]:
        return {"stage": stage, "seed": self.seed, "config_hash": stage_hash(self.cfg, stage)}

    def _write_stamp(self, stage: str) -> None:
        self._remember(write_json(self._path(stage, "stamp.json"), self._stamp(stage)))

    def cache_matches(self, stage: str) -> bool:
        """
        Проверка, что кэш этапа в выходной директории собран с теми же зерном и конфигурацией.

        Args:
            stage: "corpora" или "models"

        Returns:
            True, если отметка этапа есть и совпадает с текущим запуском
        """
        content = read_file(self._path(stage, "stamp.json"))
        if content is None:
            logger.warning(f"Нет отметки этапа {stage} в {self.out_dir}, этап выполняется заново")
            return False
        try:
            stored = json.loads(content)
        except ValueError:
            logger.warning(f"Повреждённая отметка этапа {stage}, этап выполняется заново")
            return False
        if not isinstance(stored, dict):
            stored = {}
        expected = self._stamp(stage)
        if stored != expected:
            logger.warning(
                f"Кэш этапа {stage} собран с seed={stored.get('seed')}, "
                f"config_hash={str(stored.get('config_hash'))[:12]}; текущий запуск seed={self.seed}, "
                f"config_hash={expected['config_hash'][:12]}. Этап выполняется заново"
            )
            return False
        return True

    # Объект и регуляторы

    def make_plant(self) -> SurrogatePlant:
        return SurrogatePlant(gains=self.cfg.impedance, env=self.cfg.environment, config=self.cfg.plant)

    def make_controller(self, controller_id: str, model: Optional[EnsembleModel] = None) -> ForceTrackingController:
        return ForceTrackingController(controller_id, dfc=self.cfg.dfc, vaicam=self.cfg.vaicam,
                                       model=model, dt=self.cfg.plant.dt)

    def collect(self, profiles: Sequence[ReferenceProfile], seeds: Sequence[int], controller_id: str,
                state_mode: StateMode, model: Optional[EnsembleModel] = None,
                dither: bool = False) -> List[Rollout]:
        """
        Прогоны произвольных профилей: группировка по длительности, пачка на группу.

        dither=True добавляет к уставке случайную добавку data.setpoint_dither (прогоны корпусов).

        Returns:
            Прогоны в исходном порядке профилей
        """
        dt = self.cfg.plant.dt
        groups: Dict[int, List[int]] = {}
        for index, profile in enumerate(profiles):
            groups.setdefault(profile.n_steps(dt), []).append(index)

        def run(indices: List[int]) -> List[Rollout]:
            return collect_rollouts(
                [profiles[i] for i in indices], [seeds[i] for i in indices],
                self.make_controller(controller_id, model), self.make_plant(), state_mode,
                progress=self.progress,
                dither=self.cfg.data.setpoint_dither if dither else 0.0, dither_hold=self.cfg.data.dither_hold,
            )

        ordered = list(groups.values())
        results: List[Optional[Rollout]] = [None] * len(profiles)
        for indices, rollouts in zip(ordered, self._map(run, ordered)):
            for i, rollout in zip(indices, rollouts):
                results[i] = rollout
        return results

    # Корпуса

    def _corpus_path(self, name: str, split: str) -> Path:
        return self._path("corpora", f"{name}_{split}.csv")

    def collect_corpora(self) -> Dict[str, Dict[str, Dataset]]:
        """
        Статический и динамический корпуса, разбитые по прогонам и зашумлённые.

        Returns:
            {"sma": {"train", "validation"}, "dma": {"train", "validation"}}
        """
        data = self.cfg.data
        z_offset = self.cfg.experiment.z_offset
        log_stage(logger, "collect", {"seed": self.seed, "sma_rollouts": data.sma_rollouts,
                                      "dma_train_rollouts": data.dma_train_rollouts,
                                      "dma_validation_rollouts": data.dma_validation_rollouts})

        # Статический корпус: неподвижные точки, разбиение по прогонам (по умолчанию 9/1)
        sma_seed = stage_seed(self.seed, "sma_profiles")
        sma_profiles = sample_training_profiles(data.sma_rollouts, sma_seed, data.training_duration,
                                                dynamic=False, ranges=data.ranges, z_offset=z_offset)
        sma_rollouts = self.collect(sma_profiles, [sma_seed + i for i in range(len(sma_profiles))],
                                    "dfc", StateMode.STATIC, dither=True)
        sma = assemble_splits(sma_rollouts, data.sma_split, StateMode.STATIC, data.active_only)

        # Динамический корпус: синусоиды по позиции для обучения, прямые сетки для валидации
        dma_seed = stage_seed(self.seed, "dma_profiles")
        dma_profiles = sample_training_profiles(data.dma_train_rollouts, dma_seed, data.training_duration,
                                                dynamic=True, ranges=data.ranges, z_offset=z_offset)
        dma_train = self.collect(dma_profiles, [dma_seed + i for i in range(len(dma_profiles))],
                                 "dfc", StateMode.DYNAMIC, dither=True)
        val_seed = stage_seed(self.seed, "dma_validation")
        val_profiles = self._validation_profiles(val_seed)
        dma_val = self.collect(val_profiles, [val_seed + i for i in range(len(val_profiles))],
                               "dfc", StateMode.DYNAMIC, dither=True)
        dma = {
            "train": assemble_dataset(dma_train, "train", StateMode.DYNAMIC, active_only=data.active_only),
            "validation": assemble_dataset(dma_val, "validation", StateMode.DYNAMIC,
                                           rollout_ids=range(len(dma_train), len(dma_train) + len(dma_val)),
                                           active_only=data.active_only),
        }

        corpora = {"sma": sma, "dma": dma}
        for name, splits in corpora.items():
            noise_seed = stage_seed(self.seed, f"noise_{name}")
            for offset, split in enumerate(sorted(splits)):
                splits[split] = add_force_noise(splits[split], data.noise_sigma, noise_seed + offset)
                self._remember(save_dataset(splits[split], self._corpus_path(name, split)))
            logger.info(f"Корпус {name}: " + ", ".join(f"{s}={len(d)}" for s, d in sorted(splits.items())))
        self.corpora = corpora
        self._write_stamp("corpora")
        return corpora

    def _validation_profiles(self, seed: int) -> List[ReferenceProfile]:
        grid = velocity_grid(self.cfg)
        count = self.cfg.data.dma_validation_rollouts
        velocities = grid if count == len(grid) else list(np.linspace(grid[0], grid[-1], count))
        rng = np.random.default_rng(seed)
        settings = self.cfg.experiment
        return [
            line_profile(float(v), length=settings.line_length, max_duration=settings.max_duration,
                         force_mean=settings.force_mean, force_amplitude=settings.force_amplitude,
                         force_frequency=settings.force_frequency,
                         force_phase=float(rng.uniform(0.0, 2.0 * np.pi)),
                         heading=float(rng.uniform(0.0, 2.0 * np.pi)), z_offset=settings.z_offset)
            for v in velocities
        ]

    def ensure_corpora(self) -> Dict[str, Dict[str, Dataset]]:
        """Корпуса из кэша, если все файлы на месте, иначе сбор заново."""
        if self.corpora:
            return self.corpora
        paths = {(name, split): self._corpus_path(name, split)
                 for name in MODEL_METHODS for split in ("train", "validation")}
        if all(path.exists() for path in paths.values()) and self.cache_matches("corpora"):
            modes = {"sma": StateMode.STATIC, "dma": StateMode.DYNAMIC}
            self.corpora = {name: {} for name in MODEL_METHODS}
            for (name, split), path in paths.items():
                self.corpora[name][split] = load_dataset(path, modes[name])
                self._remember(path)
            self._remember(self._path("corpora", "stamp.json"))
            logger.info(f"Корпуса загружены из {self._path('corpora')}")
            return self.corpora
        return self.collect_corpora()

    # Обучение

    def _model_path(self, name: str) -> Path:
        return self._path("models", f"{name}.model")

    def train_models(self) -> Dict[str, EnsembleModel]:
        """Обучение SMA и DMA; модели и история обучения пишутся в models/."""
        corpora = self.ensure_corpora()
        network = self.cfg.network
        log_stage(logger, "train", {"seed": self.seed, "n_estimators": network.n_estimators,
                                    "hidden_layers": network.hidden_layers,
                                    "neurons_per_layer": network.neurons_per_layer, "epochs": network.epochs})
        for name in MODEL_METHODS:
            splits = corpora[name]
            model = train(splits["train"], network, stage_seed(self.seed, f"train_{name}"),
                          validation=splits["validation"], workers=self.workers, progress=self.progress)
            score = normalized_mse(model, splits["validation"])
            logger.info(f"Модель {name}: нормализованная MSE на валидации {score:.6g}")
            self._remember(save_model(model, self._model_path(name)))
            history = pd.DataFrame(model.history, columns=["member", "epoch", "train_mse", "val_mse", "learning_rate"])
            body = history.to_csv(index=False, float_format="%.17g", lineterminator="\n")
            self._remember(write_file(self._path("models", f"{name}_history.csv"), body))
            self.models[name] = model
        self._write_stamp("models")
        return self.models

    def ensure_models(self) -> Dict[str, EnsembleModel]:
        if len(self.models) == len(MODEL_METHODS):
            return self.models
        if all(self._model_path(name).exists() for name in MODEL_METHODS) and self.cache_matches("models"):
            for name in MODEL_METHODS:
                self.models[name] = load_model(self._model_path(name))
                self._remember(self._model_path(name))
            self._remember(self._path("models", "stamp.json"))
            return self.models
        return self.train_models()

    # Эксперименты

    def test_grid(self) -> List[List[ReferenceProfile]]:
        """Тестовая сетка: группа прямых на каждую скорость."""
        settings = self.cfg.experiment
        return grid_profiles(
            velocity_grid(self.cfg), settings.per_velocity, stage_seed(self.seed, "test_grid"),
            length=settings.line_length, max_duration=settings.max_duration,
            force_mean=settings.force_mean, force_amplitude=settings.force_amplitude,
            force_frequency=settings.force_frequency, z_offset=settings.z_offset,
        )

    def _grid_seeds(self, group_index: int, count: int) -> List[int]:
        base = stage_seed(self.seed, "test_grid") + 1000 * group_index
        return [base + i for i in range(count)]

    def _save_examples(self, rollouts: Sequence[Rollout], experiment: str, label: str, velocity: float) -> None:
        for i, rollout in enumerate(rollouts[:self.cfg.experiment.saved_rollouts_per_velocity]):
            path = self._path("rollouts", experiment, label, f"v{velocity:.2f}_{i:02d}.csv")
            self._remember(save_rollout(rollout, path))

    def _active_rmse(self, rollout: Rollout) -> Optional[float]:
        start = rollout.activation_index
        if start is None:
            logger.warning(f"Прогон seed={rollout.meta.get('seed')} без контакта исключён из метрик")
            return None
        return rmse(rollout.force_reference[start:], rollout.f_z[start:])

    def run_experiment_1(self) -> List[MetricsRow]:
        """
        Сравнение SMA и DMA: RMSE предсказанной силы на прогонах DFC по тестовой сетке.

        Returns:
            Строки таблицы по скоростям с eta = RMSE_SMA / RMSE_DMA
        """
        models = self.ensure_models()
        horizon = self.cfg.experiment.prediction_horizon
        log_stage(logger, "eval-ma", {"seed": self.seed, "prediction_horizon": horizon})
        results = []
        for index, group in enumerate(self.test_grid()):
            velocity = group[0].velocity
            rollouts = self.collect(group, self._grid_seeds(index, len(group)), "dfc", StateMode.DYNAMIC)
            self._save_examples(rollouts, "experiment_1", "dfc", velocity)
            for rollout in rollouts:
                for name in MODEL_METHODS:
                    actual, predicted = replay_predictions(models[name], rollout, horizon)
                    if actual.size == 0:
                        continue
                    results.append({"velocity": velocity, "method": name, "rmse": rmse(actual, predicted)})
            logger.info(f"Эксперимент I, v={velocity:.2f} м/с: {len(rollouts)} прогонов")
        return self._finish(results, MODEL_METHODS, MODEL_ETA, "experiment_1")

    def run_experiment_2(self) -> List[MetricsRow]:
        """
        Сравнение DFC, ORACLE и VAICAM: RMSE отслеживания силы по тестовой сетке.

        Returns:
            Строки таблицы с eta VAICAM относительно DFC и ORACLE
        """
        models = self.ensure_models()
        log_stage(logger, "eval-control", {"seed": self.seed, "rho": self.cfg.vaicam.rho,
                                           "alpha": self.cfg.vaicam.alpha, "beta": self.cfg.vaicam.beta})
        results = []
        for index, group in enumerate(self.test_grid()):
            velocity = group[0].velocity
            seeds = self._grid_seeds(index, len(group))
            for controller_id in CONTROLLER_METHODS:
                model_name = CONTROLLER_MODELS[controller_id]
                model = models[model_name] if model_name else None
                rollouts = self.collect(group, seeds, controller_id, StateMode.DYNAMIC, model)
                self._save_examples(rollouts, "experiment_2", controller_id, velocity)
                for rollout in rollouts:
                    error = self._active_rmse(rollout)
                    if error is not None:
                        results.append({"velocity": velocity, "method": controller_id, "rmse": error})
            logger.info(f"Эксперимент II, v={velocity:.2f} м/с завершён")
        return self._finish(results, CONTROLLER_METHODS, CONTROLLER_ETA, "experiment_2")

    def _finish(self, results: List[Dict[str, Any]], methods, eta_pairs, name: str) -> List[MetricsRow]:
        if not results:
            raise InputError(f"{name}: нет ни одного прогона с контактом")
        rows = aggregate_by_velocity(results, methods, eta_pairs)
        for row in rows:
            summary = ", ".join(f"{m}={row.rmse_mean[m]:.4g}" for m in methods)
            ratios = ", ".join(f"eta_{c}_vs_{b}={value:.4g}" for (c, b), value in row.eta.items())
            logger.info(f"{name} v={row.velocity:.2f}: {summary}; {ratios}")
        for path in report(rows, self._path("metrics", name)):
            self._remember(path)
        return rows

    # Манифест

    def write_manifest(self, command: str) -> Path:
        """JSON с хэшем конфигурации, зерном, версиями пакетов и списком созданных файлов."""
        self._remember(write_file(self._path("config.yaml"), dump_config(self.cfg)))
        manifest = {
            "command": command,
            "seed": self.seed,
            "single_thread": self.single_thread,
            "config_hash": config_hash(self.cfg),
            "config": config_to_dict(self.cfg),
            "versions": package_versions(),
            "files": sorted(self.produced),
        }
        path = write_json(self._path("manifest.json"), manifest)
        logger.info(f"Манифест записан: {path}")
        return path

    def reproduce(self) -> Dict[str, List[MetricsRow]]:
        """Все этапы по порядку: корпуса, обучение, эксперименты I и II."""
        self.collect_corpora()
        self.train_models()
        tables = {"experiment_1": self.run_experiment_1(), "experiment_2": self.run_experiment_2()}
        self.write_manifest("reproduce")
        return tables
