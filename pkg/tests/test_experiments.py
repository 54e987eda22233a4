import json
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest
import torch

from src.cli import main
from src.config import load_config, stage_hash
from src.data_pipeline.rollout import Rollout
from src.experiment_metrics import read_metrics_csv
from src.experiments import STAGES, ExperimentRunner, replay_predictions, stage_seed
from src.model_approximator import EnsembleModel, NormStats, StateMode

TINY = [
    "data.sma_rollouts=2", "data.sma_split=1/1", "data.dma_train_rollouts=2",
    "data.dma_validation_rollouts=3", "data.training_duration=0.3",
    "network.n_estimators=2", "network.hidden_layers=1", "network.neurons_per_layer=8", "network.epochs=2",
    "experiment.per_velocity=1", "experiment.max_duration=0.2",
]


@pytest.fixture
def temp_dir():
    """Временная директория для файлов теста."""
    with tempfile.TemporaryDirectory() as tmpdirname:
        yield Path(tmpdirname)


@pytest.fixture(autouse=True)
def no_config_env(monkeypatch):
    monkeypatch.delenv("VAICAM_CONFIG", raising=False)


@pytest.fixture(scope="module")
def tiny_run():
    """Полный прогон всех этапов на уменьшенной конфигурации."""
    with tempfile.TemporaryDirectory() as tmpdirname:
        runner = ExperimentRunner(load_config(overrides=TINY), seed=0, out_dir=tmpdirname, single_thread=True)
        tables = runner.reproduce()
        yield Path(tmpdirname), tables


def constant_model() -> EnsembleModel:
    """Модель с нулевым приращением: предсказание всегда равно текущему состоянию."""
    model = EnsembleModel(StateMode.DYNAMIC, hidden_layers=0, neurons_per_layer=1)
    model.members = [[torch.zeros(4, 5, dtype=torch.float64), torch.zeros(4, dtype=torch.float64)]]
    model.norm_stats = NormStats(np.zeros(5), np.ones(5), np.zeros(4), np.ones(4))
    return model


def ramp_rollout(steps: int = 10, activation: int = 3) -> Rollout:
    zeros = np.zeros(steps)
    return Rollout(
        t=np.arange(steps) * 1e-3, z=zeros.copy(), z_dot=zeros.copy(), v=zeros.copy(),
        f_z=np.arange(steps, dtype=float), x_f_z=zeros.copy(), x_c_star_z=zeros.copy(),
        h_r_z=np.full(steps, -5.0), cost=np.full(steps, np.nan), active=np.arange(steps) >= activation,
        meta={"state_mode": "dynamic", "dt": 1e-3},
    )


class TestStageSeed:
    """Тесты для stage_seed."""

    def test_deterministic_and_distinct(self):
        seeds = [stage_seed(0, stage) for stage in STAGES]
        assert seeds == [stage_seed(0, stage) for stage in STAGES]
        assert len(set(seeds)) == len(STAGES)
        assert stage_seed(1, "test_grid") != stage_seed(0, "test_grid")


class TestReplayPredictions:
    """Тесты для replay_predictions."""

    def test_one_step(self):
        actual, predicted = replay_predictions(constant_model(), ramp_rollout(), horizon=1)
        np.testing.assert_array_equal(actual, np.arange(4.0, 10.0))
        np.testing.assert_array_equal(predicted, np.arange(3.0, 9.0))

    def test_multi_step_reanchors(self):
        """Разворот на 4 шага с повторной привязкой к записанному состоянию."""
        actual, predicted = replay_predictions(constant_model(), ramp_rollout(), horizon=4)
        np.testing.assert_array_equal(actual, np.arange(4.0, 10.0))
        np.testing.assert_array_equal(predicted, [3.0, 3.0, 3.0, 3.0, 7.0, 7.0])

    def test_no_contact(self):
        actual, predicted = replay_predictions(constant_model(), ramp_rollout(activation=100))
        assert actual.size == 0 and predicted.size == 0


class TestReproduce:
    """Сквозной прогон на уменьшенной конфигурации."""

    def test_protocol_shape(self, tiny_run):
        """11 скоростей x 2 модели в эксперименте I, 11 x 3 регулятора в эксперименте II."""
        out_dir, tables = tiny_run
        exp1 = read_metrics_csv(out_dir / "metrics" / "experiment_1.csv")
        exp2 = read_metrics_csv(out_dir / "metrics" / "experiment_2.csv")
        assert len(exp1) == 11 and len(exp2) == 11
        assert exp1[0].columns() == ["velocity", "rmse_sma_mean", "rmse_sma_std",
                                     "rmse_dma_mean", "rmse_dma_std", "eta_dma_vs_sma"]
        assert exp2[0].methods == ["dfc", "oracle", "vaicam"]
        assert exp1 == tables["experiment_1"]

    def test_eta_matches_columns(self, tiny_run):
        out_dir, _ = tiny_run
        for row in read_metrics_csv(out_dir / "metrics" / "experiment_2.csv"):
            assert row.eta[("vaicam", "dfc")] == row.rmse_mean["dfc"] / row.rmse_mean["vaicam"]
            assert row.eta[("vaicam", "oracle")] == row.rmse_mean["oracle"] / row.rmse_mean["vaicam"]
        for row in read_metrics_csv(out_dir / "metrics" / "experiment_1.csv"):
            assert row.eta[("dma", "sma")] == row.rmse_mean["sma"] / row.rmse_mean["dma"]

    def test_outputs(self, tiny_run):
        out_dir, _ = tiny_run
        manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["seed"] == 0 and manifest["single_thread"] is True
        assert "metrics/experiment_1.csv" in manifest["files"]
        assert "models/dma.model" in manifest["files"]
        assert "corpora/stamp.json" in manifest["files"] and "models/stamp.json" in manifest["files"]
        assert (out_dir / "corpora" / "sma_train.csv").exists()
        assert (out_dir / "rollouts" / "experiment_2" / "vaicam" / "v0.50_00.csv").exists()
        assert (out_dir / "config.yaml").exists()

    def test_cached_stages(self, tiny_run):
        """Повторный запуск берёт корпуса и модели из выходной директории."""
        out_dir, _ = tiny_run
        runner = ExperimentRunner(load_config(overrides=TINY), seed=0, out_dir=str(out_dir), single_thread=True)
        corpora = runner.ensure_corpora()
        models = runner.ensure_models()
        assert corpora["sma"]["train"].state_mode is StateMode.STATIC
        assert corpora["dma"]["validation"].state_mode is StateMode.DYNAMIC
        assert models["dma"].is_trained and models["sma"].state_mode is StateMode.STATIC

    def test_deterministic(self, tiny_run, temp_dir):
        """Одинаковые зерно и конфигурация дают побайтно одинаковые таблицы."""
        out_dir, _ = tiny_run
        ExperimentRunner(load_config(overrides=TINY), seed=0, out_dir=str(temp_dir), single_thread=True).reproduce()
        for name in ("experiment_1.csv", "experiment_2.csv"):
            assert (temp_dir / "metrics" / name).read_bytes() == (out_dir / "metrics" / name).read_bytes()


class TestStageCache:
    """Тесты переиспользования корпусов и моделей из выходной директории."""

    def test_stamps_written(self, tiny_run):
        out_dir, _ = tiny_run
        cfg = load_config(overrides=TINY)
        for stage in ("corpora", "models"):
            stamp = json.loads((out_dir / stage / "stamp.json").read_text(encoding="utf-8"))
            assert stamp == {"stage": stage, "seed": 0, "config_hash": stage_hash(cfg, stage)}

    def test_unrelated_settings_keep_cache(self, tiny_run):
        """Горизонт предсказания и параметры оптимизатора не влияют на корпуса и модели."""
        out_dir, _ = tiny_run
        cfg = load_config(overrides=TINY + ["experiment.prediction_horizon=3", "vaicam.rho=0.002"])
        runner = ExperimentRunner(cfg, seed=0, out_dir=str(out_dir), single_thread=True)
        assert runner.cache_matches("corpora") and runner.cache_matches("models")

    def test_other_seed_and_config_rebuild(self, tiny_run, temp_dir):
        """Кэш с другим зерном и конфигурацией не используется, корпуса собираются заново."""
        out_dir, _ = tiny_run
        cached = temp_dir / "cached"
        shutil.copytree(out_dir, cached)
        cfg = load_config(overrides=TINY + ["environment.c_v=0", "data.noise_sigma=0"])

        runner = ExperimentRunner(cfg, seed=7, out_dir=str(cached), single_thread=True)
        assert not runner.cache_matches("corpora")
        assert not runner.cache_matches("models")
        corpora = runner.ensure_corpora()

        fresh = ExperimentRunner(cfg, seed=7, out_dir=str(temp_dir / "fresh"), single_thread=True).collect_corpora()
        for name in ("sma", "dma"):
            for split in ("train", "validation"):
                np.testing.assert_array_equal(corpora[name][split].states, fresh[name][split].states)
                np.testing.assert_array_equal(corpora[name][split].deltas, fresh[name][split].deltas)
        assert runner.cache_matches("corpora")

    def test_missing_stamp(self, tiny_run, temp_dir):
        out_dir, _ = tiny_run
        cached = temp_dir / "cached"
        shutil.copytree(out_dir, cached)
        (cached / "models" / "stamp.json").unlink()
        runner = ExperimentRunner(load_config(overrides=TINY), seed=0, out_dir=str(cached), single_thread=True)
        assert runner.cache_matches("corpora")
        assert not runner.cache_matches("models")


class TestCli:
    """Тесты командной строки."""

    def test_report(self, tiny_run, capsys):
        out_dir, _ = tiny_run
        assert main(["report", "--out", str(out_dir)]) == 0
        assert "eta_vaicam_vs_dfc" in capsys.readouterr().out

    def test_report_without_metrics(self, temp_dir):
        assert main(["report", "--out", str(temp_dir)]) == 1

    def test_bad_override(self, temp_dir):
        assert main(["collect", "--out", str(temp_dir), "--set", "experiment.velocities=[0.3, 0.2]"]) == 1


TREND_SEEDS = (0, 1, 2)
# Члены ансамбля и группы прогонов считаются в потоках; результат от числа потоков не зависит
TREND_OVERRIDES = ["experiment.workers=3"]


def mean_eta(overrides, experiments):
    """
    Средние по зёрнам значения eta для каждой скорости.

    Корпуса и модели собираются один раз на зерно и используются всеми запрошенными экспериментами.

    Returns:
        {номер эксперимента: {(скорость, пара методов): среднее eta}}
    """
    values = {experiment: {} for experiment in experiments}
    for seed in TREND_SEEDS:
        with tempfile.TemporaryDirectory() as tmpdirname:
            runner = ExperimentRunner(load_config(overrides=TREND_OVERRIDES + list(overrides)), seed=seed,
                                      out_dir=tmpdirname)
            runner.collect_corpora()
            runner.train_models()
            for experiment in experiments:
                rows = runner.run_experiment_1() if experiment == 1 else runner.run_experiment_2()
                for row in rows:
                    for pair, value in row.eta.items():
                        values[experiment].setdefault((row.velocity, pair), []).append(value)
    return {experiment: {key: float(np.mean(items)) for key, items in table.items()}
            for experiment, table in values.items()}


@pytest.fixture(scope="module")
def default_trends():
    """Оба эксперимента на конфигурации по умолчанию."""
    return mean_eta([], experiments=(1, 2))


@pytest.mark.slow
class TestTrends:
    """Направление эффектов на полной конфигурации (десятки минут)."""

    def test_dma_wins_at_high_speed(self, default_trends):
        for velocity in (0.40, 0.45, 0.50):
            assert default_trends[1][(velocity, ("dma", "sma"))] > 1.0

    def test_no_advantage_without_coupling(self):
        eta = mean_eta(["environment.c_v=0"], experiments=(1,))[1]
        assert all(0.5 <= value <= 2.0 for value in eta.values())

    def test_vaicam_wins_at_high_speed(self, default_trends):
        for (velocity, pair), value in default_trends[2].items():
            if pair == ("vaicam", "oracle") and velocity >= 0.25:
                assert value > 1.0
            if pair == ("vaicam", "dfc") and velocity >= 0.30:
                assert value > 1.0
