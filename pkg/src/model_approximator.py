"""
Аппроксиматор модели: ансамбль полносвязных сетей, предсказывающих приращение состояния.

    s_{k+1} = s_k + delta_s(s_k, x_f)

Статический режим (SMA) использует состояние (z, z_dot, f_z), динамический (DMA) -
(z, z_dot, v, f_z). Прямой проход, обратное распространение и Adam написаны вручную
на тензорах torch (float64), чтобы обучение было детерминированным и проверяемым.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from src.errors import (
    ConfigurationError,
    DegenerateDataError,
    DivergenceError,
    ModelNotReadyError,
    ShapeError,
)
from src.utils.logging_utils import setup_logger

# Настраиваем логгер
logger = setup_logger("model_approximator")

DTYPE = torch.float64

# Плоский список параметров сети: [W0, b0, W1, b1, ...], W имеет форму (out, in)
Member = List[torch.Tensor]


class StateMode(str, Enum):
    """Раскладка состояния аппроксиматора."""
    STATIC = "static"
    DYNAMIC = "dynamic"


STATE_FIELDS: Dict[StateMode, Tuple[str, ...]] = {
    StateMode.STATIC: ("z", "z_dot", "f_z"),
    StateMode.DYNAMIC: ("z", "z_dot", "v", "f_z"),
}


def state_fields(mode: Union[StateMode, str]) -> Tuple[str, ...]:
    return STATE_FIELDS[StateMode(mode)]


@dataclass
class StateSample:
    """
    Состояние аппроксиматора s = (z, z_dot, v, f_z) и приложенная уставка x_f_z.

    Поля могут быть скалярами или массивами одинаковой формы (пачка состояний).
    В статическом режиме v не используется и может быть None.
    """
    z: Any
    z_dot: Any
    f_z: Any
    v: Any = None
    x_f_z: Any = None

    def state_vector(self, mode: Union[StateMode, str]) -> np.ndarray:
        """Состояние в виде массива (..., 3 или 4) в порядке STATE_FIELDS."""
        names = state_fields(mode)
        if "v" in names and self.v is None:
            raise ShapeError("Для динамического режима нужна касательная скорость v")
        columns = [np.asarray(getattr(self, name), dtype=float) for name in names]
        vector = np.stack(np.broadcast_arrays(*columns), axis=-1)
        if not np.all(np.isfinite(vector)):
            raise ShapeError("Состояние содержит нефинитные значения")
        return vector

    @classmethod
    def from_state_vector(cls, vector: np.ndarray, mode: Union[StateMode, str],
                          x_f_z: Any = None) -> "StateSample":
        names = state_fields(mode)
        vector = np.asarray(vector, dtype=float)
        if vector.shape[-1] != len(names):
            raise ShapeError(f"Ожидалось {len(names)} компонент состояния, получено {vector.shape[-1]}")
        values = {name: vector[..., i] for i, name in enumerate(names)}
        return cls(x_f_z=x_f_z, **values)


@dataclass
class NetworkConfig:
    """
    Конфигурация ансамбля (значения по умолчанию - опубликованная конфигурация).

    batch_size, lr_patience, lr_factor - параметры обучения, не заданные в исходной постановке.
    """
    n_estimators: int = 3
    hidden_layers: int = 3
    neurons_per_layer: int = 200
    learning_rate: float = 1e-3
    epochs: int = 50
    activation: str = "relu"
    fusion: str = "mean"
    loss: str = "mse"
    batch_size: int = 256
    lr_patience: int = 5
    lr_factor: float = 0.5

    def validate(self) -> None:
        if self.n_estimators < 1:
            raise ConfigurationError("n_estimators должно быть >= 1")
        if self.hidden_layers < 0 or self.neurons_per_layer < 1:
            raise ConfigurationError("Некорректная топология сети")
        if not self.learning_rate > 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("learning_rate, epochs и batch_size должны быть положительными")
        if self.activation != "relu" or self.fusion != "mean" or self.loss != "mse":
            raise ConfigurationError(
                f"Поддерживаются только relu/mean/mse, получено "
                f"{self.activation}/{self.fusion}/{self.loss}"
            )
        if self.lr_patience < 1 or not 0 < self.lr_factor <= 1:
            raise ConfigurationError("lr_patience >= 1, lr_factor в (0, 1]")


def normalize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """
    (x - mean) / std.

    Raises:
        DegenerateDataError: есть нулевое или нефинитное std
    """
    std = np.asarray(std, dtype=float)
    if np.any(~np.isfinite(std)) or np.any(std <= 0):
        raise DegenerateDataError("Стандартное отклонение должно быть положительным")
    return (np.asarray(x, dtype=float) - mean) / std


def denormalize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Обратное преобразование к normalize: x * std + mean."""
    std = np.asarray(std, dtype=float)
    if np.any(~np.isfinite(std)) or np.any(std <= 0):
        raise DegenerateDataError("Стандартное отклонение должно быть положительным")
    return np.asarray(x, dtype=float) * std + mean


@dataclass
class NormStats:
    """Средние и стандартные отклонения входов (состояние + уставка) и целей (приращения)."""
    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    @classmethod
    def from_data(cls, inputs: np.ndarray, targets: np.ndarray) -> "NormStats":
        """
        Статистики по обучающей выборке.

        Входной признак с нулевой дисперсией - ошибка; цель с нулевой дисперсией
        только центрируется (std заменяется на 1).

        Постоянство столбца проверяется точно: размах равен 0.
        """
        constant_inputs = np.ptp(inputs, axis=0) == 0
        if np.any(constant_inputs):
            raise DegenerateDataError(
                f"Признаки с нулевой дисперсией: {np.flatnonzero(constant_inputs).tolist()}"
            )
        constant_targets = np.ptp(targets, axis=0) == 0
        target_mean = np.where(constant_targets, targets[0], targets.mean(axis=0))
        target_std = np.where(constant_targets, 1.0, targets.std(axis=0))
        return cls(inputs.mean(axis=0), inputs.std(axis=0), target_mean, target_std)


def layer_sizes(input_dim: int, output_dim: int, hidden_layers: int, neurons: int) -> List[int]:
    return [input_dim] + [neurons] * hidden_layers + [output_dim]


def init_member(sizes: Sequence[int], generator: torch.Generator) -> Member:
    """
    Равномерная инициализация с масштабом по fan-in (He), нулевые смещения.
    """
    member: Member = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weight = (torch.rand(fan_out, fan_in, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound
        member.extend([weight, torch.zeros(fan_out, dtype=DTYPE)])
    return member


def _layers(member: Member) -> List[Tuple[torch.Tensor, torch.Tensor]]:
    return list(zip(member[0::2], member[1::2]))


def member_forward(member: Member, inputs: torch.Tensor) -> Tuple[torch.Tensor, Tuple[list, list]]:
    """
    Прямой проход по нормализованным входам.

    Returns:
        Выход сети и кэш (входы слоёв, преактивации скрытых слоёв) для обратного прохода
    """
    layers = _layers(member)
    activations = [inputs]
    pre_activations = []
    hidden = inputs
    for weight, bias in layers[:-1]:
        z = hidden @ weight.T + bias
        pre_activations.append(z)
        hidden = torch.relu(z)
        activations.append(hidden)
    weight, bias = layers[-1]
    return hidden @ weight.T + bias, (activations, pre_activations)


def backprop(member: Member, batch: Tuple[torch.Tensor, torch.Tensor]) -> Tuple[Member, float]:
    """
    Точные градиенты MSE пачки по всем весам и смещениям.

    MSE усредняется по всем элементам выхода: L = mean((y - t)^2).

    Args:
        member: Параметры сети
        batch: (нормализованные входы (n, d_in), нормализованные цели (n, d_out))

    Returns:
        Градиенты в той же раскладке, что и member, и значение функции потерь
    """
    inputs, targets = batch
    outputs, (activations, pre_activations) = member_forward(member, inputs)
    residual = outputs - targets
    loss = float(torch.mean(residual ** 2))

    layers = _layers(member)
    grads: Member = [None] * len(member)
    grad_out = 2.0 * residual / residual.numel()
    for i in reversed(range(len(layers))):
        weight, _ = layers[i]
        grads[2 * i] = grad_out.T @ activations[i]
        grads[2 * i + 1] = grad_out.sum(dim=0)
        if i > 0:
            grad_out = (grad_out @ weight) * (pre_activations[i - 1] > 0).to(DTYPE)
    return grads, loss


@dataclass
class AdamState:
    """Моменты Adam по каждому тензору параметров."""
    m: List[torch.Tensor]
    v: List[torch.Tensor]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, weights: Sequence[torch.Tensor], **kwargs) -> "AdamState":
        return cls([torch.zeros_like(w) for w in weights], [torch.zeros_like(w) for w in weights], **kwargs)


def adam_step(weights: Sequence[torch.Tensor], grads: Sequence[torch.Tensor],
              st: AdamState, lr: float) -> Tuple[List[torch.Tensor], AdamState]:
    """
    Шаг Adam с коррекцией смещения моментов.

    Returns:
        Новые веса и новое состояние оптимизатора (входные тензоры не меняются)
    """
    if len(weights) != len(grads) or len(weights) != len(st.m):
        raise ShapeError("Число тензоров весов, градиентов и моментов не совпадает")
    for w, g, m in zip(weights, grads, st.m):
        if w.shape != g.shape or w.shape != m.shape:
            raise ShapeError(f"Несовпадение форм: {tuple(w.shape)} / {tuple(g.shape)} / {tuple(m.shape)}")

    t = st.t + 1
    b1, b2 = st.beta1, st.beta2
    m_new = [b1 * m + (1.0 - b1) * g for m, g in zip(st.m, grads)]
    v_new = [b2 * v + (1.0 - b2) * g * g for v, g in zip(st.v, grads)]
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    new_weights = [
        w - lr * (m / correction1) / (torch.sqrt(v / correction2) + st.epsilon)
        for w, m, v in zip(weights, m_new, v_new)
    ]
    return new_weights, AdamState(m_new, v_new, t, b1, b2, st.epsilon)


def _to_tensor(array: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(array, dtype=np.float64))


def model_inputs(s: StateSample, x_f_z: Any, mode: Union[StateMode, str]) -> np.ndarray:
    """Вход сети: состояние в раскладке режима и уставка по z последним столбцом."""
    state = s.state_vector(mode)
    action = np.broadcast_to(np.asarray(x_f_z, dtype=float), state.shape[:-1])
    return np.concatenate([state, action[..., None]], axis=-1)


def forward(s: StateSample, x_f_z: Any, member: Member, norm_stats: NormStats,
            mode: Union[StateMode, str] = StateMode.DYNAMIC) -> np.ndarray:
    """
    Приращение состояния, предсказанное одной сетью ансамбля.

    Args:
        s: Текущее состояние
        x_f_z: Уставка по z, м
        member: Параметры сети
        norm_stats: Статистики нормализации
        mode: Раскладка состояния

    Returns:
        Денормализованное приращение (..., 3 или 4)

    Raises:
        ShapeError: размерность входа не совпадает с первым слоем сети
    """
    inputs = model_inputs(s, x_f_z, mode)
    return _forward_inputs(inputs, member, norm_stats)


def _forward_inputs(inputs: np.ndarray, member: Member, norm_stats: NormStats) -> np.ndarray:
    expected = member[0].shape[1]
    if inputs.shape[-1] != expected:
        raise ShapeError(f"Сеть ожидает {expected} входов, получено {inputs.shape[-1]}")
    lead_shape = inputs.shape[:-1]
    flat = normalize(inputs.reshape(-1, expected), norm_stats.input_mean, norm_stats.input_std)
    with torch.no_grad():
        outputs, _ = member_forward(member, _to_tensor(flat))
    delta = denormalize(outputs.numpy(), norm_stats.target_mean, norm_stats.target_std)
    return delta.reshape(lead_shape + (delta.shape[-1],))


@dataclass
class EnsembleModel:
    """
    Ансамбль из N независимо обученных сетей одинаковой топологии.

    Выход ансамбля - среднее арифметическое выходов членов (fusion).
    Инференс только читает параметры и безопасен для параллельных вызовов.
    """
    state_mode: StateMode
    hidden_layers: int
    neurons_per_layer: int
    members: List[Member] = field(default_factory=list)
    norm_stats: Optional[NormStats] = None
    history: List[Dict[str, Any]] = field(default_factory=list)

    def __post_init__(self):
        self.state_mode = StateMode(self.state_mode)

    @property
    def state_dim(self) -> int:
        return len(STATE_FIELDS[self.state_mode])

    @property
    def input_dim(self) -> int:
        return self.state_dim + 1

    @property
    def is_trained(self) -> bool:
        return bool(self.members) and self.norm_stats is not None

    def ensure_ready(self) -> None:
        if not self.is_trained:
            raise ModelNotReadyError(
                f"Модель ({self.state_mode.value}) не обучена или не содержит статистик нормализации"
            )

    def member_deltas(self, inputs: np.ndarray) -> List[np.ndarray]:
        """Приращения от каждой сети для готовых входов (..., d_in)."""
        self.ensure_ready()
        return [_forward_inputs(inputs, member, self.norm_stats) for member in self.members]

    def predict_delta(self, inputs: np.ndarray) -> np.ndarray:
        """Усреднённое (fusion) приращение состояния."""
        deltas = self.member_deltas(inputs)
        return sum(deltas) / len(deltas)

    def predict_next(self, s: StateSample, x_c: Any) -> StateSample:
        """s_{k+1} = s_k + среднее приращение по ансамблю."""
        self.ensure_ready()
        state = s.state_vector(self.state_mode)
        delta = self.predict_delta(model_inputs(s, x_c, self.state_mode))
        return StateSample.from_state_vector(state + delta, self.state_mode, x_f_z=x_c)


def predict_next(s: StateSample, x_c: Any, model: EnsembleModel) -> StateSample:
    """
    Предсказание следующего состояния для уставки-кандидата x_c.

    Raises:
        ModelNotReadyError: модель не обучена
    """
    return model.predict_next(s, x_c)


def _mse(member: Member, inputs: torch.Tensor, targets: torch.Tensor) -> float:
    with torch.no_grad():
        outputs, _ = member_forward(member, inputs)
    return float(torch.mean((outputs - targets) ** 2))


def _member_seeds(seed: int, count: int) -> List[int]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for child in children]


def _train_member(index: int, member_seed: int, data: Tuple[torch.Tensor, ...],
                  sizes: List[int], cfg: NetworkConfig, progress: bool) -> Tuple[Member, List[Dict[str, Any]]]:
    x_train, y_train, x_val, y_val = data
    generator = torch.Generator().manual_seed(member_seed)
    weights = init_member(sizes, generator)
    state = AdamState.zeros_like(weights)
    lr = cfg.learning_rate
    best_val = math.inf
    stale_epochs = 0
    history = []
    n = x_train.shape[0]

    epochs = tqdm(range(1, cfg.epochs + 1), desc=f"member {index}", disable=not progress)
    for epoch in epochs:
        permutation = torch.randperm(n, generator=generator)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = permutation[start:start + cfg.batch_size]
            grads, loss = backprop(weights, (x_train[idx], y_train[idx]))
            weights, state = adam_step(weights, grads, state, lr)
            total += loss * len(idx)
        train_mse = total / n
        val_mse = _mse(weights, x_val, y_val)
        if not (math.isfinite(train_mse) and math.isfinite(val_mse)):
            raise DivergenceError(f"Сеть {index}: нефинитная функция потерь на эпохе {epoch}")

        history.append({"member": index, "epoch": epoch, "train_mse": train_mse,
                        "val_mse": val_mse, "learning_rate": lr})
        logger.debug(f"Сеть {index}, эпоха {epoch}: train={train_mse:.6g} val={val_mse:.6g} lr={lr:.3g}")

        # Уменьшаем шаг, если валидационная ошибка не улучшается lr_patience эпох подряд
        if val_mse < best_val:
            best_val = val_mse
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= cfg.lr_patience:
                lr *= cfg.lr_factor
                stale_epochs = 0
                logger.debug(f"Сеть {index}: learning rate уменьшен до {lr:.3g}")

    logger.info(f"Сеть {index} обучена: train={history[-1]['train_mse']:.6g}, val={history[-1]['val_mse']:.6g}")
    return weights, history


def train(dataset, cfg: NetworkConfig, seed: int, validation=None,
          workers: int = 1, progress: bool = False) -> EnsembleModel:
    """
    Обучение ансамбля с нуля.

    Args:
        dataset: Обучающая выборка (Dataset из data_pipeline)
        cfg: Конфигурация сети
        seed: Зерно; каждая сеть получает своё дочернее зерно для инициализации и перемешивания
        validation: Валидационная выборка (обязательна)
        workers: Число потоков для параллельного обучения членов ансамбля
        progress: Показывать прогресс-бар по эпохам

    Returns:
        Обученная модель со статистиками нормализации обучающей выборки

    Raises:
        DegenerateDataError: пустые выборки, нефинитные данные, признак с нулевой дисперсией
        DivergenceError: нефинитная функция потерь
    """
    cfg.validate()
    if dataset is None or len(dataset) == 0:
        raise DegenerateDataError("Обучающая выборка пуста")
    if validation is None or len(validation) == 0:
        raise DegenerateDataError("Нужна непустая валидационная выборка")
    if StateMode(validation.state_mode) != StateMode(dataset.state_mode):
        raise ShapeError("Режимы состояния обучающей и валидационной выборок различаются")

    inputs, targets = dataset.inputs(), dataset.deltas
    val_inputs, val_targets = validation.inputs(), validation.deltas
    for array in (inputs, targets, val_inputs, val_targets):
        if not np.all(np.isfinite(array)):
            raise DegenerateDataError("Выборка содержит нефинитные значения")

    stats = NormStats.from_data(inputs, targets)
    data = (
        _to_tensor(normalize(inputs, stats.input_mean, stats.input_std)),
        _to_tensor(normalize(targets, stats.target_mean, stats.target_std)),
        _to_tensor(normalize(val_inputs, stats.input_mean, stats.input_std)),
        _to_tensor(normalize(val_targets, stats.target_mean, stats.target_std)),
    )
    sizes = layer_sizes(inputs.shape[1], targets.shape[1], cfg.hidden_layers, cfg.neurons_per_layer)
    seeds = _member_seeds(seed, cfg.n_estimators)
    logger.info(
        f"Обучение ансамбля ({StateMode(dataset.state_mode).value}): N={cfg.n_estimators}, "
        f"слои={sizes}, train={len(dataset)}, val={len(validation)}"
    )

    def run(index: int):
        return _train_member(index, seeds[index], data, sizes, cfg, progress)

    # Члены ансамбля не разделяют изменяемых данных, поэтому их можно обучать параллельно
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(cfg.n_estimators)))
    else:
        results = [run(index) for index in range(cfg.n_estimators)]

    model = EnsembleModel(StateMode(dataset.state_mode), cfg.hidden_layers, cfg.neurons_per_layer)
    model.members = [weights for weights, _ in results]
    model.norm_stats = stats
    model.history = [row for _, history in results for row in history]
    return model


def normalized_mse(model: EnsembleModel, dataset) -> float:
    """MSE ансамбля на выборке в нормализованных единицах целей."""
    model.ensure_ready()
    stats = model.norm_stats
    predicted = model.predict_delta(dataset.inputs())
    residual = (predicted - dataset.deltas) / stats.target_std
    return float(np.mean(residual ** 2))
