"""
Контур управления силой: импедансный закон, прямой регулятор силы (DFC) и
выбор остаточного действия по предсказаниям аппроксиматора модели (VAICAM).

Соглашение о знаках: h - сила, с которой рабочий орган действует на поверхность,
ось z направлена вверх. Поэтому h_e,z = -f_z, а референс F ньютонов задаётся как h_r,z = -F.
В этом соглашении закон DFC применяется буквально: x_f = x_r + Gamma(K_P dh + K_I int dh dt).
"""
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, Tuple

import numpy as np

from src.errors import ConfigurationError, InputError, ModelNotReadyError
from src.model_approximator import StateSample, predict_next
from src.plant_sim import ImpedanceGains

Z_AXIS = 2

CONTROLLER_IDS = ("dfc", "oracle", "vaicam")


def impedance_wrench(delta_x: np.ndarray, x_dot: np.ndarray, gains: ImpedanceGains) -> np.ndarray:
    """
    Импедансный закон h_c = K_d * dx - D_d * x_dot (демпфирование против скорости).

    Суррогатный объект сам реализует этот закон; функция нужна для диагностики.
    """
    return gains.K_d * np.asarray(delta_x, dtype=float) - gains.D_d * np.asarray(x_dot, dtype=float)


@dataclass
class DfcConfig:
    """
    Параметры прямого регулятора силы.

    Attributes:
        K_P: Пропорциональный коэффициент, м/Н
        K_I: Интегральный коэффициент, м/(Н*с)
        Gamma: Маска осей с управлением по силе (6 значений из {0, 1})
        x_r: Референсная поза по умолчанию (прогоны передают свою на каждом шаге)
        integrator_limit: Симметричное ограничение интеграла ошибки, Н*с
        contact_threshold: Порог силы для обнаружения контакта, Н
        contact_steps: Число шагов подряд выше порога для активации
    """
    K_P: float = 1e-6
    K_I: float = 2e-3
    Gamma: Tuple[int, ...] = (0, 0, 1, 0, 0, 0)
    x_r: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    integrator_limit: float = 5e4
    contact_threshold: float = 0.5
    contact_steps: int = 5

    @property
    def mask(self) -> np.ndarray:
        return np.asarray(self.Gamma, dtype=float)

    def validate(self) -> None:
        if len(self.Gamma) != 6 or any(g not in (0, 1) for g in self.Gamma):
            raise ConfigurationError(f"Gamma должна содержать 6 значений из {{0, 1}}: {self.Gamma}")
        if len(self.x_r) != 6:
            raise ConfigurationError("x_r должна содержать 6 компонент")
        if self.K_P < 0 or self.K_I < 0:
            raise ConfigurationError("K_P и K_I не могут быть отрицательными")
        if not self.integrator_limit > 0:
            raise ConfigurationError("integrator_limit должен быть положительным")
        if self.contact_threshold < 0 or self.contact_steps < 1:
            raise ConfigurationError("Некорректные параметры обнаружения контакта")


@dataclass
class DfcState:
    """
    Состояние регулятора.

    Attributes:
        integral: Накопленная ошибка по силе, Н*с; форма (..., 6)
        x_c_prev: Предыдущее выбранное остаточное действие, м; форма (..., 6)
        delta_h_prev: Ошибка по силе на предыдущем шаге (для метода трапеций)
    """
    integral: np.ndarray
    x_c_prev: np.ndarray
    delta_h_prev: np.ndarray

    @classmethod
    def zeros(cls, batch: Optional[int] = None) -> "DfcState":
        shape = (6,) if batch is None else (batch, 6)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape))

    def reset_rows(self, rows: np.ndarray) -> "DfcState":
        """Обнуляет интеграл и предыдущие значения в строках rows (булева маска)."""
        keep = ~np.asarray(rows, dtype=bool)[..., None]
        return DfcState(self.integral * keep, self.x_c_prev * keep, self.delta_h_prev * keep)


def dfc_step(h_r: np.ndarray, h_e: np.ndarray, cfg: DfcConfig, st: DfcState, dt: float,
             x_r: Optional[np.ndarray] = None) -> Tuple[np.ndarray, DfcState]:
    """
    Шаг ПИ-регулятора силы.

    Args:
        h_r: Референсная сила (..., 6)
        h_e: Измеренная сила (..., 6)
        cfg: Параметры регулятора
        st: Состояние регулятора
        dt: Шаг, с
        x_r: Референсная поза (..., 6); по умолчанию cfg.x_r

    Returns:
        Уставка x_f и новое состояние. Для осей с gamma_i = 0 x_f,i = x_r,i в точности.
    """
    if not dt > 0:
        raise ConfigurationError(f"dt должен быть положительным: {dt}")
    x_r = np.asarray(cfg.x_r if x_r is None else x_r, dtype=float)
    delta_h = np.asarray(h_r, dtype=float) - np.asarray(h_e, dtype=float)

    # Трапеции + симметричный anti-windup
    integral = st.integral + 0.5 * (delta_h + st.delta_h_prev) * dt
    integral = np.clip(integral, -cfg.integrator_limit, cfg.integrator_limit)

    correction = cfg.K_P * delta_h + cfg.K_I * integral
    mask = np.broadcast_to(cfg.mask.astype(bool), np.broadcast_shapes(x_r.shape, correction.shape))
    x_f = np.where(mask, x_r + correction, x_r)
    return x_f, DfcState(integral, st.x_c_prev, delta_h)


@dataclass
class VaicamParams:
    """
    Параметры оптимизатора остаточного действия.

    Attributes:
        alpha: Штраф за величину действия
        beta: Штраф за изменение действия между шагами
        rho: Радиус поиска, м
        n_candidates: Нечётное число точек сетки, чтобы x_f всегда был кандидатом
    """
    alpha: float = 25.0
    beta: float = 200.0
    rho: float = 0.003
    n_candidates: int = 21

    def validate(self) -> None:
        if self.rho < 0:
            raise ConfigurationError(f"rho не может быть отрицательным: {self.rho}")
        if self.n_candidates < 1 or self.n_candidates % 2 == 0:
            raise ConfigurationError(f"n_candidates должно быть нечётным и >= 1: {self.n_candidates}")
        if np.any(np.asarray(self.alpha) < 0) or np.any(np.asarray(self.beta) < 0):
            raise ConfigurationError("alpha и beta не могут быть отрицательными")

    def offsets(self) -> np.ndarray:
        """Симметричная сетка смещений в [-rho, rho]; центр ровно 0, края ровно +-rho."""
        half = self.n_candidates // 2
        if half == 0:
            return np.zeros(1)
        return self.rho * (np.arange(-half, half + 1) / half)


def regularizer(x_c: Any, x_c_prev: Any, params: VaicamParams) -> Any:
    """
    Omega(x_c) = sum_i alpha_i x_c,i^2 + sum_i beta_i |x_c,i - x_c,i(k-1)|.

    Последняя ось - управляемые оси; для скаляров считается одна ось.
    """
    x_c = np.asarray(x_c, dtype=float)
    x_c_prev = np.asarray(x_c_prev, dtype=float)
    terms = params.alpha * x_c ** 2 + params.beta * np.abs(x_c - x_c_prev)
    if terms.ndim == 0:
        return float(terms)
    return np.sum(terms, axis=-1)


class TransitionModel(Protocol):
    """Всё, что умеет предсказывать следующее состояние по уставке-кандидату."""

    @property
    def is_trained(self) -> bool: ...

    def predict_next(self, s: StateSample, x_c: Any) -> StateSample: ...


@dataclass
class Selection:
    """Результат оптимизации: уставка, остаточное действие и значение функции стоимости."""
    setpoint: np.ndarray
    residual: np.ndarray
    cost: np.ndarray


def candidate_preference(params: VaicamParams) -> np.ndarray:
    """Порядок кандидатов при равной стоимости: ближе к x_f, затем меньшее значение."""
    offsets = params.offsets()
    return np.lexsort((offsets, np.abs(offsets)))


def vaicam_select(x_f: Any, s: StateSample, h_r: Any, st: Any,
                  params: VaicamParams, model: Optional[TransitionModel]) -> Selection:
    """
    Выбор остаточного действия перебором по сетке B_rho(x_f) (только ось z).

    Для каждого кандидата x_c = x_f + r модель предсказывает силу f_hat, откуда
    h_e_hat = -f_hat; стоимость L = |h_r - h_e_hat| + Omega(r).

    Args:
        x_f: Уставка DFC по z, скаляр или (B,)
        s: Текущее состояние (поля скаляры или (B,))
        h_r: Референсная сила по z в соглашении h (т.е. -F)
        st: Состояние регулятора (DfcState) или остаточное действие по z, выбранное на предыдущем шаге
        params: Параметры оптимизатора
        model: Аппроксиматор модели

    Returns:
        Selection; setpoint всегда лежит в [x_f - rho, x_f + rho]

    Raises:
        ModelNotReadyError: модель не обучена (при rho > 0)
    """
    x_f = np.asarray(x_f, dtype=float)
    if params.rho == 0:
        zeros = np.zeros_like(x_f)
        return Selection(x_f.copy(), zeros, np.full_like(x_f, np.nan))
    if model is None or not model.is_trained:
        raise ModelNotReadyError("Для выбора остаточного действия нужна обученная модель")

    offsets = params.offsets()
    order = candidate_preference(params)
    offsets = offsets[order]

    # Кандидаты: (..., n)
    candidates = x_f[..., None] + offsets
    expand = lambda value: None if value is None else np.broadcast_to(
        np.asarray(value, dtype=float)[..., None], candidates.shape)
    batch_state = StateSample(z=expand(s.z), z_dot=expand(s.z_dot), f_z=expand(s.f_z), v=expand(s.v))
    predicted = predict_next(batch_state, candidates, model)
    h_e_hat = -np.asarray(predicted.f_z, dtype=float)

    residuals = np.broadcast_to(offsets, candidates.shape)
    if isinstance(st, DfcState):
        st = st.x_c_prev[..., Z_AXIS]
    prev = np.asarray(st, dtype=float)[..., None]
    cost = np.abs(np.asarray(h_r, dtype=float)[..., None] - h_e_hat) + regularizer(
        residuals[..., None], prev[..., None], params)

    # argmin берёт первый минимум, а кандидаты уже упорядочены по предпочтению
    best = np.argmin(cost, axis=-1)
    pick = lambda array: np.take_along_axis(array, best[..., None], axis=-1)[..., 0]
    return Selection(pick(candidates), pick(residuals), pick(cost))


@dataclass
class ContactMonitor:
    """
    Обнаружение контакта с антидребезгом: f_z > threshold в течение steps шагов подряд.

    После активации строка остаётся активной до конца прогона.
    """
    threshold: float = 0.5
    steps: int = 5
    counter: np.ndarray = None
    active: np.ndarray = None

    def reset(self, batch: int) -> None:
        self.counter = np.zeros(batch, dtype=int)
        self.active = np.zeros(batch, dtype=bool)

    def update(self, f_z: np.ndarray) -> np.ndarray:
        """
        Returns:
            Булева маска строк, активированных именно на этом шаге
        """
        above = np.asarray(f_z, dtype=float) > self.threshold
        self.counter = np.where(above, self.counter + 1, 0)
        newly = ~self.active & (self.counter >= self.steps)
        self.active = self.active | newly
        return newly


@dataclass
class ControlRecord:
    """Журнал одного шага управления (для CSV прогона)."""
    x_f: np.ndarray
    x_c_star: np.ndarray
    h_r: np.ndarray
    h_e: np.ndarray
    cost: np.ndarray
    active: np.ndarray


@dataclass
class ForceTrackingController:
    """
    DFC, дополненный (для oracle/vaicam) выбором остаточного действия.

    До обнаружения контакта уставка равна референсной позе. В момент активации
    интеграл и предыдущее остаточное действие обнуляются.
    ORACLE и VAICAM - один и тот же код, различающийся моделью (SMA или DMA).
    """
    controller_id: str
    dfc: DfcConfig = field(default_factory=DfcConfig)
    vaicam: VaicamParams = field(default_factory=VaicamParams)
    model: Optional[TransitionModel] = None
    dt: float = 1e-3

    def __post_init__(self):
        if self.controller_id not in CONTROLLER_IDS:
            raise InputError(f"Неизвестный регулятор {self.controller_id}, ожидается один из {CONTROLLER_IDS}")
        self.monitor = ContactMonitor(self.dfc.contact_threshold, self.dfc.contact_steps)
        self.state: Optional[DfcState] = None

    @property
    def uses_model(self) -> bool:
        return self.controller_id != "dfc"

    def reset(self, batch: int) -> None:
        if self.uses_model and self.vaicam.rho > 0 and (self.model is None or not self.model.is_trained):
            raise ModelNotReadyError(f"Регулятору {self.controller_id} нужна обученная модель")
        self.monitor.reset(batch)
        self.state = DfcState.zeros(batch)

    def act(self, x_r: np.ndarray, h_r: np.ndarray, s: StateSample,
            dither: Optional[np.ndarray] = None) -> Tuple[np.ndarray, ControlRecord]:
        """
        Один шаг управления для пачки прогонов.

        Args:
            x_r: Референсная поза (B, 6)
            h_r: Референсная сила (B, 6) в соглашении h
            s: Измеренное состояние (поля формы (B,))
            dither: Добавка к уставке z активных строк (B,); x_f в журнале её не содержит

        Returns:
            Уставка импедансному контуру (B, 6) и журнал шага
        """
        f_z = np.asarray(s.f_z, dtype=float)
        h_e = np.zeros_like(h_r)
        h_e[:, Z_AXIS] = -f_z

        newly = self.monitor.update(f_z)
        if np.any(newly):
            self.state = self.state.reset_rows(newly)
        active = self.monitor.active

        x_f, dfc_state = dfc_step(h_r, h_e, self.dfc, self.state, self.dt, x_r=x_r)
        # Неактивные строки держат регулятор в нуле
        dfc_state = dfc_state.reset_rows(~active)

        x_c = x_f.copy()
        cost = np.full(f_z.shape, np.nan)
        if self.uses_model and np.any(active):
            selection = vaicam_select(x_f[:, Z_AXIS], s, h_r[:, Z_AXIS],
                                      self.state.x_c_prev[:, Z_AXIS], self.vaicam, self.model)
            x_c[:, Z_AXIS] = np.where(active, selection.setpoint, x_f[:, Z_AXIS])
            dfc_state.x_c_prev[:, Z_AXIS] = np.where(active, selection.residual, 0.0)
            cost = np.where(active, selection.cost, np.nan)
        if dither is not None:
            x_c[:, Z_AXIS] = x_c[:, Z_AXIS] + np.where(active, np.asarray(dither, dtype=float), 0.0)

        setpoint = np.where(active[:, None], x_c, x_r)
        self.state = dfc_state
        record = ControlRecord(
            x_f=np.where(active[:, None], x_f, x_r), x_c_star=setpoint,
            h_r=h_r, h_e=h_e, cost=cost, active=active.copy(),
        )
        return setpoint, record
