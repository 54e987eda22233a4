"""
Суррогат робота под импедансным управлением в контакте с податливой поверхностью.

Замкнутый импедансный контур с идеальной компенсацией динамики моделируется
напрямую в декартовом пространстве как масса-пружина-демпфер:

    M_v * x_dd = K_d (x_c - x) - D_d x_d + F_contact

Вращательные степени свободы удерживаются на референсе и не интегрируются.
Все функции принимают массивы с ведущей batch-осью: каждая строка - независимый прогон.
"""
from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np

from src.errors import ConfigurationError, IntegrationFaultError

ArrayLike = Union[float, np.ndarray]

# Регуляризация кулоновского трения около нулевой скорости, м/с
FRICTION_VELOCITY_EPS = 1e-3


@dataclass
class EnvironmentModel:
    """
    Параметры поверхности.

    Attributes:
        z_surface: Высота поверхности, м
        k_e: Контактная жёсткость, Н/м
        d_e: Контактное демпфирование, Н*с/м
        c_v: Коэффициент влияния касательной скорости на жёсткость, с/м
        mu: Коэффициент кулоновского трения
    """
    z_surface: float = 0.0
    k_e: float = 1.0e4
    d_e: float = 20.0
    c_v: float = 0.5
    mu: float = 0.2

    def validate(self) -> None:
        if not self.k_e > 0:
            raise ConfigurationError(f"k_e должна быть положительной, получено {self.k_e}")
        for name in ("d_e", "c_v", "mu"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} не может быть отрицательным: {getattr(self, name)}")


@dataclass
class ImpedanceGains:
    """
    Параметры импедансного регулятора.

    K_d = diag(K_d_t, K_d_t, K_d_t, K_d_r, K_d_r, K_d_r), D_d,i = xi * sqrt(K_d,i).
    M_v - виртуальная масса суррогатной модели.
    """
    K_d_t: float = 1700.0
    K_d_r: float = 300.0
    xi: float = 1.0
    M_v: float = 1.0

    @property
    def K_d(self) -> np.ndarray:
        return np.array([self.K_d_t] * 3 + [self.K_d_r] * 3, dtype=float)

    @property
    def D_d(self) -> np.ndarray:
        return self.xi * np.sqrt(self.K_d)

    @property
    def natural_frequency(self) -> float:
        """omega_n = sqrt(max K_d,i / M_v), рад/с."""
        return float(np.sqrt(np.max(self.K_d) / self.M_v))

    def validate(self) -> None:
        for name in ("K_d_t", "K_d_r", "xi", "M_v"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} должен быть положительным: {getattr(self, name)}")


@dataclass
class PlantState:
    """
    Состояние суррогатного объекта.

    Attributes:
        x: Позиция (x, y, z), м; форма (..., 3)
        x_dot: Скорость, м/с; форма (..., 3)
        f_z: Нормальная контактная сила (сжатие), Н; форма (...)
        t: Время моделирования, с
    """
    x: np.ndarray
    x_dot: np.ndarray
    f_z: np.ndarray
    t: float = 0.0

    @property
    def z(self) -> np.ndarray:
        return self.x[..., 2]

    @property
    def z_dot(self) -> np.ndarray:
        return self.x_dot[..., 2]

    @property
    def v(self) -> np.ndarray:
        return tangential_speed(self.x_dot)

    def copy(self) -> "PlantState":
        return PlantState(self.x.copy(), self.x_dot.copy(), np.array(self.f_z, copy=True), self.t)


def tangential_speed(x_dot: np.ndarray) -> ArrayLike:
    """
    Касательная скорость v = sqrt(x_d^2 + y_d^2).

    Args:
        x_dot: Вектор скорости (..., 3)

    Returns:
        Неотрицательная скорость в плоскости контакта
    """
    x_dot = np.asarray(x_dot, dtype=float)
    speed = np.hypot(x_dot[..., 0], x_dot[..., 1])
    return speed if np.ndim(speed) else float(speed)


def _penalty_force(z, z_dot, v, env: EnvironmentModel) -> np.ndarray:
    penetration = env.z_surface - z
    force = env.k_e * penetration * (1.0 + env.c_v * v) + env.d_e * (-z_dot)
    # Односторонний контакт: без проникновения силы нет, прилипания тоже
    return np.where(penetration > 0.0, np.maximum(force, 0.0), 0.0)


def contact_force(z: ArrayLike, z_dot: ArrayLike, v: ArrayLike, env: EnvironmentModel) -> ArrayLike:
    """
    Нормальная сила пружинно-демпферного контакта, жёсткость которого растёт с касательной скоростью.

    Args:
        z: Высота рабочего органа, м
        z_dot: Нормальная скорость, м/с
        v: Касательная скорость, м/с
        env: Параметры поверхности

    Returns:
        max(0, k_e*delta*(1 + c_v*v) - d_e*z_dot) при delta = z_surface - z > 0, иначе 0
    """
    z, z_dot, v = (np.asarray(a, dtype=float) for a in (z, z_dot, v))
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(z_dot)) and np.all(np.isfinite(v))):
        raise IntegrationFaultError("Нефинитные входы при вычислении контактной силы")
    force = _penalty_force(z, z_dot, v, env)
    return force if np.ndim(force) else float(force)


def _acceleration(x: np.ndarray, x_dot: np.ndarray, x_c: np.ndarray,
                  gains: ImpedanceGains, env: EnvironmentModel) -> np.ndarray:
    stiffness = gains.K_d[:3]
    damping = gains.D_d[:3]
    force = stiffness * (x_c - x) - damping * x_dot

    v = np.hypot(x_dot[..., 0], x_dot[..., 1])
    f_z = _penalty_force(x[..., 2], x_dot[..., 2], v, env)

    # Сила реакции поверхности направлена вверх, трение - против касательной скорости
    friction_scale = env.mu * f_z / np.sqrt(v ** 2 + FRICTION_VELOCITY_EPS ** 2)
    force[..., 0] -= friction_scale * x_dot[..., 0]
    force[..., 1] -= friction_scale * x_dot[..., 1]
    force[..., 2] += f_z
    return force / gains.M_v


def max_stable_dt(gains: ImpedanceGains) -> float:
    """Граница шага 2/omega_n."""
    return 2.0 / gains.natural_frequency


def step(state: PlantState, x_c: np.ndarray, dt: float,
         gains: ImpedanceGains, env: EnvironmentModel) -> PlantState:
    """
    Один период управления методом Рунге-Кутты 4-го порядка.

    Args:
        state: Текущее состояние
        x_c: Командная уставка (..., 3) или (..., 6); используются трансляционные компоненты
        dt: Шаг, с
        gains: Параметры импеданса
        env: Параметры поверхности

    Returns:
        Новое состояние; f_z вычислена в новом состоянии

    Raises:
        ConfigurationError: dt <= 0 или dt > 2/omega_n
        IntegrationFaultError: нефинитный результат
    """
    if not 0.0 < dt <= max_stable_dt(gains):
        raise ConfigurationError(
            f"Шаг dt={dt} вне допустимого диапазона (0, {max_stable_dt(gains):.6g}]"
        )
    x_c = np.asarray(x_c, dtype=float)[..., :3]
    x, x_dot = state.x, state.x_dot

    k1_x, k1_v = x_dot, _acceleration(x, x_dot, x_c, gains, env)
    k2_x = x_dot + 0.5 * dt * k1_v
    k2_v = _acceleration(x + 0.5 * dt * k1_x, k2_x, x_c, gains, env)
    k3_x = x_dot + 0.5 * dt * k2_v
    k3_v = _acceleration(x + 0.5 * dt * k2_x, k3_x, x_c, gains, env)
    k4_x = x_dot + dt * k3_v
    k4_v = _acceleration(x + dt * k3_x, k4_x, x_c, gains, env)

    x_new = x + dt / 6.0 * (k1_x + 2.0 * k2_x + 2.0 * k3_x + k4_x)
    x_dot_new = x_dot + dt / 6.0 * (k1_v + 2.0 * k2_v + 2.0 * k3_v + k4_v)

    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(x_dot_new))):
        raise IntegrationFaultError(f"Интегрирование разошлось на t={state.t:.6f} с")

    f_z = contact_force(x_new[..., 2], x_dot_new[..., 2], tangential_speed(x_dot_new), env)
    return PlantState(x_new, x_dot_new, np.asarray(f_z, dtype=float), state.t + dt)


def mechanical_energy(state: PlantState, x_c: np.ndarray, gains: ImpedanceGains) -> np.ndarray:
    """Кинетическая + упругая энергия импедансного контура (без учёта контакта), Дж."""
    x_c = np.asarray(x_c, dtype=float)[..., :3]
    kinetic = 0.5 * gains.M_v * np.sum(state.x_dot ** 2, axis=-1)
    elastic = 0.5 * np.sum(gains.K_d[:3] * (x_c - state.x) ** 2, axis=-1)
    return kinetic + elastic


@dataclass
class PlantConfig:
    """
    Параметры прогона объекта.

    Attributes:
        dt: Период управления, с (1 кГц по умолчанию)
        start_height: Начальная высота рабочего органа над поверхностью, м
    """
    dt: float = 1e-3
    start_height: float = 0.002

    def validate(self, gains: ImpedanceGains) -> None:
        if not 0.0 < self.dt <= max_stable_dt(gains):
            raise ConfigurationError(
                f"dt={self.dt} нарушает условие устойчивости dt <= {max_stable_dt(gains):.6g}"
            )
        if self.start_height < 0:
            raise ConfigurationError(f"start_height не может быть отрицательной: {self.start_height}")


@dataclass
class SurrogatePlant:
    """
    Экземпляр объекта: параметры + текущее состояние пачки независимых прогонов.

    Экземпляры не разделяют изменяемых данных и могут использоваться в разных потоках.
    """
    gains: ImpedanceGains = field(default_factory=ImpedanceGains)
    env: EnvironmentModel = field(default_factory=EnvironmentModel)
    config: PlantConfig = field(default_factory=PlantConfig)
    state: PlantState = None

    def reset(self, xy: np.ndarray) -> PlantState:
        """
        Ставит рабочий орган над поверхностью в точках xy (форма (B, 2)) с нулевой скоростью.
        """
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        batch = xy.shape[0]
        x = np.zeros((batch, 3))
        x[:, :2] = xy
        x[:, 2] = self.env.z_surface + self.config.start_height
        x_dot = np.zeros((batch, 3))
        f_z = np.asarray(contact_force(x[:, 2], x_dot[:, 2], np.zeros(batch), self.env), dtype=float)
        self.state = PlantState(x, x_dot, f_z, 0.0)
        return self.state

    def advance(self, x_c: np.ndarray) -> PlantState:
        """Продвигает все прогоны на один период управления к уставкам x_c."""
        self.state = step(self.state, x_c, self.config.dt, self.gains, self.env)
        return self.state

    def static_penetration(self, z_c: float, v: float = 0.0) -> Tuple[float, float]:
        """
        Аналитическое равновесие по z при уставке z_c ниже поверхности.

        Баланс K_d,t*(z - z_c) = f_z = k_e*delta*(1 + c_v*v) даёт
        delta = K_d,t*(z_surface - z_c) / (K_d,t + k_e*(1 + c_v*v)).

        Returns:
            (delta, f_z)
        """
        k_env = self.env.k_e * (1.0 + self.env.c_v * v)
        delta = self.gains.K_d_t * (self.env.z_surface - z_c) / (self.gains.K_d_t + k_env)
        return delta, k_env * delta
