"""
Генерация референсных траекторий по позиции и силе.

Позиционная часть определяется видом профиля, силовая всегда синусоида
(нулевая амплитуда даёт постоянный референс).
"""
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.errors import ConfigurationError


class ProfileKind(str, Enum):
    STATIC_POINT = "static-point"          # неподвижная точка, постоянная сила
    SINE_FORCE = "sine-force"              # неподвижная точка, синусоидальная сила
    SINE_POSITION = "sine-position"        # синусоида по позиции и по силе
    LINE = "line-constant-velocity"        # прямая с постоянной скоростью, синусоидальная сила


@dataclass
class ReferenceProfile:
    """
    Описание одной референсной траектории.

    Attributes:
        kind: Вид профиля
        force_mean: Среднее силы, Н
        force_amplitude: Амплитуда силы, Н
        force_frequency: Частота силы, Гц
        force_phase: Фаза силы, рад (None - выбирается по seed)
        position_amplitude: Амплитуда касательной синусоиды, м (sine-position)
        position_frequency: Частота касательной синусоиды, Гц (sine-position)
        velocity: Скорость вдоль прямой, м/с (line)
        length: Длина прямой, м (line)
        duration: Длительность, с (для line по умолчанию length / velocity)
        heading: Направление движения в плоскости xy, рад
        origin: Начальная точка (x, y), м
        z_offset: Высота референса по z относительно поверхности, м (отрицательная - ниже)
    """
    kind: ProfileKind
    force_mean: float = 15.0
    force_amplitude: float = 0.0
    force_frequency: float = 0.5
    force_phase: Optional[float] = 0.0
    position_amplitude: float = 0.0
    position_frequency: float = 0.5
    velocity: float = 0.0
    length: float = 1.2
    duration: Optional[float] = None
    heading: float = 0.0
    origin: Tuple[float, float] = (0.0, 0.0)
    z_offset: float = -0.005

    def __post_init__(self):
        self.kind = ProfileKind(self.kind)
        self.origin = tuple(float(c) for c in self.origin)

    def validate(self) -> None:
        if self.force_frequency <= 0:
            raise ConfigurationError("Частота силового референса должна быть положительной")
        if self.kind is ProfileKind.SINE_POSITION and self.position_frequency <= 0:
            raise ConfigurationError("Частота позиционной синусоиды должна быть положительной")
        if self.kind is ProfileKind.LINE and (self.length <= 0 or self.velocity <= 0):
            raise ConfigurationError("Для прямой нужны положительные длина и скорость")
        if self.kind is not ProfileKind.LINE and self.duration is None:
            raise ConfigurationError(f"Для профиля {self.kind.value} нужна длительность")
        if self.duration is not None and self.duration <= 0:
            raise ConfigurationError("Длительность должна быть положительной")

    @property
    def total_duration(self) -> float:
        if self.duration is not None:
            return self.duration
        return self.length / self.velocity

    def n_steps(self, dt: float) -> int:
        return int(round(self.total_duration / dt))

    def peak_speed(self) -> float:
        """Максимальная касательная скорость референса, м/с."""
        if self.kind is ProfileKind.SINE_POSITION:
            return 2.0 * math.pi * self.position_frequency * self.position_amplitude
        if self.kind is ProfileKind.LINE:
            return self.velocity
        return 0.0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["kind"] = self.kind.value
        data["origin"] = list(self.origin)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ReferenceProfile":
        return cls(**data)


@dataclass
class ReferenceSeries:
    """
    Референсы, заранее вычисленные на сетке dt.

    Attributes:
        t: Время (T,)
        x_r: Референсная поза (T, 6)
        h_r: Референсная сила в соглашении h (T, 6); h_r[:, 2] = -F
    """
    t: np.ndarray
    x_r: np.ndarray
    h_r: np.ndarray
    profile: ReferenceProfile = field(repr=False, default=None)

    @property
    def force(self) -> np.ndarray:
        """Референс нормальной силы F, Н."""
        return -self.h_r[:, 2]


def gen_reference(profile: ReferenceProfile, seed: int, dt: float = 1e-3,
                  z_surface: float = 0.0) -> ReferenceSeries:
    """
    Детерминированный ряд референсов.

    Args:
        profile: Описание траектории
        seed: Зерно (используется для фазы силы, если она не задана)
        dt: Шаг дискретизации, с
        z_surface: Высота поверхности, м

    Returns:
        ReferenceSeries длиной round(duration / dt)
    """
    profile.validate()
    steps = profile.n_steps(dt)
    t = np.arange(steps) * dt

    phase = profile.force_phase
    if phase is None:
        phase = float(np.random.default_rng(seed).uniform(0.0, 2.0 * math.pi))
    force = profile.force_mean + profile.force_amplitude * np.sin(
        2.0 * math.pi * profile.force_frequency * t + phase)

    # Смещение вдоль направления движения
    if profile.kind is ProfileKind.SINE_POSITION:
        travel = profile.position_amplitude * np.sin(2.0 * math.pi * profile.position_frequency * t)
    elif profile.kind is ProfileKind.LINE:
        travel = profile.velocity * t
    else:
        travel = np.zeros(steps)

    x_r = np.zeros((steps, 6))
    x_r[:, 0] = profile.origin[0] + travel * math.cos(profile.heading)
    x_r[:, 1] = profile.origin[1] + travel * math.sin(profile.heading)
    x_r[:, 2] = z_surface + profile.z_offset

    h_r = np.zeros((steps, 6))
    h_r[:, 2] = -force
    return ReferenceSeries(t=t, x_r=x_r, h_r=h_r, profile=profile)


def line_profile(velocity: float, length: float = 1.2, max_duration: Optional[float] = None,
                 **kwargs) -> ReferenceProfile:
    """
    Прямая с постоянной скоростью; длительность length / velocity, ограниченная max_duration.
    """
    duration = length / velocity
    if max_duration is not None:
        duration = min(duration, max_duration)
    return ReferenceProfile(kind=ProfileKind.LINE, velocity=velocity, length=length,
                            duration=duration, **kwargs)


@dataclass
class SineRanges:
    """
    Диапазоны случайных параметров синусоидальных референсов обучающих корпусов.

    Амплитуда силы ограничивается долей среднего, чтобы референс оставался сжимающим.
    """
    force_amplitude: Tuple[float, float] = (5.0, 20.0)
    force_mean: Tuple[float, float] = (10.0, 25.0)
    force_frequency: Tuple[float, float] = (0.2, 2.0)
    max_amplitude_ratio: float = 0.8
    position_frequency: Tuple[float, float] = (0.2, 1.0)
    peak_speed: Tuple[float, float] = (0.05, 0.55)

    def validate(self) -> None:
        for name in ("force_amplitude", "force_mean", "force_frequency", "position_frequency", "peak_speed"):
            low, high = getattr(self, name)
            if low < 0 or high < low:
                raise ConfigurationError(f"Некорректный диапазон {name}: [{low}, {high}]")
        if self.force_frequency[0] <= 0 or self.position_frequency[0] <= 0:
            raise ConfigurationError("Частоты должны быть положительными")
        if not 0 < self.max_amplitude_ratio < 1:
            raise ConfigurationError("max_amplitude_ratio должен лежать в (0, 1)")


def sample_training_profiles(count: int, seed: int, duration: float, dynamic: bool,
                             ranges: Optional[SineRanges] = None,
                             z_offset: float = -0.005) -> List[ReferenceProfile]:
    """
    Случайные синусоидальные референсы для обучающих корпусов.

    Статический корпус - неподвижная точка и синусоида силы (sine-force).
    Динамический - дополнительно синусоида по позиции (sine-position); пиковые
    скорости стратифицированы по диапазону, чтобы корпус покрывал весь интервал скоростей.

    Args:
        count: Число профилей
        seed: Зерно
        duration: Длительность каждого профиля, с
        dynamic: Добавлять ли движение по поверхности
        ranges: Диапазоны параметров
        z_offset: Высота референса относительно поверхности, м

    Returns:
        Список профилей одинаковой длительности
    """
    ranges = ranges or SineRanges()
    ranges.validate()
    rng = np.random.default_rng(seed)
    profiles = []
    for i in range(count):
        mean = rng.uniform(*ranges.force_mean)
        amplitude = min(rng.uniform(*ranges.force_amplitude), ranges.max_amplitude_ratio * mean)
        params = dict(
            force_mean=float(mean),
            force_amplitude=float(amplitude),
            force_frequency=float(rng.uniform(*ranges.force_frequency)),
            force_phase=float(rng.uniform(0.0, 2.0 * math.pi)),
            heading=float(rng.uniform(0.0, 2.0 * math.pi)),
            duration=duration,
            z_offset=z_offset,
        )
        if dynamic:
            low, high = ranges.peak_speed
            # Стратификация: i-й профиль получает скорость из i-го подынтервала
            peak = low + (high - low) * (i + rng.uniform()) / count
            frequency = float(rng.uniform(*ranges.position_frequency))
            profiles.append(ReferenceProfile(
                kind=ProfileKind.SINE_POSITION, position_frequency=frequency,
                position_amplitude=float(peak / (2.0 * math.pi * frequency)), **params,
            ))
        else:
            profiles.append(ReferenceProfile(kind=ProfileKind.SINE_FORCE, **params))
    return profiles


def grid_profiles(velocities: List[float], per_velocity: int, seed: int, length: float = 1.2,
                  max_duration: Optional[float] = None, force_mean: float = 15.0,
                  force_amplitude: float = 5.0, force_frequency: float = 0.5,
                  z_offset: float = -0.005) -> List[List[ReferenceProfile]]:
    """
    Тестовая сетка: per_velocity прямых на каждую скорость.

    Внутри одной скорости траектории различаются фазой силового референса и направлением.

    Returns:
        Список групп профилей (по одной группе на скорость, профили группы одной длительности)
    """
    rng = np.random.default_rng(seed)
    grid = []
    for velocity in velocities:
        group = []
        for _ in range(per_velocity):
            group.append(line_profile(
                velocity, length=length, max_duration=max_duration,
                force_mean=force_mean, force_amplitude=force_amplitude, force_frequency=force_frequency,
                force_phase=float(rng.uniform(0.0, 2.0 * math.pi)),
                heading=float(rng.uniform(0.0, 2.0 * math.pi)), z_offset=z_offset,
            ))
        grid.append(group)
    return grid
