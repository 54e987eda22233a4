"""
Сбор прогонов замкнутого контура и их хранение в CSV.

Прогоны с одинаковой длительностью собираются пачкой: каждая строка пачки -
независимый прогон со своим референсом, объект интегрируется для всех строк сразу.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.control import ForceTrackingController, DfcConfig, VaicamParams, Z_AXIS
from src.data_pipeline.references import ReferenceProfile, gen_reference
from src.errors import ConfigurationError, FormatError, IntegrationFaultError, ShapeError
from src.model_approximator import StateMode, StateSample, state_fields
from src.plant_sim import SurrogatePlant
from src.utils.file_utils import read_file, write_file
from src.utils.logging_utils import setup_logger

# Настраиваем логгер
logger = setup_logger("rollout")

ROLLOUT_SCHEMA = 1
ROLLOUT_MAGIC = "# vaicam-rollout"
ROLLOUT_COLUMNS = ("t", "z", "z_dot", "v", "f_z", "x_f_z", "x_c_star_z", "h_r_z", "cost", "active")
FLOAT_FORMAT = "%.17g"
# Поток генератора для добавки к уставке, отдельный от потока референса
DITHER_STREAM = 1


@dataclass
class Rollout:
    """
    Записанный прогон: состояние s_k, уставки и референс на каждом шаге.

    x_f_z - выход DFC, x_c_star_z - уставка, реально отправленная объекту.
    meta содержит profile, seed, controller, velocity, state_mode, dt.
    """
    t: np.ndarray
    z: np.ndarray
    z_dot: np.ndarray
    v: np.ndarray
    f_z: np.ndarray
    x_f_z: np.ndarray
    x_c_star_z: np.ndarray
    h_r_z: np.ndarray
    cost: np.ndarray
    active: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def state_mode(self) -> StateMode:
        return StateMode(self.meta.get("state_mode", StateMode.DYNAMIC.value))

    @property
    def dt(self) -> float:
        return float(self.meta.get("dt", self.t[1] - self.t[0] if len(self.t) > 1 else 0.0))

    @property
    def activation_index(self) -> Optional[int]:
        """Первый шаг, на котором регулятор активен; None, если контакта не было."""
        hits = np.flatnonzero(self.active)
        return int(hits[0]) if hits.size else None

    @property
    def force_reference(self) -> np.ndarray:
        """Референс нормальной силы F = -h_r,z, Н."""
        return -self.h_r_z

    def states(self, mode: Union[StateMode, str, None] = None) -> np.ndarray:
        """Состояния (T, d) в раскладке режима (по умолчанию режим прогона)."""
        mode = self.state_mode if mode is None else StateMode(mode)
        return np.stack([getattr(self, name) for name in state_fields(mode)], axis=-1)

    def sample(self, k: int) -> StateSample:
        return StateSample(z=self.z[k], z_dot=self.z_dot[k], f_z=self.f_z[k], v=self.v[k],
                           x_f_z=self.x_c_star_z[k])

    def to_frame(self) -> pd.DataFrame:
        data = {name: np.asarray(getattr(self, name), dtype=float) for name in ROLLOUT_COLUMNS}
        data["active"] = np.asarray(self.active, dtype=int)
        return pd.DataFrame(data, columns=list(ROLLOUT_COLUMNS))


def _reference_batch(profiles: Sequence[ReferenceProfile], seeds: Sequence[int], dt: float, z_surface: float):
    series = [gen_reference(profile, seed, dt, z_surface) for profile, seed in zip(profiles, seeds)]
    lengths = {len(s.t) for s in series}
    if len(lengths) != 1:
        raise ShapeError(f"Прогоны одной пачки должны иметь одинаковую длину, получено {sorted(lengths)}")
    x_r = np.stack([s.x_r for s in series])   # (B, T, 6)
    h_r = np.stack([s.h_r for s in series])
    return series[0].t, x_r, h_r


def collect_rollouts(profiles: Sequence[ReferenceProfile], seeds: Sequence[int],
                     controller: ForceTrackingController, plant: SurrogatePlant,
                     state_mode: Union[StateMode, str] = StateMode.DYNAMIC,
                     tags: Optional[Sequence[Dict[str, Any]]] = None,
                     progress: bool = False, dither: float = 0.0, dither_hold: int = 1) -> List[Rollout]:
    """
    Пачка прогонов замкнутого контура референс -> регулятор -> объект.

    Args:
        profiles: Профили одинаковой длительности
        seeds: Зерно для каждого профиля
        controller: Регулятор (dfc, oracle или vaicam)
        plant: Объект; его состояние перезаписывается
        state_mode: Режим состояния, под который собирается корпус
        tags: Дополнительные метаданные для каждого прогона
        progress: Показывать прогресс-бар по шагам
        dither: Полуширина случайной добавки к уставке z после контакта, м (0 - без добавки)
        dither_hold: Число шагов, в течение которых держится одно значение добавки

    Returns:
        Список прогонов в порядке профилей

    Raises:
        IntegrationFaultError: расхождение интегрирования (с контекстом прогона)
        ModelNotReadyError: регулятору oracle/vaicam не передана обученная модель
    """
    if len(profiles) != len(seeds):
        raise ShapeError("Число профилей и зёрен должно совпадать")
    if not profiles:
        return []
    state_mode = StateMode(state_mode)
    dt = plant.config.dt
    t, x_r, h_r = _reference_batch(profiles, seeds, dt, plant.env.z_surface)
    batch, steps = x_r.shape[:2]

    controller.dt = dt
    controller.reset(batch)
    plant.reset(x_r[:, 0, :2])
    offsets = None
    if dither > 0:
        offsets = np.stack([setpoint_dither(seed, steps, dither, dither_hold) for seed in seeds])

    columns = {name: np.zeros((batch, steps)) for name in ROLLOUT_COLUMNS if name != "t"}
    iterator = tqdm(range(steps), desc=f"rollout {controller.controller_id}", disable=not progress)
    try:
        for k in iterator:
            state = plant.state
            s = StateSample(z=state.z.copy(), z_dot=state.z_dot.copy(), f_z=state.f_z.copy(), v=state.v)
            setpoint, record = controller.act(x_r[:, k], h_r[:, k], s,
                                              None if offsets is None else offsets[:, k])

            columns["z"][:, k] = s.z
            columns["z_dot"][:, k] = s.z_dot
            columns["v"][:, k] = s.v
            columns["f_z"][:, k] = s.f_z
            columns["x_f_z"][:, k] = record.x_f[:, Z_AXIS]
            columns["x_c_star_z"][:, k] = record.x_c_star[:, Z_AXIS]
            columns["h_r_z"][:, k] = h_r[:, k, Z_AXIS]
            columns["cost"][:, k] = record.cost
            columns["active"][:, k] = record.active

            plant.advance(setpoint)
    except IntegrationFaultError as error:
        kinds = sorted({profile.kind.value for profile in profiles})
        raise IntegrationFaultError(
            f"Прогон ({controller.controller_id}, профили {kinds}, зёрна {list(seeds)}) "
            f"прерван на шаге {k}: {error}"
        ) from error

    rollouts = []
    for row, (profile, seed) in enumerate(zip(profiles, seeds)):
        meta = {
            "profile": profile.to_dict(),
            "seed": int(seed),
            "controller": controller.controller_id,
            "velocity": float(profile.peak_speed()),
            "state_mode": state_mode.value,
            "dt": dt,
        }
        if dither > 0:
            meta["dither"] = {"amplitude": float(dither), "hold": int(dither_hold)}
        if tags is not None:
            meta.update(tags[row])
        rollout = Rollout(
            t=t.copy(), active=columns["active"][row].astype(bool), meta=meta,
            **{name: columns[name][row].copy() for name in ROLLOUT_COLUMNS if name not in ("t", "active")},
        )
        if rollout.activation_index is None:
            logger.warning(f"Прогон seed={seed} ({profile.kind.value}) так и не вошёл в контакт")
        rollouts.append(rollout)
    return rollouts


def setpoint_dither(seed: int, steps: int, amplitude: float, hold: int = 1) -> np.ndarray:
    """
    Кусочно-постоянная равномерная добавка к уставке из U[-amplitude, amplitude].

    Делает уставку корпуса независимой от истории состояния.
    """
    if hold < 1:
        raise ConfigurationError(f"dither_hold должен быть >= 1, получено {hold}")
    rng = np.random.default_rng([int(seed), DITHER_STREAM])
    values = rng.uniform(-amplitude, amplitude, size=-(-steps // hold))
    return np.repeat(values, hold)[:steps]


def collect_rollout(profile: ReferenceProfile, controller_id: str, plant: SurrogatePlant,
                    model=None, seed: int = 0, dfc: Optional[DfcConfig] = None,
                    vaicam: Optional[VaicamParams] = None,
                    state_mode: Union[StateMode, str] = StateMode.DYNAMIC) -> Rollout:
    """
    Один прогон замкнутого контура.

    Args:
        profile: Референсная траектория
        controller_id: dfc, oracle или vaicam
        plant: Объект
        model: Аппроксиматор модели (обязателен для oracle и vaicam)
        seed: Зерно прогона
        dfc: Параметры DFC
        vaicam: Параметры оптимизатора остаточного действия
        state_mode: Режим состояния корпуса

    Returns:
        Записанный прогон
    """
    controller = ForceTrackingController(
        controller_id, dfc=dfc or DfcConfig(), vaicam=vaicam or VaicamParams(),
        model=model, dt=plant.config.dt,
    )
    return collect_rollouts([profile], [seed], controller, plant, state_mode)[0]


def format_header(magic: str, state_mode: StateMode, schema: int, meta: Dict[str, Any]) -> str:
    return f"{magic} schema={schema} state_mode={state_mode.value} meta={json.dumps(meta, sort_keys=True)}\n"


def parse_header(line: str, magic: str) -> Dict[str, Any]:
    """
    Разбор строки заголовка `<magic> schema=N state_mode=M meta={...}`.

    Raises:
        FormatError: чужой файл или повреждённый заголовок
    """
    if not line.startswith(magic + " "):
        raise FormatError(f"Ожидался заголовок '{magic}', получено: {line[:60]!r}")
    rest = line[len(magic) + 1:].rstrip("\n")
    head, _, meta = rest.partition(" meta=")
    fields = dict(part.split("=", 1) for part in head.split())
    try:
        return {
            "schema": int(fields["schema"]),
            "state_mode": StateMode(fields["state_mode"]),
            "meta": json.loads(meta) if meta else {},
        }
    except (KeyError, ValueError) as error:
        raise FormatError(f"Повреждённый заголовок: {error}") from error


def save_rollout(rollout: Rollout, path: Union[str, Path]) -> Path:
    """Сохраняет прогон в CSV с полной точностью."""
    body = rollout.to_frame().to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return write_file(path, format_header(ROLLOUT_MAGIC, rollout.state_mode, ROLLOUT_SCHEMA, rollout.meta) + body)


def load_rollout(path: Union[str, Path], state_mode: Union[StateMode, str, None] = None) -> Rollout:
    """
    Загружает прогон из CSV.

    Raises:
        FormatError: нет файла, другая версия схемы или другой режим состояния
    """
    content = read_file(path)
    if content is None:
        raise FormatError(f"Файл прогона не найден: {path}")
    header = parse_header(content.split("\n", 1)[0], ROLLOUT_MAGIC)
    if header["schema"] != ROLLOUT_SCHEMA:
        raise FormatError(f"Схема прогона {header['schema']} не поддерживается (ожидается {ROLLOUT_SCHEMA})")
    if state_mode is not None and header["state_mode"] != StateMode(state_mode):
        raise FormatError(
            f"Прогон записан в режиме {header['state_mode'].value}, запрошен {StateMode(state_mode).value}"
        )

    frame = pd.read_csv(path, skiprows=1, float_precision="round_trip")
    if tuple(frame.columns) != ROLLOUT_COLUMNS:
        raise FormatError(f"Неожиданные колонки прогона: {list(frame.columns)}")
    meta = header["meta"]
    meta["state_mode"] = header["state_mode"].value
    values = {name: frame[name].to_numpy(dtype=float) for name in ROLLOUT_COLUMNS if name != "active"}
    return Rollout(active=frame["active"].to_numpy().astype(bool), meta=meta, **values)
