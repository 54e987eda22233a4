"""
Сохранение и загрузка обученного ансамбля в версионированном текстовом формате.

    VAICAM-MA <версия> <state_mode> <d_in> <hidden_layers> <neurons> <d_out> <N>
    input_mean <d_in чисел>
    input_std <d_in чисел>
    target_mean <d_out чисел>
    target_std <d_out чисел>
    member <i>
    W<j> <rows> <cols>
    <строки матрицы>
    b<j> <size>
    <значения>
    ...

Числа пишутся через repr, поэтому чтение восстанавливает их без потерь.
"""
from pathlib import Path
from typing import Iterator, List, Union

import numpy as np
import torch

from src.errors import FormatError, ShapeError
from src.model_approximator import DTYPE, EnsembleModel, NormStats, StateMode, layer_sizes
from src.utils.file_utils import read_file, write_file
from src.utils.logging_utils import setup_logger

# Настраиваем логгер
logger = setup_logger("model_io")

MAGIC = "VAICAM-MA"
FORMAT_VERSION = 1


def _row(values) -> str:
    return " ".join(repr(float(value)) for value in np.asarray(values, dtype=float).ravel())


def dumps_model(model: EnsembleModel) -> str:
    """Текстовое представление обученной модели."""
    model.ensure_ready()
    stats = model.norm_stats
    d_in, d_out = model.input_dim, model.state_dim
    lines = [
        f"{MAGIC} {FORMAT_VERSION} {model.state_mode.value} {d_in} {model.hidden_layers} "
        f"{model.neurons_per_layer} {d_out} {len(model.members)}",
        f"input_mean {_row(stats.input_mean)}",
        f"input_std {_row(stats.input_std)}",
        f"target_mean {_row(stats.target_mean)}",
        f"target_std {_row(stats.target_std)}",
    ]
    for index, member in enumerate(model.members):
        lines.append(f"member {index}")
        for j, (weight, bias) in enumerate(zip(member[0::2], member[1::2])):
            rows, cols = weight.shape
            lines.append(f"W{j} {rows} {cols}")
            lines.extend(_row(row) for row in weight.numpy())
            lines.append(f"b{j} {bias.shape[0]}")
            lines.append(_row(bias.numpy()))
    return "\n".join(lines) + "\n"


def save_model(model: EnsembleModel, path: Union[str, Path]) -> Path:
    """Сохраняет модель в файл."""
    path = write_file(path, dumps_model(model))
    logger.info(f"Модель {model.state_mode.value} сохранена в {path}")
    return path


def _floats(line: str, expected: int, what: str) -> np.ndarray:
    try:
        values = np.array([float(token) for token in line.split()], dtype=float)
    except ValueError as error:
        raise FormatError(f"{what}: не число ({error})") from error
    if values.size != expected:
        raise ShapeError(f"{what}: ожидалось {expected} значений, получено {values.size}")
    return values


def _labelled(lines: Iterator[str], label: str, expected: int) -> np.ndarray:
    line = next(lines, None)
    if line is None or not line.startswith(label + " "):
        raise FormatError(f"Ожидалась строка '{label}'")
    return _floats(line[len(label) + 1:], expected, label)


def _tensor_header(lines: Iterator[str], label: str, shape: tuple) -> None:
    line = next(lines, None)
    if line is None:
        raise FormatError(f"Файл модели оборван перед '{label}'")
    parts = line.split()
    if parts[0] != label:
        raise FormatError(f"Ожидалась строка '{label}', получено {parts[0]!r}")
    declared = tuple(int(p) for p in parts[1:])
    if declared != shape:
        raise ShapeError(f"{label}: объявлена форма {declared}, топология требует {shape}")


def loads_model(text: str) -> EnsembleModel:
    """
    Восстанавливает модель из текста.

    Raises:
        FormatError: чужой файл, другая версия формата или повреждённое содержимое
        ShapeError: размеры тензоров не соответствуют заявленной топологии
    """
    lines = iter(line for line in text.splitlines() if line.strip())
    header = next(lines, "").split()
    if len(header) != 8 or header[0] != MAGIC:
        raise FormatError("Файл не является сохранённой моделью")
    if header[1] != str(FORMAT_VERSION):
        raise FormatError(f"Версия формата {header[1]} не поддерживается (ожидается {FORMAT_VERSION})")
    try:
        mode = StateMode(header[2])
        d_in, hidden, neurons, d_out, count = (int(value) for value in header[3:])
    except ValueError as error:
        raise FormatError(f"Повреждённый заголовок модели: {error}") from error
    model = EnsembleModel(mode, hidden, neurons)
    if d_out != model.state_dim or d_in != model.input_dim:
        raise ShapeError(
            f"Режим {mode.value} требует {model.input_dim} входов и {model.state_dim} выходов, "
            f"в файле {d_in} и {d_out}"
        )

    model.norm_stats = NormStats(
        input_mean=_labelled(lines, "input_mean", d_in),
        input_std=_labelled(lines, "input_std", d_in),
        target_mean=_labelled(lines, "target_mean", d_out),
        target_std=_labelled(lines, "target_std", d_out),
    )

    sizes = layer_sizes(d_in, d_out, hidden, neurons)
    members: List[list] = []
    for index in range(count):
        if next(lines, None) != f"member {index}":
            raise FormatError(f"Ожидалось начало сети {index}")
        member = []
        for j, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            _tensor_header(lines, f"W{j}", (fan_out, fan_in))
            weight = np.stack([_floats(next(lines, ""), fan_in, f"W{j}") for _ in range(fan_out)])
            _tensor_header(lines, f"b{j}", (fan_out,))
            bias = _floats(next(lines, ""), fan_out, f"b{j}")
            member.extend([torch.tensor(weight, dtype=DTYPE), torch.tensor(bias, dtype=DTYPE)])
        members.append(member)
    if next(lines, None) is not None:
        raise FormatError("Лишние данные после последней сети")
    model.members = members
    return model


def load_model(path: Union[str, Path]) -> EnsembleModel:
    """Загружает модель из файла."""
    text = read_file(path)
    if text is None:
        raise FormatError(f"Файл модели не найден: {path}")
    model = loads_model(text)
    logger.info(f"Модель {model.state_mode.value} загружена из {path} (N={len(model.members)})")
    return model
