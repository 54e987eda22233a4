"""
Утилиты для настройки логирования и записи логов.
"""
import logging
import os
import sys
from typing import Any, Dict, Optional


def _log_dir() -> str:
    """Директория для файлов логов (переменная окружения VAICAM_LOG_DIR, по умолчанию logs/)."""
    return os.environ.get("VAICAM_LOG_DIR", "logs")


def setup_logger(name: str, level: int = logging.INFO) -> logging.Logger:
    """
    Настройка логгера с форматированием.
    
    Args:
        name: Имя логгера
        level: Уровень логирования (по умолчанию INFO)
        
    Returns:
        Настроенный логгер
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    
    # Проверяем, есть ли уже обработчики, чтобы избежать дублирования
    if not logger.handlers:
        # Обработчик для записи в файл
        log_dir = _log_dir()
        os.makedirs(log_dir, exist_ok=True)
        file_handler = logging.FileHandler(os.path.join(log_dir, f"{name}.log"))
        file_formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )
        file_handler.setFormatter(file_formatter)
        logger.addHandler(file_handler)
        
        # Обработчик для вывода в консоль
        console_handler = logging.StreamHandler(sys.stdout)
        console_formatter = logging.Formatter(
            '%(levelname)s: %(message)s'
        )
        console_handler.setFormatter(console_formatter)
        logger.addHandler(console_handler)
    
    return logger


def log_stage(
    logger: logging.Logger,
    stage: str,
    parameters: Optional[Dict[str, Any]] = None
) -> None:
    """
    Логирование начала этапа эксперимента.
    
    Args:
        logger: Логгер, в который пишем
        stage: Название этапа (collect, train, eval-ma, ...)
        parameters: Ключевые параметры этапа
    """
    logger.info(f"Этап: {stage}")
    if parameters:
        # Параметры выводим в отсортированном виде, чтобы логи было удобно сравнивать
        for key in sorted(parameters):
            logger.info(f"  {key} = {parameters[key]}")
