"""
Утилиты для работы с файлами и директориями.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

PathLike = Union[str, Path]


def read_file(path: PathLike) -> Optional[str]:
    """
    Чтение содержимого файла.
    
    Args:
        path: Путь к файлу
        
    Returns:
        Содержимое файла или None, если файла нет
    """
    path = Path(path)
    if not path.exists():
        return None
    with open(path, 'r', encoding='utf-8') as file:
        return file.read()


def write_file(path: PathLike, content: str) -> Path:
    """
    Запись содержимого в файл с созданием необходимых директорий.
    
    Args:
        path: Путь к файлу
        content: Содержимое для записи
        
    Returns:
        Путь к записанному файлу
    """
    path = Path(path)
    ensure_directory(path.parent)
    
    # newline='' - чтобы на любой платформе байты файла были одинаковыми
    with open(path, 'w', encoding='utf-8', newline='') as file:
        file.write(content)
    return path


def write_json(path: PathLike, data: Dict[str, Any]) -> Path:
    """
    Запись словаря в JSON файл (ключи отсортированы).
    
    Args:
        path: Путь к файлу
        data: Данные для записи
        
    Returns:
        Путь к записанному файлу
    """
    return write_file(path, json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def ensure_directory(path: PathLike) -> Path:
    """
    Создание директории, если она не существует.
    
    Args:
        path: Путь к директории
        
    Returns:
        Путь к директории
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def list_files(directory: PathLike, pattern: str) -> List[Path]:
    """
    Отсортированный список файлов директории по шаблону.
    
    Args:
        directory: Директория для поиска
        pattern: glob-шаблон, например "*.csv"
        
    Returns:
        Список путей (пустой, если директории нет)
    """
    directory = Path(directory)
    if not directory.exists():
        return []
    return sorted(directory.glob(pattern))
