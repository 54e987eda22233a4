"""
Иерархия исключений стенда.

Все ошибки наследуются от VaicamError и одновременно от встроенного
ValueError/RuntimeError, поэтому вызывающий код может ловить любой из типов.
"""


class VaicamError(Exception):
    """Базовое исключение всех модулей стенда."""


class ConfigurationError(VaicamError, ValueError):
    """Некорректные параметры конфигурации (в т.ч. нарушение условия устойчивости шага)."""


class IntegrationFaultError(VaicamError, RuntimeError):
    """Нефинитные значения при интегрировании модели объекта."""


class ModelNotReadyError(VaicamError, RuntimeError):
    """Модель не обучена или у неё нет статистик нормализации."""


class ShapeError(VaicamError, ValueError):
    """Несовпадение размерностей входов, выходов или режима состояния."""


class DegenerateDataError(VaicamError, ValueError):
    """Пустой датасет или признак с нулевой дисперсией."""


class DivergenceError(VaicamError, RuntimeError):
    """Нефинитная функция потерь во время обучения."""


class FormatError(VaicamError, ValueError):
    """Файл не соответствует ожидаемой схеме или версии."""


class InputError(VaicamError, ValueError):
    """Некорректные входные данные для метрик и отчётов."""
