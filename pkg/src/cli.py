"""
Командная строка стенда.

    vaicam reproduce --config config.yaml --seed 0 --out results --single-thread
    vaicam collect | train | eval-ma | eval-control | report [те же параметры]
"""
import argparse
import sys
from typing import List, Optional

import torch

from src.config import load_config
from src.errors import VaicamError
from src.experiment_metrics import format_text_table, read_metrics_csv, report
from src.experiments import ExperimentRunner
from src.utils.file_utils import list_files
from src.utils.logging_utils import setup_logger

# Настраиваем логгер
logger = setup_logger("cli")

COMMANDS = ("collect", "train", "eval-ma", "eval-control", "report", "reproduce")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Стенд отслеживания силы с обучаемой моделью объекта")
    subparsers = parser.add_subparsers(dest="command", required=True)

    helps = {
        "collect": "Собрать обучающие корпуса SMA и DMA",
        "train": "Обучить SMA и DMA (корпуса берутся из кэша или собираются)",
        "eval-ma": "Эксперимент I: сравнение аппроксиматоров на тестовой сетке",
        "eval-control": "Эксперимент II: сравнение DFC, ORACLE и VAICAM",
        "report": "Перепечатать таблицы из metrics/*.csv",
        "reproduce": "Все этапы по порядку",
    }
    for command in COMMANDS:
        sub = subparsers.add_parser(command, help=helps[command])
        sub.add_argument("--config", help="YAML-файл конфигурации (по умолчанию значения из кода)")
        sub.add_argument("--seed", type=int, help="Главное зерно (по умолчанию experiment.seed)")
        sub.add_argument("--out", default="results", help="Выходная директория (по умолчанию: results)")
        sub.add_argument("--single-thread", action="store_true",
                         help="Однопоточный детерминированный режим")
        sub.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                         help="Переопределить параметр конфигурации (можно повторять)")
        sub.add_argument("--progress", action="store_true", help="Показывать прогресс-бары")
    return parser


def _report(out_dir: str) -> None:
    files = list_files(f"{out_dir}/metrics", "*.csv")
    if not files:
        raise VaicamError(f"В {out_dir}/metrics нет таблиц; сначала запустите eval-ma или eval-control")
    for path in files:
        rows = read_metrics_csv(path)
        report(rows, path.with_suffix(""), formats=("text",))
        print(f"\n{path.stem}:")
        print(format_text_table(rows))


def run(args: argparse.Namespace) -> None:
    if args.single_thread:
        torch.set_num_threads(1)
    if args.command == "report":
        _report(args.out)
        return

    cfg = load_config(args.config, args.overrides)
    runner = ExperimentRunner(cfg, seed=args.seed, out_dir=args.out,
                              single_thread=args.single_thread, progress=args.progress)
    if args.command == "collect":
        runner.collect_corpora()
    elif args.command == "train":
        runner.train_models()
    elif args.command == "eval-ma":
        print(format_text_table(runner.run_experiment_1()))
    elif args.command == "eval-control":
        print(format_text_table(runner.run_experiment_2()))
    elif args.command == "reproduce":
        tables = runner.reproduce()
        for name, rows in tables.items():
            print(f"\n{name}:")
            print(format_text_table(rows))
        return
    runner.write_manifest(args.command)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Точка входа.

    Returns:
        0 при успехе, 1 при ошибке стенда
    """
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except VaicamError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
