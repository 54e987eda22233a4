import math
import tempfile
from pathlib import Path

import pytest

from src.errors import FormatError, InputError
from src.experiment_metrics import (
    MetricsRow,
    aggregate_by_velocity,
    eta,
    format_text_table,
    read_metrics_csv,
    report,
    rmse,
)


@pytest.fixture
def temp_dir():
    """Временная директория для файлов теста."""
    with tempfile.TemporaryDirectory() as tmpdirname:
        yield Path(tmpdirname)


def sample_results():
    return [
        {"velocity": 0.1, "method": "sma", "rmse": 0.4},
        {"velocity": 0.1, "method": "sma", "rmse": 0.6},
        {"velocity": 0.1, "method": "dma", "rmse": 0.2},
        {"velocity": 0.1, "method": "dma", "rmse": 0.3},
        {"velocity": 0.05, "method": "sma", "rmse": 0.1},
        {"velocity": 0.05, "method": "dma", "rmse": 0.1},
    ]


class TestRmse:
    """Тесты для rmse."""

    def test_identical(self):
        assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_constant_offset(self):
        assert rmse([1.0, 2.0, 3.0], [1.5, 2.5, 3.5]) == pytest.approx(0.5)

    def test_example(self):
        """Ошибки (-4, 3) дают sqrt(12.5)."""
        assert rmse([0.0, 3.0], [4.0, 0.0]) == pytest.approx(math.sqrt(12.5))

    def test_empty(self):
        with pytest.raises(InputError):
            rmse([], [])

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            rmse([1.0], [1.0, 2.0])


class TestEta:
    """Тесты для eta."""

    def test_ratio(self):
        assert eta(2.0, 0.5) == 4.0

    def test_zero_candidate(self):
        assert eta(1.0, 0.0) == math.inf
        assert math.isnan(eta(0.0, 0.0))


class TestAggregate:
    """Тесты для aggregate_by_velocity."""

    def test_rows_sorted_by_velocity(self):
        rows = aggregate_by_velocity(sample_results(), ["sma", "dma"], [("dma", "sma")])
        assert [row.velocity for row in rows] == [0.05, 0.1]
        assert rows[1].rmse_mean["sma"] == pytest.approx(0.5)
        assert rows[1].rmse_std["dma"] == pytest.approx(math.sqrt(0.005))
        assert rows[0].rmse_std["sma"] == 0.0

    def test_eta_is_ratio_of_means(self):
        rows = aggregate_by_velocity(sample_results(), ["sma", "dma"], [("dma", "sma")])
        for row in rows:
            assert row.eta[("dma", "sma")] == row.rmse_mean["sma"] / row.rmse_mean["dma"]

    def test_missing_method(self):
        with pytest.raises(InputError):
            aggregate_by_velocity(sample_results()[:2], ["sma", "dma"], [])

    def test_columns(self):
        row = aggregate_by_velocity(sample_results(), ["sma", "dma"], [("dma", "sma")])[0]
        assert row.columns() == ["velocity", "rmse_sma_mean", "rmse_sma_std",
                                 "rmse_dma_mean", "rmse_dma_std", "eta_dma_vs_sma"]


class TestReport:
    """Тесты для report и read_metrics_csv."""

    def test_empty(self, temp_dir):
        with pytest.raises(InputError):
            report([], temp_dir / "table")

    def test_single_row(self, temp_dir):
        row = MetricsRow(0.25, {"dfc": 1.0}, {"dfc": 0.0}, {})
        csv_path, txt_path = report([row], temp_dir / "table")
        assert csv_path.read_text(encoding="utf-8").split("\n")[:2] == [
            "velocity,rmse_dfc_mean,rmse_dfc_std", "0.25,1,0"]
        assert txt_path.exists()

    def test_csv_round_trip(self, temp_dir):
        rows = aggregate_by_velocity(sample_results(), ["sma", "dma"], [("dma", "sma")])
        report(rows, temp_dir / "experiment_1", formats=("csv",))
        assert read_metrics_csv(temp_dir / "experiment_1.csv") == rows

    def test_text_matches_csv(self, temp_dir):
        """Текстовая таблица содержит те же строки значений, что и CSV."""
        rows = aggregate_by_velocity(sample_results(), ["sma", "dma"], [("dma", "sma")])
        csv_path, _ = report(rows, temp_dir / "experiment_1")
        csv_lines = csv_path.read_text(encoding="utf-8").strip().split("\n")
        text_lines = format_text_table(rows).strip().split("\n")
        assert csv_lines[0].split(",") == text_lines[0].split()
        for csv_line, text_line in zip(csv_lines[1:], text_lines[2:]):
            assert csv_line.split(",") == text_line.split()

    def test_unknown_format(self, temp_dir):
        row = MetricsRow(0.25, {"dfc": 1.0}, {"dfc": 0.0}, {})
        with pytest.raises(InputError):
            report([row], temp_dir / "table", formats=("html",))

    def test_foreign_csv(self, temp_dir):
        path = temp_dir / "table.csv"
        path.write_text("speed,x\n1,2\n", encoding="utf-8")
        with pytest.raises(FormatError):
            read_metrics_csv(path)
