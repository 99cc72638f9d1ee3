"""Ablation harnesses on the smoke preset: row counts, failure recording, CSV output."""

import math

import pytest

from aftvo import pipeline
from aftvo.cli import main
from aftvo.config import config_from_dict
from aftvo.eval import (AblationTable, camera_ablation_harness, ekf_comparison, module_ablation_harness, read_csv,
                        write_csv)
from aftvo.presets import preset


@pytest.fixture(scope="module")
def bench():
    return pipeline.prepare_benchmark(config_from_dict(preset("smoke")))


def _broken_for(variant, monkeypatch):
    real = pipeline.train_model

    def train(bench, v=None, seed=None, sources=None):
        if v == variant:
            raise FloatingPointError("synthetic failure")
        return real(bench, v, seed, sources)
    monkeypatch.setattr(pipeline, "train_model", train)


def test_module_harness_records_failed_cells(bench, monkeypatch, tmp_path):
    _broken_for("-D-None", monkeypatch)
    table = module_ablation_harness(bench, [0, 1, 2])
    assert len(table.cells) == 12 and len(table.failed) == 3
    rows = {r["variant"]: r for r in table.summary()}
    assert set(rows) == {"full", "-SE", "-D-None", "-D-Equi"}
    assert rows["-D-None"]["failed"] == 3 and math.isnan(rows["-D-None"]["median_rmse"])
    assert rows["full"]["seeds"] == 3 and rows["full"]["median_rmse"] > 0
    summary, cells = table.write(tmp_path)
    cell_rows = read_csv(cells)
    assert sum(r["status"] == "failed" for r in cell_rows) == 3
    assert all("synthetic failure" in r["error"] for r in cell_rows if r["status"] == "failed")
    assert len(read_csv(summary)) == 4


def test_module_harness_needs_three_seeds(bench):
    with pytest.raises(ValueError):
        module_ablation_harness(bench, [0, 1])
    with pytest.raises(ValueError):
        module_ablation_harness(bench, [0, 1, 2], ["full", "-X"])


def test_camera_rows_match_subsets(bench):
    subsets = [["F"], ["L", "R"], ["F", "L", "R"]]
    table = camera_ablation_harness(bench, subsets, [0, 1, 2])
    assert [r["subset"] for r in table.summary()] == ["F", "L+R", "F+L+R"]
    assert not table.failed


def test_ekf_comparison_reuses_cells(bench):
    aft = camera_ablation_harness(bench, [["F", "L", "R"]], [0, 1, 2]).cells
    table = ekf_comparison(bench, [0, 1, 2], grid={"q_lin": [1.0, 10.0], "q_ang": [0.1]}, aft_cells=aft)
    assert [r["method"] for r in table.summary()] == ["aft", "ekf"]
    assert table.median("aft") == AblationTable("x", "k", ["full"], aft).median("F+L+R")
    assert table.extra["ekf_params"]["q_lin"] in (1.0, 10.0)


def test_cli_ablate_exits_nonzero_on_failed_cell(monkeypatch, tmp_path):
    _broken_for("-SE", monkeypatch)
    assert main(["ablate", "--preset", "smoke", "--tables", "module", "--out", str(tmp_path)]) == 4
    assert (tmp_path / "module_ablation_cells.csv").exists()


def test_csv_round_trip(tmp_path):
    rows = [{"a": 1, "b": "x"}, {"a": 2, "b": "y"}]
    write_csv(tmp_path / "t.csv", rows)
    assert read_csv(tmp_path / "t.csv") == [{"a": "1", "b": "x"}, {"a": "2", "b": "y"}]
    write_csv(tmp_path / "e.csv", [])
    assert read_csv(tmp_path / "e.csv") == []


@pytest.mark.slow
def test_synchronous_data_makes_equidistant_positions_harmless():
    # with equal rates and phases the item index is an exact proxy for time
    cfg = config_from_dict(preset("synchronous"))
    table = module_ablation_harness(pipeline.prepare_benchmark(cfg), cfg.ablation.seeds, ["full", "-D-Equi"])
    full, equi = table.median("full"), table.median("-D-Equi")
    assert abs(equi - full) / full < 0.2, (full, equi)
