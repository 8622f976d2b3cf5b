import json

from click.testing import CliRunner

from gmix.bin.console import cli
from gmix.experiments import RECIPES
from gmix.formatters import LOCK_FILE, PLOT_FILE, RESULTS_FILE, read_csv
from gmix.taxonomies import Recipe
from tests.utils import RfSweep, write_document


def test_console_001():
    result = CliRunner().invoke(cli, ["recipes"])
    lines = result.output.strip().splitlines()

    assert result.exit_code == 0
    assert len(lines) == len(RECIPES)
    assert "fig1\tsnr_comparison" in lines


def test_console_002():
    result = CliRunner().invoke(cli, ["recipes", Recipe.FIG3])

    assert result.exit_code == 0
    assert json.loads(result.output) == RECIPES[Recipe.FIG3]

    result = CliRunner().invoke(cli, ["recipes", "nope"])

    assert result.exit_code == 2


def test_console_003(tmp_path):
    result = CliRunner().invoke(cli, ["run", str(tmp_path / "none.json")])

    assert result.exit_code == 2

    document = RfSweep(seeds=[]).to_dict()
    path = write_document(tmp_path / "bad.json", document)
    result = CliRunner().invoke(cli, ["run", str(path)])

    assert result.exit_code == 2


def test_console_004(tmp_path):
    path = write_document(tmp_path / "rf.json", RfSweep().to_dict())
    out = tmp_path / "out"
    result = CliRunner().invoke(
        cli, ["run", str(path), "-o", str(out), "-s", "3", "-l", "30"]
    )

    assert result.exit_code == 0, result.output
    assert len(read_csv(out / RESULTS_FILE)) == 4
    assert json.loads((out / LOCK_FILE).read_text())["master_seed"] == 3
    assert not (out / PLOT_FILE).exists()
