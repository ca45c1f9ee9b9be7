import json

import pytest
from typer.testing import CliRunner

from prefect_rbf_fmm import RunConfig, __version__
from prefect_rbf_fmm.cli import app, build_config, parse_sizes
from prefect_rbf_fmm.io import read_frame, read_metadata

runner = CliRunner()


def _last_json(output: str) -> dict:
    return json.loads(output.strip().splitlines()[-1])


def test_version():
    result = runner.invoke(app, ["--version"])
    assert result.exit_code == 0
    assert result.output.strip() == __version__


@pytest.mark.parametrize(
    "text,expected",
    [("9..12", [9, 10, 11, 12]), ("9,11, 13", [9, 11, 13]), (" 5 ", [5])],
)
def test_parse_sizes(text, expected):
    assert parse_sizes(text) == expected


def test_parse_sizes_rejects_garbage():
    with pytest.raises(ValueError):
        parse_sizes("a..b")


def test_build_config_skips_missing_flags():
    config = build_config(kernel=None, m=128)
    assert config.kernel == "imq:c=1"
    assert config.m == 128


def test_build_config_from_block():
    RunConfig(kernel="gaussian:c=2", seed=9).save("cli-base")
    config = build_config("cli-base", m=32)
    assert config.kernel == "gaussian:c=2"
    assert config.seed == 9
    assert config.m == 32


def test_kernel_dump_writes_artifacts(tmp_path):
    result = runner.invoke(
        app,
        [
            "kernel-dump",
            "--kernel",
            "gaussian:c=1",
            "--sigma",
            "6.283185307179586",
            "--out",
            str(tmp_path),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "spectrum_rows: pass" in result.output
    profile = tmp_path / "profile.csv"
    assert len(read_frame(profile)) == 201
    metadata = read_metadata(profile)
    assert metadata["kernel"] == "gaussian:c=1"
    assert metadata["seed"] == "0"
    assert (tmp_path / "spectrum.csv").exists()


def test_collocate1d(tmp_path):
    result = runner.invoke(
        app, ["collocate1d", "--n", "9,10", "--no-bandlimited", "--out", str(tmp_path)]
    )
    assert result.exit_code == 0, result.output
    assert list(read_frame(tmp_path / "rms.csv")["N"]) == [9, 10]


def test_invalid_kernel_is_reported_as_json(tmp_path):
    result = runner.invoke(
        app, ["kernel-dump", "--kernel", "cauchy", "--out", str(tmp_path)]
    )
    assert result.exit_code == 2
    payload = _last_json(result.output)
    assert payload["error"] == "ValidationError"
    assert "cauchy" in payload["message"]


def test_library_errors_are_reported_as_json(tmp_path):
    result = runner.invoke(
        app,
        [
            "solve",
            "--backend",
            "dense",
            "--n",
            "128",
            "--tol",
            "1e-12",
            "--max-iter",
            "1",
            "--out",
            str(tmp_path),
        ],
    )
    assert result.exit_code == 2
    assert _last_json(result.output)["error"] == "NonConvergenceError"


def test_failed_checks_exit_with_one(tmp_path):
    result = runner.invoke(
        app,
        ["fmm-matvec", "--n", "128", "--tolerance", "1e-16", "--out", str(tmp_path)],
    )
    assert result.exit_code == 1
    payload = _last_json(result.output)
    assert payload["command"] == "fmm-matvec"
    assert "matches_reference" in payload["failed"]
    assert (tmp_path / "values.csv").exists()


def test_stability(tmp_path):
    result = runner.invoke(
        app, ["stability", "--instances", "3", "--seed", "4", "--out", str(tmp_path)]
    )
    assert result.exit_code == 0, result.output
    assert "lower_bound_holds: pass" in result.output
    assert "bound_violations: 0" in result.output
    frame = read_frame(tmp_path / "stability.csv")
    assert len(frame) == 6
    assert read_metadata(tmp_path / "stability.csv")["seed"] == "4"


def test_stability_rejects_jitter(tmp_path):
    result = runner.invoke(
        app,
        ["stability", "--instances", "1", "--jitter", "1.5", "--out", str(tmp_path)],
    )
    assert result.exit_code == 2
    assert _last_json(result.output)["error"] == "ValueError"
