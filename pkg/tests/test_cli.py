"""Tests for the typer command-line surface and exit codes."""

import json
from pathlib import Path

import pytest
from typer.testing import CliRunner

from rstcrypt.cli import JobConfig, app, run
from rstcrypt.schemas import SCHEMA_VERSION, NzcaReport, RecipeFile, RegionSpec
from rstcrypt.storage import save_recipe

runner = CliRunner()


@pytest.fixture
def key_hex(keys) -> tuple[str, str]:
    return keys[0].hex(), keys[1].hex()


@pytest.fixture
def src(tmp_path: Path, color_jpeg: bytes) -> Path:
    path = tmp_path / "photo.jpg"
    path.write_bytes(color_jpeg)
    return path


def test_restructure_encrypt_decrypt(tmp_path: Path, src: Path, key_hex) -> None:
    rs, enc, dec = tmp_path / "rs.jpg", tmp_path / "enc.jpg", tmp_path / "dec.jpg"
    k = ["--k1", key_hex[0], "--k2", key_hex[1]]

    assert runner.invoke(app, ["restructure", str(src), str(rs), "--ri", "2"]).exit_code == 0
    assert runner.invoke(app, ["encrypt", str(rs), str(enc), "--ri", "2", *k]).exit_code == 0
    assert runner.invoke(app, ["decrypt", str(enc), str(dec), "--ri", "2", *k]).exit_code == 0

    assert enc.read_bytes() != rs.read_bytes()
    assert len(enc.read_bytes()) == len(rs.read_bytes())
    assert dec.read_bytes() == rs.read_bytes()


def test_encrypt_needs_matching_interval(tmp_path: Path, src: Path, key_hex) -> None:
    out = tmp_path / "enc.jpg"
    k = ["--k1", key_hex[0], "--k2", key_hex[1]]
    result = runner.invoke(app, ["encrypt", str(src), str(out), "--ri", "4", *k])
    assert result.exit_code == 4
    assert json.loads(result.stdout)["error"] == "recipe_mismatch"
    assert not out.exists()

    result = runner.invoke(app, ["encrypt", str(src), str(out), "--ri", "4", "--restructure", *k])
    assert result.exit_code == 0
    assert out.exists()


def test_bad_key_reports_json(tmp_path: Path, src: Path, key_hex) -> None:
    result = runner.invoke(
        app, ["encrypt", str(src), str(tmp_path / "o.jpg"), "--ri", "2", "--k1", "abcd", "--k2", key_hex[1]]
    )
    assert result.exit_code == 4
    report = json.loads(result.stdout)
    assert report["error"] == "bad_key_length"
    assert report["path"] == str(src)


def test_bad_region_is_a_config_error(tmp_path: Path, src: Path, key_hex) -> None:
    result = runner.invoke(
        app,
        ["encrypt", str(src), str(tmp_path / "o.jpg"), "--ri", "2", "--region", "1,2",
         "--k1", key_hex[0], "--k2", key_hex[1]],
    )
    assert result.exit_code == 2
    assert json.loads(result.stdout)["error"] == "config_error"


def test_recipe_file(tmp_path: Path, src: Path, keys) -> None:
    (tmp_path / "k1.key").write_text(keys[0].hex() + "\n")
    recipe = save_recipe(
        RecipeFile(ri=2, region=RegionSpec.parse("blocks:0,3,5"), key_refs={"k1": str(tmp_path / "k1.key"), "k2": keys[1].hex()}),
        tmp_path / "recipe.json",
    )
    enc, dec = tmp_path / "enc.jpg", tmp_path / "dec.jpg"
    assert runner.invoke(app, ["encrypt", str(src), str(enc), "--recipe", str(recipe), "--restructure"]).exit_code == 0
    assert runner.invoke(app, ["decrypt", str(enc), str(dec), "--recipe", str(recipe)]).exit_code == 0
    rs = tmp_path / "rs.jpg"
    runner.invoke(app, ["restructure", str(src), str(rs), "--ri", "2"])
    assert dec.read_bytes() == rs.read_bytes()

    mismatch = runner.invoke(app, ["decrypt", str(enc), str(dec), "--recipe", str(recipe), "--ri", "4"])
    assert mismatch.exit_code == 2


def test_keyspace_json(tmp_path: Path, src: Path) -> None:
    out = tmp_path / "out"
    result = runner.invoke(app, ["keyspace", str(src), "--ri", "2", "--out-dir", str(out)])
    assert result.exit_code == 0
    report = json.loads(result.stdout)
    assert report["block_count"] == 12
    assert report["s_min_bits"] == pytest.approx(report["T"] + report["s_bp_log2"])
    assert (out / "photo" / "keyspace_ri2.json").exists()


def test_not_a_jpeg_is_a_format_error(tmp_path: Path) -> None:
    bogus = tmp_path / "bogus.jpg"
    bogus.write_bytes(b"not a jpeg at all")
    result = runner.invoke(app, ["keyspace", str(bogus), "--ri", "2", "--out-dir", str(tmp_path)])
    assert result.exit_code == 3
    assert json.loads(result.stdout)["error"] == "malformed_marker"


def test_scanmap(tmp_path: Path, src: Path) -> None:
    result = runner.invoke(app, ["scanmap", str(src), "--out-dir", str(tmp_path / "out")])
    assert result.exit_code == 0
    export = json.loads(result.stdout)
    assert export["restart_interval"] == 0
    assert len(export["mcu_bit_spans"]) == 24


@pytest.mark.parametrize("fmt, name", [("png", "nzca_blocks.png"), ("pgm", "nzca_blocks.pgm"), ("json", "nzca.json")])
def test_nzca_outputs(tmp_path: Path, src: Path, fmt: str, name: str) -> None:
    out = tmp_path / "out"
    result = runner.invoke(app, ["nzca", str(src), "--format", fmt, "--out-dir", str(out)])
    assert result.exit_code == 0
    assert (out / "photo" / name).exists()


def test_histogram_with_reference(tmp_path: Path, src: Path) -> None:
    out = tmp_path / "out"
    result = runner.invoke(
        app, ["histogram", str(src), "--reference", str(src), "--format", "png", "--out-dir", str(out)]
    )
    assert result.exit_code == 0
    assert json.loads(result.stdout)["similarity_to_reference"] == pytest.approx(1.0)
    assert (out / "photo" / "histogram.png").exists()


def test_sensitivity(tmp_path: Path, src: Path) -> None:
    result = runner.invoke(
        app, ["sensitivity", str(src), "--ri", "2", "--trials", "2", "--out-dir", str(tmp_path / "out")]
    )
    assert result.exit_code == 0
    report = json.loads(result.stdout)
    assert report["trials"] == 2
    assert report["control_exact"] is True


def test_evaluate_directory(tmp_path: Path, make_jpeg) -> None:
    images = tmp_path / "images"
    images.mkdir()
    (images / "a.jpg").write_bytes(make_jpeg(64, 48, seed=1))
    (images / "b.jpg").write_bytes(make_jpeg(48, 32, seed=2))
    out = tmp_path / "out"

    result = runner.invoke(app, ["evaluate", str(images), "--ri", "2,4", "--format", "json", "--out-dir", str(out)])
    assert result.exit_code == 0
    summary = json.loads(result.stdout)
    assert summary["images"] == ["a", "b"]
    assert summary["all_passed"] is True
    assert (out / "summary.json").exists()
    for stem in ("a", "b"):
        for ri in (2, 4):
            assert (out / stem / f"encrypted_ri{ri}.jpg").exists()
            assert (out / stem / f"evaluation_ri{ri}.json").exists()


def test_evaluate_reports_broken_files(tmp_path: Path, make_jpeg) -> None:
    images = tmp_path / "images"
    images.mkdir()
    (images / "good.jpg").write_bytes(make_jpeg(32, 32))
    (images / "broken.jpg").write_bytes(b"\xff\xd8garbage")

    result = runner.invoke(app, ["evaluate", str(images), "--ri", "2", "--format", "json", "--out-dir", str(tmp_path / "o")])
    assert result.exit_code == 5
    errors = [json.loads(line) for line in result.stdout.splitlines() if line.startswith('{"error"')]
    assert errors and all(e["path"].endswith("broken.jpg") for e in errors[:-1])


def test_run_without_interval_is_config_error(src: Path) -> None:
    assert run(JobConfig(command="keyspace", input=src)) == 2


def test_nzca_json_is_versioned(tmp_path: Path, src: Path) -> None:
    out = tmp_path / "out"
    result = runner.invoke(app, ["nzca", str(src), "--format", "json", "--out-dir", str(out)])
    assert result.exit_code == 0
    report = NzcaReport.model_validate_json((out / "photo" / "nzca.json").read_text())
    assert report.schema_version == SCHEMA_VERSION
    assert (report.height_blocks, report.width_blocks) == (8, 12)
    assert len(report.counts) == 8 and all(len(row) == 12 for row in report.counts)


def test_nzca_report_checks_grid() -> None:
    with pytest.raises(ValueError):
        NzcaReport(width_blocks=2, height_blocks=1, counts=[[1, 2, 3]])


@pytest.fixture
def tiny(tmp_path: Path, make_jpeg) -> Path:
    """8x40 4:2:0: narrower than one MCU."""
    images = tmp_path / "tiny"
    images.mkdir()
    path = images / "strip.jpg"
    path.write_bytes(make_jpeg(8, 40, seed=4))
    return path


def test_keyspace_small_frame(tmp_path: Path, tiny: Path) -> None:
    result = runner.invoke(app, ["keyspace", str(tiny), "--ri", "2", "--out-dir", str(tmp_path / "out")])
    assert result.exit_code == 0
    report = json.loads(result.stdout)
    assert (report["width"], report["height"]) == (8, 40)
    assert report["block_count"] == 1


def test_evaluate_small_frame(tmp_path: Path, tiny: Path) -> None:
    out = tmp_path / "out"
    result = runner.invoke(app, ["evaluate", str(tiny.parent), "--ri", "2", "--format", "json", "--out-dir", str(out)])
    assert result.exit_code == 0
    summary = json.loads(result.stdout)
    assert summary["images"] == ["strip"]
    assert summary["failures"] == []
    assert (out / "summary.json").exists()
