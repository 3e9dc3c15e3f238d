import numpy as np
import pytest

from cbnet.cli import main
from cbnet.imageio import read_pgm


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_shapes_table(capsys):
    code, out = run(capsys, "shapes", "--size", 204)
    assert code == 0 and out.out.strip().splitlines()[-1] == "output 20×20"


def test_shapes_infeasible_is_data_error(capsys):
    code, out = run(capsys, "shapes", "--size", 200)
    assert code == 2 and "N = 12" in out.err


def test_params(capsys):
    code, out = run(capsys, "params", "--width", 32)
    lines = out.out.splitlines()
    assert code == 0 and lines[0].endswith("2036642") and lines[1].endswith("31031234")
    assert float(lines[2].split()[-1]) <= 0.35


def test_usage_errors_exit_1(capsys):
    assert run(capsys, "nonsense")[0] == 1
    assert run(capsys, "shapes")[0] == 1
    assert run(capsys)[0] == 1


def test_help_exits_0(capsys):
    assert run(capsys, "train", "--help")[0] == 0


def test_missing_manifest_exit_2(capsys, tmp_path):
    assert run(capsys, "labelgen", "--manifest", tmp_path / "nope.csv")[0] == 2


def test_gradcheck_passes(capsys):
    code, out = run(capsys, "gradcheck", "--seeds", 1)
    assert code == 0 and "FAIL" not in out.out


def test_unknown_config_key_exit_2(capsys, tmp_path):
    (tmp_path / "cfg.txt").write_text("epochs = 1\nmomentum = 0.9\n")
    (tmp_path / "manifest.csv").write_text("index,image,annotation,gt,seed\n")
    code, out = run(capsys, "train", "--manifest", tmp_path / "manifest.csv", "--config", tmp_path / "cfg.txt",
                    "--out", tmp_path / "o")
    assert code == 2 and "unknown key" in out.err


def pipeline(capsys, root):
    data, model, pred = root / "data", root / "model", root / "pred"
    scene = ["--height", 204, "--width", 204, "--min-cells", 3, "--max-cells", 5, "--seed", 11]
    assert run(capsys, "synth", "--out", data, "--n", 2, *scene)[0] == 0
    assert run(capsys, "labelgen", "--manifest", data / "manifest.csv", "--debug")[0] == 0
    (root / "train.cfg").write_text("epochs = 2\nlr_schedule = 1:1e-3\ncheckpoint_every = 1\nseed = 5\n")
    assert run(capsys, "train", "--manifest", data / "manifest.csv", "--config", root / "train.cfg",
               "--width", 4, "--out", model)[0] == 0
    images = sorted(str(p) for p in data.glob("*_image.ppm"))
    assert run(capsys, "predict", "--weights", model / "ckpt_epoch00002.cbnw", "--width", 4, "--out", pred,
               *images)[0] == 0
    code, out = run(capsys, "evaluate", "--manifest", data / "manifest.csv", "--pred", pred,
                    "--csv", root / "report.csv", "--overlay", root / "overlay")
    assert code == 0 and "total:" in out.out
    return root


def test_pipeline_is_byte_reproducible(capsys, tmp_path):
    a = pipeline(capsys, tmp_path / "a")
    b = pipeline(capsys, tmp_path / "b")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) > 20
    assert {p.relative_to(b) for p in b.rglob("*") if p.is_file()} == set(files)
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    labels = read_pgm(a / "data" / "scene_000_labels.pgm")
    assert set(np.unique(labels)) <= {1, 2, 3}
    assert (a / "data" / "scene_000_axis.pgm").exists()
    assert (a / "overlay" / "scene_000_overlay.ppm").exists()
    assert (a / "report.csv").read_text().splitlines()[-1].startswith("total,")
