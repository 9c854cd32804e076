import numpy as np
import pytest
import yaml

from sotrack import nnet
from sotrack.bench import load_sequence, write_sequence
from sotrack.cli import main
from sotrack.synthetic import moving_square

SMALL = {
    "net": {"map_size": 8, "filters": 4, "hidden": 32, "pool_grids": [1, 2]},
    "pretrain": {"dataset_size": 32, "epochs": 2, "image_size": 48},
}


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.fixture
def small_config(tmp_path):
    return write_yaml(tmp_path / "small.yaml", SMALL)


@pytest.fixture
def sequence(tmp_path):
    seq = moving_square(2, n_frames=6)
    return write_sequence(tmp_path / "seq", seq.frames, seq.boxes, seq.attributes)


def test_missing_required_flag_is_usage_error(capsys):
    assert main(["pretrain"]) == 2
    assert "--out" in capsys.readouterr().err
    assert main([]) == 2


def test_pretrain_is_deterministic(tmp_path, small_config, capsys):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert main(["pretrain", "--config", str(small_config), "--out", str(a), "--seed", "3"]) == 0
    assert main(["pretrain", "--config", str(small_config), "--out", str(b), "--seed", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    log = (tmp_path / "a.bin.log").read_text().splitlines()
    assert log[0] == "# epoch lr mean_loss" and len(log) == 3
    assert log[1].split()[0] == "0"
    assert "epoch 1" in capsys.readouterr().out


def test_pretrain_flag_validation(tmp_path, small_config):
    out = str(tmp_path / "w.bin")
    assert main(["pretrain", "--config", str(small_config), "--out", out, "--epochs", "0"]) == 2
    assert main(["pretrain", "--config", str(small_config), "--out", out,
                 "--manifest", str(tmp_path / "none.txt")]) == 2


@pytest.fixture
def small_weights(tmp_path, small_config):
    out = tmp_path / "small.bin"
    assert main(["pretrain", "--config", str(small_config), "--out", str(out)]) == 0
    return out


def track(config, weights, seq, out, seed="0"):
    return main(["track", "--config", str(config), "--weights", str(weights),
                 "--seq", str(seq), "--out", str(out), "--seed", seed])


def test_track_writes_one_line_per_frame(tmp_path, small_config, small_weights, sequence,
                                         capsys):
    out = tmp_path / "r.txt"
    assert track(small_config, small_weights, sequence, out) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 6 and all(len(line.split(",")) == 7 for line in lines)
    assert "frames=6" in capsys.readouterr().out
    first = [float(v) for v in lines[0].split(",")[:4]]
    gt = load_sequence(sequence).boxes[0]
    assert np.allclose(first, (gt.x + 1, gt.y + 1, gt.w, gt.h), atol=1e-4)


def test_track_is_byte_identical(tmp_path, small_config, small_weights, sequence):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert track(small_config, small_weights, sequence, a, "5") == 0
    assert track(small_config, small_weights, sequence, b, "5") == 0
    assert a.read_bytes() == b.read_bytes()


def test_track_reports_corrupt_groundtruth(tmp_path, small_config, small_weights, sequence,
                                           capsys):
    gt = sequence / "groundtruth.txt"
    lines = gt.read_text().splitlines()
    lines[3] = "1,2,three,4"
    gt.write_text("\n".join(lines) + "\n")
    assert track(small_config, small_weights, sequence, tmp_path / "r.txt") != 0
    assert "line 4" in capsys.readouterr().err


def test_track_missing_weights(tmp_path, small_config, sequence):
    assert track(small_config, tmp_path / "none.bin", sequence, tmp_path / "r.txt") == 2


def test_eval_perfect_results(tmp_path, sequence, capsys):
    gt = sequence / "groundtruth.txt"
    curves = tmp_path / "curves"
    assert main(["eval", "--results", str(gt), "--seq", str(sequence),
                 "--curves-out", str(curves)]) == 0
    out = capsys.readouterr().out
    assert "0.9901" in out
    text = (curves / "groundtruth_success.csv").read_text()
    assert text.splitlines()[-1] == f"# summary={100 / 101!r}"
    assert (curves / "groundtruth_precision.csv").is_file()


def test_eval_two_runs_and_attributes(tmp_path, capsys):
    dirs, results = [], []
    for k, tags in enumerate([{"A"}, {"A", "B"}]):
        seq = moving_square(k, n_frames=4)
        d = write_sequence(tmp_path / f"s{k}", seq.frames, seq.boxes, tags)
        dirs.append(str(d))
        results.append(str(d / "groundtruth.txt"))
    curves = tmp_path / "curves"
    assert main(["eval", "--results", *results, "--seq", *dirs,
                 "--curves-out", str(curves)]) == 0
    names = sorted(p.name for p in curves.iterdir())
    assert names == ["groundtruth-2_precision.csv", "groundtruth-2_success.csv",
                     "groundtruth_precision.csv", "groundtruth_success.csv"]
    out = capsys.readouterr().out.splitlines()
    assert out[1].startswith("groundtruth ") and out[2].startswith("groundtruth-2 ")
    assert any(line.split() == ["A", "0.9901"] for line in out)
    assert any(line.split() == ["B", "0.9901"] for line in out)


def test_eval_misaligned(tmp_path, sequence):
    short = tmp_path / "short.txt"
    short.write_text("1,1,5,5\n")
    assert main(["eval", "--results", str(short), "--seq", str(sequence),
                 "--curves-out", str(tmp_path / "c")]) == 1
    assert main(["eval", "--results", str(short), str(short), "--seq", str(sequence),
                 "--curves-out", str(tmp_path / "c")]) == 2


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--seed", "3"]) == 0
    assert "max_relative_error=" in capsys.readouterr().out


def test_gradcheck_catches_broken_backward(monkeypatch):
    real = nnet._sigmoid_map_backward

    def broken(*args, **kwargs):
        return real(*args, **kwargs) * 1.01

    monkeypatch.setattr(nnet, "_sigmoid_map_backward", broken)
    assert main(["gradcheck", "--seed", "3"]) == 1


def test_config_round_trip(tmp_path, capsys):
    assert main(["config"]) == 0
    dumped = capsys.readouterr().out
    path = tmp_path / "c.yaml"
    path.write_text(dumped)
    assert main(["config", "--config", str(path)]) == 0
    assert capsys.readouterr().out == dumped


def test_invalid_config_names_the_key(tmp_path, capsys):
    bad = write_yaml(tmp_path / "bad.yaml", {"tracker": {"tau3": 2.0}})
    assert main(["config", "--config", str(bad)]) == 2
    assert "tracker.tau3" in capsys.readouterr().err
    unknown = write_yaml(tmp_path / "u.yaml", {"net": {"bogus": 1}})
    assert main(["config", "--config", str(unknown)]) == 2
    assert "net.bogus" in capsys.readouterr().err


def test_synth_seq(tmp_path):
    assert main(["synth-seq", "--out", str(tmp_path / "s"), "--frames", "3",
                 "--distractor", "--seed", "4"]) == 0
    seq = load_sequence(tmp_path / "s")
    assert len(seq.boxes) == 3
    assert main(["synth-seq", "--out", str(tmp_path / "t"), "--frames", "1"]) == 2
