import json

import pytest

from stclstm_depth.cli import EXIT_DIVERGENCE, EXIT_IO, EXIT_OK, EXIT_USAGE, run
from stclstm_depth.errors import DivergenceError
from stclstm_depth.pipeline import CHECKPOINT_FILE, LOG_FILE, Trainer
from stclstm_depth.synthdata import list_sequences, load_sequence, sequence_length

FAST_TRAIN = """\
# entrenamiento corto
epochs = 1
warmup_epochs = 0
n_frames = 2
batch_sequences = 2
max_steps_per_epoch = 1
augment = no
progress = no
use_gan = no
"""


def write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.fixture
def trained_checkpoint(dataset_root, tmp_path):
    out = tmp_path / "run"
    assert run(["train", "--data", str(dataset_root), "--out", str(out), "--config", write_config(tmp_path, FAST_TRAIN)]) == EXIT_OK
    return out / CHECKPOINT_FILE


def test_gen_data(tmp_path, capsys):
    cfg = write_config(tmp_path, "scene.resolution = 32, 32\nscene.n_objects = 2\n")
    out = tmp_path / "data"
    code = run(["gen-data", "--out", str(out), "--sequences", "3", "--frames", "2", "--seed", "1", "--config", cfg])
    assert code == EXIT_OK
    ids = list_sequences(out)
    assert ids == ["seq_0000", "seq_0001", "seq_0002"]
    sample = load_sequence(out, ids[0], 0, 2)
    assert sample.depth.shape == (2, 32, 32)
    assert "3 secuencias" in capsys.readouterr().out


def test_train_writes_checkpoint_and_log(trained_checkpoint):
    assert trained_checkpoint.is_file()
    assert (trained_checkpoint.parent / LOG_FILE).is_file()
    assert (trained_checkpoint.parent / "log.txt").is_file()


def test_eval_writes_reports(trained_checkpoint, dataset_root, tmp_path, capsys):
    out = tmp_path / "eval"
    code = run(["eval", "--checkpoint", str(trained_checkpoint), "--data", str(dataset_root), "--frames", "2", "--out", str(out)])
    assert code == EXIT_OK
    data = json.loads((out / "metrics.json").read_text())
    assert data["n_sequences"] == len(list_sequences(dataset_root))
    text = (out / "metrics.txt").read_text()
    assert text.splitlines()[0].startswith("rel ")
    assert text in capsys.readouterr().out


def test_predict_command(trained_checkpoint, dataset_root, tmp_path):
    sid = list_sequences(dataset_root)[0]
    out = tmp_path / "pred"
    code = run(["predict", "--checkpoint", str(trained_checkpoint), "--input", str(dataset_root / sid), "--out", str(out)])
    assert code == EXIT_OK
    n = sequence_length(dataset_root, sid)
    assert load_sequence(tmp_path, "pred", 0, n).depth.shape[0] == n


def test_missing_checkpoint_is_io_error(dataset_root, tmp_path):
    code = run(["eval", "--checkpoint", str(tmp_path / "none.stckpt"), "--data", str(dataset_root)])
    assert code == EXIT_IO


def test_missing_dataset_is_io_error(tmp_path):
    code = run(["train", "--data", str(tmp_path / "nothing"), "--config", write_config(tmp_path, FAST_TRAIN)])
    assert code == EXIT_IO


def test_unknown_config_key(dataset_root, tmp_path, capsys):
    cfg = write_config(tmp_path, FAST_TRAIN + "learning_rate = 0.1\n")
    assert run(["train", "--data", str(dataset_root), "--config", cfg]) == EXIT_USAGE
    assert "learning_rate" in capsys.readouterr().err


def test_bad_config_value_points_at_line(dataset_root, tmp_path, capsys):
    cfg = write_config(tmp_path, "epochs = 1\nn_frames = cinco\n")
    assert run(["train", "--data", str(dataset_root), "--config", cfg]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "n_frames = cinco" in err


def test_precondition_is_usage_error(dataset_root, tmp_path):
    cfg = write_config(tmp_path, FAST_TRAIN.replace("warmup_epochs = 0", "warmup_epochs = 1"))
    assert run(["train", "--data", str(dataset_root), "--config", cfg]) == EXIT_USAGE


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        run(["train"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        run(["bench", "--mode", "p_mode"])


def test_divergence_exit_code(dataset_root, tmp_path, monkeypatch):
    def diverging(self, batch, epoch=0, step=0):
        raise DivergenceError("pérdida del generador = inf", None, epoch, step)

    monkeypatch.setattr(Trainer, "train_step", diverging)
    out = tmp_path / "run"
    code = run(["train", "--data", str(dataset_root), "--out", str(out), "--config", write_config(tmp_path, FAST_TRAIN)])
    assert code == EXIT_DIVERGENCE
    assert (out / "last_finite.stckpt").is_file()


def test_bench_writes_report(tmp_path, capsys):
    cfg = write_config(tmp_path, "scene.resolution = 16, 16\n")
    out = tmp_path / "bench"
    code = run(["bench", "--frames", "101", "--warmup", "1", "--mode", "both", "--config", cfg, "--out", str(out)])
    assert code == EXIT_OK
    reports = json.loads((out / "bench.json").read_text())
    assert [r["mode"] for r in reports] == ["s_mode", "ps_mode"]
    assert all(r["n_frames_timed"] == 100 for r in reports)
    assert "ms/frame" in capsys.readouterr().out


def test_bench_with_too_few_frames(tmp_path):
    cfg = write_config(tmp_path, "scene.resolution = 16, 16\n")
    assert run(["bench", "--frames", "50", "--warmup", "1", "--config", cfg]) == EXIT_USAGE


@pytest.mark.slow
def test_parallel_mode_is_faster(tmp_path):
    out = tmp_path / "bench"
    assert run(["bench", "--frames", "220", "--out", str(out)]) == EXIT_OK
    s_mode, ps_mode = json.loads((out / "bench.json").read_text())
    assert ps_mode["fps"] >= 1.5 * s_mode["fps"]
