import json
from concurrent.futures import ThreadPoolExecutor

import matplotlib
import numpy as np
import pytest
import torch

from stclstm_depth.backbone import BackboneConfig
from stclstm_depth.checkpoint import bundle_from_state, restore_generator
from stclstm_depth.errors import DatasetIOError, PreconditionError
from stclstm_depth.inference import (
    BenchReport,
    benchmark,
    colorize_depth,
    pinned_kernels,
    pooled_apply,
    predict,
    run_mode,
)
from stclstm_depth.model import build_depth_net
from stclstm_depth.synthdata import DEFAULT_DEPTH_SCALE, list_sequences, load_sequence, sequence_length


def tiny_net(use_clstm=True):
    return build_depth_net(BackboneConfig.from_preset("tiny"), use_clstm, seed=0).eval()


@pytest.mark.parametrize("workers", [1, 2])
@pytest.mark.parametrize("use_clstm", [True, False])
def test_modes_are_bit_identical(use_clstm, workers):
    net = tiny_net(use_clstm)
    frames = torch.rand(7, 3, 32, 32, generator=torch.Generator().manual_seed(0))
    with pinned_kernels():
        s_depth, s_stamps = run_mode(net, frames, "s_mode")
        ps_depth, ps_stamps = run_mode(net, frames, "ps_mode", chunk=3, workers=workers)
    assert s_depth.shape == (7, 1, 32, 32)
    assert torch.equal(s_depth, ps_depth)
    assert len(s_stamps) == len(ps_stamps) == 7
    assert all(a <= b for a, b in zip(s_stamps, s_stamps[1:]))


def test_online_run_matches_batch_forward():
    net = tiny_net()
    frames = torch.rand(4, 3, 32, 32, generator=torch.Generator().manual_seed(1))
    online, _ = run_mode(net, frames, "s_mode")
    with torch.no_grad():
        batch = net(frames[None])[0]
    assert torch.allclose(online, batch, atol=1e-5)


def test_unknown_mode_and_chunk():
    net = tiny_net()
    frames = torch.rand(2, 3, 16, 16)
    with pytest.raises(PreconditionError):
        run_mode(net, frames, "p_mode")
    with pytest.raises(PreconditionError):
        run_mode(net, frames, "ps_mode", chunk=0)
    with pytest.raises(PreconditionError):
        run_mode(net, frames, "ps_mode", workers=0)


def test_bench_report_arithmetic():
    report = BenchReport.from_timing("ps_mode", 28.90, 100, 20)
    assert report.fps == pytest.approx(34.60, abs=0.01)
    assert json.loads(json.dumps(report.to_dict()))["mode"] == "ps_mode"
    assert "ps_mode" in report.summary()


def test_benchmark_counts_timed_frames():
    net = tiny_net()
    frames = torch.rand(101, 3, 16, 16)
    report = benchmark(net, frames, "s_mode", warmup_frames=1)
    assert report.n_frames_timed == 100
    assert report.workers == 1
    assert report.warmup_frames == 1
    assert report.ms_per_frame > 0
    assert report.fps == pytest.approx(1000.0 / report.ms_per_frame)
    assert report.head == "clstm"


def test_benchmark_needs_enough_frames():
    net = tiny_net()
    with pytest.raises(PreconditionError):
        benchmark(net, torch.rand(100, 3, 16, 16), "s_mode", warmup_frames=1)


def test_pinned_kernels_restores_threads():
    before = torch.get_num_threads()
    mkldnn_before = torch.backends.mkldnn.enabled
    with pinned_kernels(1):
        assert torch.get_num_threads() == 1
        assert torch.backends.mkldnn.enabled is False
    assert torch.get_num_threads() == before
    assert torch.backends.mkldnn.enabled == mkldnn_before


def test_colorize_depth():
    depth = np.array([[1.0, 2.0], [3.0, 4.0]])
    image = colorize_depth(depth)
    assert image.shape == (2, 2, 3)
    assert image.dtype == np.uint8
    # viridis: the near end is darker than the far end
    assert image[0, 0].sum() < image[1, 1].sum()
    flat = colorize_depth(np.full((2, 2), 5.0))
    assert np.all(flat == flat[0, 0])


def test_colormap_ends_follow_min_and_max():
    depth = np.linspace(1.0, 9.0, 20).reshape(4, 5)
    image = colorize_depth(depth).astype(int)
    cmap = matplotlib.colormaps["viridis"]
    near = np.round(np.array(cmap(0.0)[:3]) * 255).astype(int)
    far = np.round(np.array(cmap(1.0)[:3]) * 255).astype(int)
    assert np.abs(image[0, 0] - near).max() <= 1
    assert np.abs(image[-1, -1] - far).max() <= 1


def test_predict_single_sequence_round_trip(dataset_root, tmp_path):
    net = tiny_net()
    bundle = bundle_from_state(net)
    sid = list_sequences(dataset_root)[0]
    n = sequence_length(dataset_root, sid)
    out = tmp_path / "pred"

    written = predict(bundle, dataset_root / sid, out, emit_colormap=True)
    assert written == n

    source = load_sequence(dataset_root, sid, 0, n)
    frames = torch.from_numpy(np.ascontiguousarray(source.rgb.transpose(0, 3, 1, 2)))
    expected, _ = run_mode(restore_generator(bundle), frames, "ps_mode")
    expected = np.minimum(expected[:, 0].numpy(), 65535 / DEFAULT_DEPTH_SCALE)

    loaded = load_sequence(tmp_path, "pred", 0, n)
    assert loaded.depth.shape == expected.shape
    assert np.all(np.abs(loaded.depth - expected) <= 0.5 / DEFAULT_DEPTH_SCALE + 1e-6)
    assert len(list((out / "colormap").iterdir())) == n


def test_predict_dataset_root(dataset_root, tmp_path):
    bundle = bundle_from_state(tiny_net(use_clstm=False))
    total = predict(bundle, dataset_root, tmp_path)
    ids = list_sequences(dataset_root)
    assert total == sum(sequence_length(dataset_root, sid) for sid in ids)
    assert list_sequences(tmp_path) == ids


def test_predict_missing_input(tmp_path):
    bundle = bundle_from_state(tiny_net())
    with pytest.raises(DatasetIOError):
        predict(bundle, tmp_path / "missing", tmp_path / "out")
    (tmp_path / "empty").mkdir()
    with pytest.raises(DatasetIOError):
        predict(bundle, tmp_path / "empty", tmp_path / "out")


def test_ps_benchmark_reports_workers():
    net = tiny_net()
    frames = torch.rand(102, 3, 16, 16)
    report = benchmark(net, frames, "ps_mode", chunk=40, warmup_frames=2, workers=2)
    assert report.workers == 2
    assert report.n_frames_timed == 100
    assert report.first_frame_latency_ms <= report.ms_per_frame * report.n_frames_timed


def test_pooled_apply_splits_rows():
    seen = []

    def record(x):
        seen.append(x.shape[0])
        return x * 2

    x = torch.arange(10.0).reshape(5, 2)
    with ThreadPoolExecutor(max_workers=2) as pool:
        out = pooled_apply(pool, 2)(record, x)
    assert torch.equal(out, x * 2)
    assert sorted(seen) == [2, 3]
    assert torch.equal(pooled_apply(None, 1)(record, x), x * 2)
