import struct

import numpy as np
import pytest
import torch

from stclstm_depth.adversary import DiscriminatorConfig, build_discriminator
from stclstm_depth.backbone import BackboneConfig
from stclstm_depth.checkpoint import (
    MAGIC,
    PREFIX,
    CheckpointBundle,
    bundle_from_state,
    load_checkpoint,
    restore_discriminator,
    restore_generator,
    restore_optimizer,
    save_checkpoint,
)
from stclstm_depth.errors import CheckpointCorruptError, CheckpointError, CheckpointVersionError
from stclstm_depth.model import build_depth_net


def trained_state(steps=2):
    net = build_depth_net(BackboneConfig.from_preset("tiny"), use_clstm=True, seed=0)
    disc = build_discriminator(DiscriminatorConfig(block_channels=(4, 8, 8, 8)), seed=0)
    gen_opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    disc_opt = torch.optim.SGD(disc.parameters(), lr=1e-2, momentum=0.9)
    for _ in range(steps):
        out = net(torch.rand(1, 2, 3, 32, 32))
        gen_opt.zero_grad()
        out.mean().backward()
        gen_opt.step()
        logits = disc(torch.rand(1, 4, 2, 32, 32))
        disc_opt.zero_grad()
        logits.mean().backward()
        disc_opt.step()
    return net, disc, gen_opt, disc_opt


def test_round_trip_is_bit_exact(tmp_path):
    net, disc, gen_opt, disc_opt = trained_state()
    bundle = bundle_from_state(net, disc, gen_opt, disc_opt, epoch=3, extra={"note": "x"})
    save_checkpoint(bundle, tmp_path / "a.stckpt")
    loaded = load_checkpoint(tmp_path / "a.stckpt")
    assert loaded.equals(bundle)
    assert loaded.epoch == 3
    assert loaded.metadata["note"] == "x"
    assert loaded.has_discriminator()
    assert not (tmp_path / "a.stckpt.tmp").exists()


def test_restored_generator_predicts_identically(tmp_path):
    net, disc, gen_opt, disc_opt = trained_state()
    net.eval()
    save_checkpoint(bundle_from_state(net, disc, gen_opt, disc_opt), tmp_path / "a.stckpt")
    bundle = load_checkpoint(tmp_path / "a.stckpt")
    restored = restore_generator(bundle)
    assert not restored.training
    x = torch.rand(1, 3, 3, 32, 32)
    with torch.no_grad():
        assert torch.equal(net(x), restored(x))
    restored_disc = restore_discriminator(bundle)
    clip = torch.rand(1, 4, 3, 32, 32)
    disc.eval()
    restored_disc.eval()
    with torch.no_grad():
        assert torch.equal(disc(clip), restored_disc(clip))


def test_optimizer_state_resumes(tmp_path):
    net, disc, gen_opt, disc_opt = trained_state()
    save_checkpoint(bundle_from_state(net, disc, gen_opt, disc_opt), tmp_path / "a.stckpt")
    bundle = load_checkpoint(tmp_path / "a.stckpt")

    restored = restore_generator(bundle)
    opt = torch.optim.Adam(restored.parameters(), lr=5.0)
    restore_optimizer(opt, bundle, "generator")
    assert opt.param_groups[0]["lr"] == pytest.approx(1e-3)
    original = gen_opt.state_dict()["state"]
    for index, state in opt.state_dict()["state"].items():
        assert torch.equal(state["exp_avg"], original[index]["exp_avg"])

    restored_disc = restore_discriminator(bundle)
    sgd = torch.optim.SGD(restored_disc.parameters(), lr=1.0, momentum=0.9)
    restore_optimizer(sgd, bundle, "discriminator")
    assert sgd.param_groups[0]["lr"] == pytest.approx(1e-2)


def test_missing_optimizer_or_discriminator():
    net = build_depth_net(BackboneConfig.from_preset("tiny"), use_clstm=False, seed=0)
    bundle = bundle_from_state(net)
    assert restore_discriminator(bundle) is None
    with pytest.raises(CheckpointError):
        restore_optimizer(torch.optim.Adam(net.parameters()), bundle, "generator")
    assert restore_generator(bundle).head_kind == "baseline"


def test_dtypes_are_normalized():
    bundle = CheckpointBundle({"a": np.arange(3, dtype=np.int32), "b": np.ones(2, dtype=np.float64)})
    assert bundle.arrays["a"].dtype == np.dtype("<i8")
    assert bundle.arrays["b"].dtype == np.dtype("<f4")
    assert list(bundle.group("a")) == [""]


def write_small(path):
    bundle = CheckpointBundle({"w": np.arange(6, dtype=np.float32).reshape(2, 3)}, {"epoch": 1})
    save_checkpoint(bundle, path)
    return bundle


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.stckpt")


def test_truncated_file(tmp_path):
    path = tmp_path / "a.stckpt"
    write_small(path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)
    path.write_bytes(blob[:10])
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_flipped_payload_byte(tmp_path):
    path = tmp_path / "a.stckpt"
    write_small(path)
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "a.stckpt"
    write_small(path)
    blob = path.read_bytes()
    path.write_bytes(b"NOTCKPT\0" + blob[8:])
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_newer_version_is_rejected(tmp_path):
    path = tmp_path / "a.stckpt"
    write_small(path)
    blob = path.read_bytes()
    _, _, header_length = PREFIX.unpack_from(blob)
    path.write_bytes(PREFIX.pack(MAGIC, 2, header_length) + blob[PREFIX.size:])
    with pytest.raises(CheckpointVersionError) as info:
        load_checkpoint(path)
    assert info.value.expected == 1
    assert info.value.found == 2


def test_prefix_layout(tmp_path):
    path = tmp_path / "a.stckpt"
    write_small(path)
    blob = path.read_bytes()
    magic, version, header_length = struct.unpack_from("<8sIQ", blob)
    assert magic == MAGIC and version == 1
    assert blob[PREFIX.size:PREFIX.size + header_length].startswith(b"{")
