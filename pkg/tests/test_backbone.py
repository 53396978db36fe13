import pytest
import torch

from stclstm_depth.backbone import (
    MFF_CHANNELS,
    BackboneConfig,
    extract_features,
    init_backbone,
)
from stclstm_depth.errors import PreconditionError


def expected_parameter_count(cfg):
    # Sum of layer shapes: convs without bias + BN (weight, bias)
    enc = cfg.encoder_channels
    total = 0
    cin = 3
    for ch in enc:
        total += 9 * cin * ch + 2 * ch + 9 * ch * ch + 2 * ch
        cin = ch
    total += enc[-1] * enc[-1] + 2 * enc[-1]
    cin = enc[-1]
    for ch in cfg.decoder_channels:
        total += 25 * cin * ch + 2 * ch
        cin = ch
    for ch in enc:
        total += ch * MFF_CHANNELS + 2 * MFF_CHANNELS
    c = cfg.feature_channels
    total += 9 * (cin + MFF_CHANNELS * len(enc)) * c + c
    return total


def test_tiny_preset_shapes():
    cfg = BackboneConfig.from_preset("tiny")
    assert cfg.encoder_channels == (16, 32, 64, 128)
    assert cfg.feature_channels == 64
    assert cfg.output_stride == 4
    net = init_backbone(cfg, seed=0).eval()
    feats = extract_features(torch.rand(2, 3, 64, 64), net)
    assert len(feats) == 2
    assert feats[0].values.shape == (64, 16, 16)
    assert [f.source_frame for f in feats] == [0, 1]


def test_stride_two_output():
    cfg = BackboneConfig(encoder_channels=(8, 16, 16, 32), feature_channels=16, output_stride=2)
    net = init_backbone(cfg, seed=0).eval()
    assert net(torch.rand(1, 3, 32, 48)).shape == (1, 16, 16, 24)


def test_identical_frames_give_identical_features():
    net = init_backbone(BackboneConfig.from_preset("tiny"), seed=1).eval()
    frame = torch.rand(1, 3, 32, 32)
    out = net(torch.cat([frame, frame]))
    assert torch.equal(out[0], out[1])


def test_zero_input_is_finite():
    net = init_backbone(BackboneConfig.from_preset("tiny"), seed=2).eval()
    assert torch.isfinite(net(torch.zeros(1, 3, 32, 32))).all()


def test_input_must_be_multiple_of_16():
    net = init_backbone(BackboneConfig.from_preset("tiny"), seed=0)
    with pytest.raises(PreconditionError):
        net(torch.rand(1, 3, 40, 32))


def test_same_seed_same_parameters():
    cfg = BackboneConfig.from_preset("tiny")
    a = init_backbone(cfg, seed=3).state_dict()
    b = init_backbone(cfg, seed=3).state_dict()
    c = init_backbone(cfg, seed=4).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_init_does_not_touch_global_rng():
    torch.manual_seed(0)
    expected = torch.rand(3)
    torch.manual_seed(0)
    init_backbone(BackboneConfig.from_preset("tiny"), seed=9)
    assert torch.equal(torch.rand(3), expected)


@pytest.mark.parametrize("preset", ["tiny", "small"])
def test_parameter_count_matches_layer_shapes(preset):
    cfg = BackboneConfig.from_preset(preset)
    assert init_backbone(cfg, seed=0).parameter_count() == expected_parameter_count(cfg)


def test_weight_variance_is_fan_in_scaled():
    net = init_backbone(BackboneConfig.from_preset("tiny"), seed=0)
    checked = 0
    for m in net.modules():
        if isinstance(m, torch.nn.Conv2d) and m.weight.numel() >= 50_000:
            fan_in = m.weight[0].numel()
            var = m.weight.detach().var().item()
            assert var == pytest.approx(2.0 / fan_in, rel=0.1)
            if m.bias is not None:
                assert torch.count_nonzero(m.bias) == 0
            checked += 1
    assert checked >= 2


def test_invalid_configs():
    with pytest.raises(PreconditionError):
        BackboneConfig(output_stride=8)
    with pytest.raises(PreconditionError):
        BackboneConfig(feature_channels=8)
    with pytest.raises(PreconditionError):
        BackboneConfig(encoder_channels=(32, 16, 64, 128))
    with pytest.raises(PreconditionError):
        BackboneConfig.from_preset("huge")


def test_gradient_check_double():
    cfg = BackboneConfig(encoder_channels=(4, 4, 8, 16), feature_channels=16, output_stride=4)
    net = init_backbone(cfg, seed=0).double().eval()
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64, requires_grad=True)
    weights = torch.randn(1, 16, 4, 4, dtype=torch.float64)

    def scalar(inp):
        return (net(inp) * weights).sum()

    assert torch.autograd.gradcheck(scalar, (x,), eps=1e-6, atol=1e-5, rtol=1e-4)


def test_translation_covariance_smoke():
    # Shifting the input by output_stride pixels moves the interior by one cell
    net = init_backbone(BackboneConfig.from_preset("tiny"), seed=0).eval()
    g = torch.Generator().manual_seed(0)
    x = torch.rand(1, 3, 64, 96, generator=g)
    shifted = torch.roll(x, shifts=4, dims=-1)
    with torch.no_grad():
        a = net(x)[..., 3:-3, 3:-4]
        b = net(shifted)[..., 3:-3, 4:-3]
        unaligned = net(shifted)[..., 3:-3, 3:-4]
    aligned_err = (a - b).abs().mean()
    unaligned_err = (a - unaligned).abs().mean()
    assert aligned_err < unaligned_err
