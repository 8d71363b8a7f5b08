import numpy as np
import pytest
import torch

from ssal.errors import ConfigError, DataError
from ssal.net import (
    NetConfig,
    bottleneck,
    build,
    load_checkpoint,
    parameter_count,
    read_checkpoint,
    save_checkpoint,
    transfer_weights,
)

# recorded at first build; any architecture change must update these deliberately
PARAM_COUNTS = {(32, 4): 5142433, (64, 4): 20553537, (8, 2): 19305, (4, 1): 1045}


@pytest.mark.parametrize("key", list(PARAM_COUNTS))
def test_parameter_count_regression(key):
    assert parameter_count(NetConfig(base_channels=key[0], depth=key[1])) == PARAM_COUNTS[key]


def test_full_protocol_bottleneck_shape():
    cfg = NetConfig(base_channels=64, depth=4)
    assert cfg.bottleneck_shape((256, 256)) == (512, 16, 16)
    model = build(cfg, 0)
    with torch.no_grad():
        assert tuple(model.encode(torch.zeros(1, 1, 256, 256)).shape) == (1, 512, 16, 16)


def test_desk_bottleneck_shape():
    model = build(NetConfig(), 0)
    fmap = bottleneck(model, np.zeros((64, 64), np.float32))
    assert fmap.shape == (256, 4, 4)


@pytest.mark.parametrize("base,depth,size", [(8, 2, (16, 16)), (4, 3, (32, 16)), (4, 1, (8, 6))])
def test_bottleneck_shape_arithmetic(base, depth, size):
    cfg = NetConfig(base_channels=base, depth=depth)
    fmap = bottleneck(build(cfg, 1), np.random.default_rng(0).random(size))
    assert fmap.shape == (base * 2 ** (depth - 1), size[0] // 2**depth, size[1] // 2**depth)


def test_forward_range_and_shape(tiny_net):
    model = build(tiny_net, 3)
    x = torch.rand(2, 1, 16, 16)
    y = model(x)
    assert y.shape == x.shape
    assert (y > 0).all() and (y < 1).all()


def test_parameter_name_partition(tiny_net):
    names = [n for n, _ in build(tiny_net, 0).named_parameters()]
    assert all(n.split(".")[0] in {"encoder", "decoder", "head"} for n in names)
    assert {n.split(".")[0] for n in names} == {"encoder", "decoder", "head"}


def test_zero_input_finite(tiny_net):
    fmap = bottleneck(build(tiny_net, 0), np.zeros((16, 16)))
    assert np.isfinite(fmap).all()
    for m in build(tiny_net, 0).modules():
        if isinstance(m, torch.nn.Conv2d):
            assert not m.bias.any()


def test_build_deterministic(tiny_net):
    a, b = build(tiny_net, 7).state_dict(), build(tiny_net, 7).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    c = build(tiny_net, 8).state_dict()
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_identical_images_identical_features(tiny_net):
    model = build(tiny_net, 0)
    img = np.random.default_rng(1).random((16, 16))
    np.testing.assert_array_equal(bottleneck(model, img), bottleneck(model, img.copy()))


def test_indivisible_input_rejected(tiny_net):
    with pytest.raises(ConfigError):
        build(tiny_net, 0, input_size=(18, 16))
    with pytest.raises(ConfigError):
        build(tiny_net, 0)(torch.zeros(1, 1, 18, 16))


def test_bottleneck_resolution_mismatch(tiny_net):
    with pytest.raises(DataError):
        bottleneck(build(tiny_net, 0), np.zeros((32, 32)), size=(16, 16))


def test_transfer_copies_body_keeps_head(tiny_net):
    src = build(NetConfig(base_channels=8, depth=2, head="reconstruction"), 1)
    dst = build(tiny_net, 2)
    head_before = {k: v.clone() for k, v in dst.state_dict().items() if k.startswith("head.")}
    transfer_weights(src, dst)
    s, d = src.state_dict(), dst.state_dict()
    for k in d:
        if k.startswith(("encoder.", "decoder.")):
            assert torch.equal(s[k], d[k])
        else:
            assert torch.equal(d[k], head_before[k])
            if k.endswith("weight"):
                assert not torch.equal(d[k], s[k])
    snapshot = {k: v.clone() for k, v in d.items()}
    transfer_weights(src, dst)
    assert all(torch.equal(snapshot[k], v) for k, v in dst.state_dict().items())


def test_transfer_encoder_only(tiny_net):
    src, dst = build(tiny_net, 1), build(tiny_net, 2)
    fresh = {k: v.clone() for k, v in dst.state_dict().items()}
    transfer_weights(src, dst, scope="encoder")
    for k, v in dst.state_dict().items():
        ref = src.state_dict()[k] if k.startswith("encoder.") else fresh[k]
        assert torch.equal(v, ref)


def test_transfer_mismatch_rejected(tiny_net):
    with pytest.raises(ConfigError):
        transfer_weights(build(NetConfig(base_channels=4, depth=2), 0), build(tiny_net, 0))


def test_checkpoint_round_trip(tmp_path, tiny_net):
    model = build(tiny_net, 5)
    path = save_checkpoint(model, tmp_path / "m.bin", meta={"note": "x"})
    raw = path.read_bytes()
    assert raw[:4] == b"SSAL" and raw[4] == 1
    header, arrays = read_checkpoint(path)
    assert [t["name"] for t in header["tensors"]] == sorted(arrays)
    assert header["meta"] == {"note": "x"} and header["config"]["base_channels"] == 8
    back = load_checkpoint(path)
    for k, v in model.state_dict().items():
        assert torch.equal(v, back.state_dict()[k])
    assert save_checkpoint(back, tmp_path / "m2.bin", meta={"note": "x"}).read_bytes() == raw


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(DataError):
        read_checkpoint(p)


def test_forward_gradient_matches_finite_differences():
    torch.manual_seed(0)
    model = build(NetConfig(base_channels=4, depth=2), 3).double()
    x = torch.rand(1, 1, 16, 16, dtype=torch.float64)
    gt = (torch.rand(1, 1, 16, 16) > 0.5).double()
    from ssal.seg import seg_loss

    param = model.encoder[0].conv1.weight
    idx = (1, 0, 1, 2)
    loss = seg_loss(model(x), gt)
    (grad,) = torch.autograd.grad(loss, param)
    h = 1e-6
    with torch.no_grad():
        orig = param[idx].item()
        param[idx] = orig + h
        up = seg_loss(model(x), gt).item()
        param[idx] = orig - h
        down = seg_loss(model(x), gt).item()
        param[idx] = orig
    fd = (up - down) / (2 * h)
    assert abs(fd - grad[idx].item()) <= 1e-3 * max(abs(fd), 1e-12)
