import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewlesion import nets
from fewlesion import tensor_core as tc
from fewlesion.nets import EncoderConfig, SegNetConfig
from fewlesion.tensor_core import Tensor

# hand-computed: sum over convs of c_in*9*c_out + c_out, plus the final layer
ENCODER_DEFAULT_COUNT = (3 * 9 * 8 + 8) + (8 * 9 * 16 + 16) + (16 * 9 * 32 + 32) + (32 * 64 + 64)  # 8144
SEG_SKIP_COUNT = (3 * 9 * 8 + 8) + (8 * 9 * 16 + 16) + (32 * 9 * 16 + 16) + (24 * 9 * 8 + 8) + (8 + 1)  # 7761
SEG_NOSKIP_COUNT = (3 * 9 * 8 + 8) + (8 * 9 * 16 + 16) + (16 * 9 * 16 + 16) + (16 * 9 * 8 + 8) + (8 + 1)  # 4881


def small_images(rng, b=2, side=16):
    return Tensor(rng.uniform(0, 1, size=(b, 3, side, side)))


# -- encoder -------------------------------------------------------------------

def test_encoder_embedding_shape():
    enc = nets.build_encoder(EncoderConfig(), np.random.default_rng(0))
    out = nets.encoder_forward(enc, Tensor(np.random.default_rng(1).uniform(size=(1, 3, 64, 64))))
    assert out.shape == (1, 64)
    assert np.all(np.isfinite(out.data))


def test_encoder_seeded_construction_is_bit_identical():
    a = nets.build_encoder(EncoderConfig(), np.random.default_rng(3))
    b = nets.build_encoder(EncoderConfig(), np.random.default_rng(3))
    assert a.checksum() == b.checksum()
    assert nets.build_encoder(EncoderConfig(), np.random.default_rng(4)).checksum() != a.checksum()


def test_encoder_param_count():
    enc = nets.build_encoder(EncoderConfig(), np.random.default_rng(0))
    assert enc.count() == ENCODER_DEFAULT_COUNT == nets.encoder_param_count(EncoderConfig()) == 8144


def test_encoder_zero_images_give_identical_bias_only_embeddings():
    enc = nets.build_encoder(EncoderConfig(side=16, widths=(4, 8), embed_dim=5), np.random.default_rng(0))
    out = nets.encoder_forward(enc, Tensor(np.zeros((3, 3, 16, 16)))).data
    assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])
    # the first conv sees only its bias, so its weights cannot matter
    enc["enc.stage0.conv.w"].data = np.random.default_rng(1).standard_normal(enc["enc.stage0.conv.w"].shape)
    again = nets.encoder_forward(enc, Tensor(np.zeros((1, 3, 16, 16)))).data
    assert np.array_equal(again[0], out[0])
    assert out.shape == (3, 5)


def test_encoder_batch_consistency(rng):
    enc = nets.build_encoder(EncoderConfig(side=16, widths=(4, 8), embed_dim=6), rng)
    x = small_images(rng, b=4)
    full = nets.encoder_forward(enc, x).data
    for i in range(4):
        single = nets.encoder_forward(enc, Tensor(x.data[i : i + 1])).data[0]
        assert np.max(np.abs(full[i] - single)) <= 1e-12


def test_encoder_is_sensitive_to_a_pixel():
    rng = np.random.default_rng(8)
    for seed in range(3):
        enc = nets.build_encoder(EncoderConfig(side=16, widths=(4, 8), embed_dim=6), np.random.default_rng(seed))
        x = small_images(rng, b=1)
        y = x.data.copy()
        y[0, :, 8, 8] += 0.5
        assert not np.array_equal(nets.encoder_forward(enc, x).data, nets.encoder_forward(enc, Tensor(y)).data)


def test_encoder_rejects_bad_spatial_size_and_config(rng):
    enc = nets.build_encoder(EncoderConfig(side=16, widths=(4, 8), embed_dim=6), rng)
    with pytest.raises(ValueError):
        nets.encoder_forward(enc, Tensor(np.zeros((1, 3, 18, 18))))
    with pytest.raises(ValueError):
        nets.encoder_forward(enc, Tensor(np.zeros((1, 1, 16, 16))))
    with pytest.raises(ValueError):
        EncoderConfig(side=60)
    with pytest.raises(ValueError):
        EncoderConfig(embed_dim=1)


def test_encoder_gradients():
    cfg = EncoderConfig(side=8, widths=(2, 3), embed_dim=3)

    def build(rng, inputs):
        enc = nets.build_encoder(cfg, rng)
        return dict(enc.items()), lambda: tc.sum(tc.mul(nets.encoder_forward(enc, inputs["x"]), Tensor([1.0, -2.0, 0.5])))

    assert tc.grad_check(build, {"x": ((1, 3, 8, 8), (0.0, 1.0))}).worst < 1e-4


# -- segmenter -----------------------------------------------------------------

def test_segnet_mask_shape_and_range():
    seg = nets.build_segnet(SegNetConfig(), np.random.default_rng(0))
    m = nets.segnet_forward(seg, Tensor(np.random.default_rng(1).uniform(size=(2, 3, 64, 64)))).data
    assert m.shape == (2, 1, 64, 64)
    assert np.all((m > 0) & (m < 1))


def test_segnet_param_counts_with_and_without_skips():
    rng = np.random.default_rng(0)
    assert nets.build_segnet(SegNetConfig(), rng).count() == SEG_SKIP_COUNT == 7761
    assert nets.build_segnet(SegNetConfig(skip=False), rng).count() == SEG_NOSKIP_COUNT == 4881
    assert nets.segnet_param_count(SegNetConfig()) == 7761
    assert nets.segnet_param_count(SegNetConfig(skip=False)) == 4881


def test_segnet_seeded_and_deterministic(rng):
    a = nets.build_segnet(SegNetConfig(side=16), np.random.default_rng(5))
    b = nets.build_segnet(SegNetConfig(side=16), np.random.default_rng(5))
    assert a.checksum() == b.checksum()
    x = small_images(rng)
    assert nets.segnet_forward(a, x).data.tobytes() == nets.segnet_forward(b, x).data.tobytes()


def test_segnet_head_is_named_and_one_by_one():
    seg = nets.build_segnet(SegNetConfig(), np.random.default_rng(0))
    assert seg["seg.head.w"].shape == (1, 8, 1, 1) and seg["seg.head.b"].shape == (1,)
    assert "enc.stage0.conv.w" in nets.build_encoder(EncoderConfig(), np.random.default_rng(0))


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.booleans(), st.integers(0, 1000))
def test_segnet_shape_round_trip(stages, mult, skip, seed):
    side = (2**stages) * mult
    cfg = SegNetConfig(side=side, widths=tuple(2 + i for i in range(stages)), skip=skip)
    seg = nets.build_segnet(cfg, np.random.default_rng(seed))
    out = nets.segnet_forward(seg, Tensor(np.random.default_rng(seed).uniform(size=(1, 3, side, side))))
    assert out.shape == (1, 1, side, side)
    assert seg.count() == nets.segnet_param_count(cfg)


def test_segnet_range_stays_open_under_saturation():
    seg = nets.build_segnet(SegNetConfig(side=8, widths=(2,)), np.random.default_rng(0))
    seg["seg.head.b"].data[:] = 1e4
    assert np.all(nets.segnet_forward(seg, Tensor(np.ones((1, 3, 8, 8)))).data < 1.0)
    seg["seg.head.b"].data[:] = -1e4
    assert np.all(nets.segnet_forward(seg, Tensor(np.ones((1, 3, 8, 8)))).data > 0.0)


def test_segnet_gradients():
    cfg = SegNetConfig(side=4, widths=(2,), skip=True)
    y = (np.random.default_rng(0).uniform(size=(1, 1, 4, 4)) > 0.5).astype(float)

    def build(rng, inputs):
        seg = nets.build_segnet(cfg, rng)
        return dict(seg.items()), lambda: tc.bce_loss(nets.segnet_forward(seg, inputs["x"]), y)

    assert tc.grad_check(build, {"x": ((1, 3, 4, 4), (0.0, 1.0))}).worst < 1e-4


# -- freezing --------------------------------------------------------------------

def test_freeze_all_but_head_counts_and_idempotence():
    seg = nets.build_segnet(SegNetConfig(), np.random.default_rng(0))
    before = seg.checksum()
    nets.freeze_all_but_head(seg)
    assert seg.count(trainable_only=True) == 8 * 1 * 1 * 1 + 1
    names = [n for n, _ in seg.trainable_items()]
    nets.freeze_all_but_head(seg)
    assert [n for n, _ in seg.trainable_items()] == names == ["seg.head.w", "seg.head.b"]
    assert seg.checksum() == before


def test_freeze_all_leaves_nothing_trainable():
    seg = nets.build_segnet(SegNetConfig(), np.random.default_rng(0))
    before = seg.checksum()
    nets.freeze_all(seg)
    assert seg.count(trainable_only=True) == 0
    assert seg.checksum() == before


def test_freeze_without_head_rejected():
    enc = nets.build_encoder(EncoderConfig(), np.random.default_rng(0))
    with pytest.raises(ValueError, match="head"):
        nets.freeze_all_but_head(enc)


def test_freeze_groups_selects_groups():
    seg = nets.build_segnet(SegNetConfig(), np.random.default_rng(0))
    nets.freeze_groups(seg, ["up0", "head"])
    assert {n.split(".")[1] for n, _ in seg.trainable_items()} == {"up0", "head"}
    with pytest.raises(ValueError):
        nets.freeze_groups(seg, ["nope"])


def test_adam_after_head_freeze_changes_only_head(rng):
    seg = nets.build_segnet(SegNetConfig(side=16), np.random.default_rng(0))
    nets.freeze_all_but_head(seg)
    before = seg.state_dict()
    opt = tc.Adam(seg, lr=1e-2)
    y = (rng.uniform(size=(2, 1, 16, 16)) > 0.5).astype(float)
    tc.backward(tc.bce_loss(nets.segnet_forward(seg, small_images(rng)), y))
    opt.step()
    after = seg.state_dict()
    for name in before:
        changed = not np.array_equal(before[name], after[name])
        assert changed == name.startswith("seg.head."), name


def test_registry_duplicate_names_and_state_round_trip(rng):
    reg = nets.ParamRegistry()
    reg.add("a.b.w", np.zeros(2))
    with pytest.raises(ValueError):
        reg.add("a.b.w", np.zeros(2))
    enc = nets.build_encoder(EncoderConfig(side=16, widths=(4,), embed_dim=3), rng)
    other = nets.build_encoder(EncoderConfig(side=16, widths=(4,), embed_dim=3), np.random.default_rng(99))
    other.load_state_dict(enc.state_dict())
    assert other.checksum() == enc.checksum()
    bad = enc.state_dict()
    bad["enc.fc.w"] = np.zeros((1, 1))
    with pytest.raises(ValueError, match="enc.fc.w"):
        other.load_state_dict(bad)
