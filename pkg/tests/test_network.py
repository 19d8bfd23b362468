import numpy as np
import pytest

from conddgcn.network import (CheckpointError, ModelConfig, build_model, copy_model, forward, load_checkpoint,
                              param_count, save_checkpoint)

SMALL = dict(frames=16, channels=8, merge_channels=12, num_bases=4)


def expected_params(cfg: ModelConfig, J=17):
    def graph(cin, cout, cond):
        n = cout * 3 * cin + cout + cout * (2 * cout + cin) + cout
        if cond:
            n += cout * 3 * cout + cout + cfg.num_bases * (J * J + 2 * cin + 1)
        return n

    def block(cin, cout, cond):
        n = graph(cin, cout, cond) + 2 * (cout * cout * cfg.kernel_size + cout)
        return n + (4 * cout if cfg.norm else 0)

    C, Cm, D = cfg.channels, cfg.merge_channels, cfg.depth
    total = block(2, C, False)
    total += D * block(C, C, cfg.stage_is_conditional("down"))
    total += D * block(2 * C, C, cfg.stage_is_conditional("up"))
    cond = cfg.stage_is_conditional("merge")
    total += block((D + 1) * C, Cm, cond) + (cfg.merge_blocks - 1) * block(Cm, Cm, cond)
    return total + 3 * Cm + 3


def test_shape_contract():
    model = build_model(ModelConfig(), seed=0)
    x = np.random.default_rng(0).uniform(-1, 1, size=(2, 96, 17, 2))
    out = forward(model, x)
    assert out.shape == (2, 96, 17, 3)
    assert model.skeleton.num_edges == 16


@pytest.mark.parametrize("cond", ["merge", "down", "up", "all", "off"])
@pytest.mark.parametrize("norm", [False, True])
def test_param_count_closed_form(cond, norm):
    cfg = ModelConfig(cond=cond, norm=norm, **SMALL)
    assert param_count(build_model(cfg)) == expected_params(cfg)


def test_default_param_count():
    cfg = ModelConfig()
    assert param_count(build_model(cfg)) == expected_params(cfg)


def test_variants_share_output_shape(rng):
    x = rng.uniform(-1, 1, size=(1, 16, 17, 2))
    shapes = {forward(build_model(ModelConfig(cond=c, **SMALL)), x).shape for c in ("merge", "off", "all")}
    assert shapes == {(1, 16, 17, 3)}


def test_cond_placement():
    m = build_model(ModelConfig(cond="merge", **SMALL))
    assert [b.conditional for b in m.blocks()] == [False, False, False, False, False, True, True]
    m = build_model(ModelConfig(cond="all", **SMALL))
    assert [b.conditional for b in m.blocks()] == [False] + [True] * 6
    m = build_model(ModelConfig(cond="off", **SMALL))
    assert not any(b.conditional for b in m.blocks())


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(frames=90, depth=2)
    with pytest.raises(ValueError, match="cond"):
        ModelConfig(cond="everywhere")
    with pytest.raises(ValueError, match="odd"):
        ModelConfig(kernel_size=4)


def test_wrong_window_length():
    model = build_model(ModelConfig(**SMALL))
    with pytest.raises(ValueError, match="16 frames"):
        forward(model, np.zeros((1, 12, 17, 2)))


def test_same_seed_same_model(rng):
    x = rng.uniform(-1, 1, size=(2, 16, 17, 2))
    a = forward(build_model(ModelConfig(**SMALL), seed=3), x)
    b = forward(build_model(ModelConfig(**SMALL), seed=3), x)
    c = forward(build_model(ModelConfig(**SMALL), seed=4), x)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_checkpoint_round_trip(tmp_path, rng):
    model = build_model(ModelConfig(norm=True, cond="all", **SMALL), seed=1)
    for blk in model.blocks():
        for k in blk.norm.buffers:
            blk.norm.buffers[k][:] = rng.uniform(0.5, 1.5, size=blk.norm.buffers[k].shape)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.cfg == model.cfg
    for (k, p), (k2, q) in zip(model.named_parameters().items(), loaded.named_parameters().items()):
        assert k == k2 and np.array_equal(p.data, q.data)
    for (k, p), q in zip(model.named_buffers().items(), loaded.named_buffers().values()):
        assert np.array_equal(p, q), k
    x = rng.uniform(-1, 1, size=(1, 16, 17, 2))
    assert np.array_equal(forward(model, x), forward(loaded, x))
    assert np.array_equal(forward(copy_model(model), x), forward(model, x))


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(build_model(ModelConfig(**SMALL)), path)
    raw = path.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(raw[:-100])
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(tmp_path / "trunc.ckpt")
    bad = bytearray(raw)
    bad[4] = 9
    (tmp_path / "ver.ckpt").write_bytes(bytes(bad))
    with pytest.raises(CheckpointError, match="version 9"):
        load_checkpoint(tmp_path / "ver.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"hello world, definitely not a model" * 3)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "junk.ckpt")
    with pytest.raises(CheckpointError, match="layout"):
        load_checkpoint(path, layout="coco17")


def test_connection_matrices_after_forward(rng):
    model = build_model(ModelConfig(**SMALL))
    forward(model, rng.uniform(-1, 1, size=(3, 16, 17, 2)))
    mats = model.connection_matrices()
    assert len(mats) == 2 and all(m.shape == (3, 17, 17) for m in mats)
