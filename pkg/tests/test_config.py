import pytest

from conddgcn.config import ConfigError, RunConfig, load_config, parse_config


def test_defaults_follow_training_recipe():
    cfg = RunConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.lr, cfg.milestones, cfg.motion_weight) == (110, 256, 5e-3, [80, 90, 100], 0.1)


def test_parse_types_and_comments():
    cfg = parse_config("""
# a comment
frames = 32          # trailing comment
dropout = 0.1
norm = true
cond = all
milestones = 22, 25, 28
actions = gait
lr = 1e-3
""")
    assert cfg.frames == 32 and cfg.dropout == 0.1 and cfg.norm is True and cfg.cond == "all"
    assert cfg.milestones == [22, 25, 28] and cfg.actions == ["gait"] and cfg.lr == 1e-3


def test_integer_accepted_for_float_key():
    assert parse_config("dropout = 0").dropout == 0.0


@pytest.mark.parametrize("text, fragment", [
    ("framez = 3", "line 1: unknown key 'framez'"),
    ("\nframes 3", "2: expected 'key = value'"),
    ("frames = 3.5", "frames: expected an integer"),
    ("norm = maybe", "norm: expected true/false"),
    ("lr = fast", "lr: expected a number"),
])
def test_errors_point_at_line(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text, "run.cfg")


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")
    assert load_config(None) == RunConfig()


def test_model_kwargs_build_a_model():
    from conddgcn.network import ModelConfig
    cfg = parse_config("frames = 16\nchannels = 4\nmerge_channels = 6")
    assert ModelConfig(**cfg.model_kwargs()).frames == 16
