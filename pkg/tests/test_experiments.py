import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conddgcn.config import parse_config
from conddgcn.data import SynthConfig, make_windows, synth_generate
from conddgcn.experiments import ablate, format_grid, inspect_connections, overfit
from conddgcn.network import ModelConfig, build_model
from conddgcn.plotting import write_curve_svg, write_heatmap_pgm

TINY = "frames = 16\nchannels = 4\nmerge_channels = 6\nnum_bases = 4\ncount = 4\nseq_frames = 32\n" \
       "epochs = 1\nbatch_size = 4\nseeds = 2\n"


def test_ablate_pairs_variants_per_seed():
    res = ablate(parse_config(TINY + "variants = off, merge, all\n"), base_seed=3)
    assert res.seeds == [3, 4]
    assert all(len(res.mpjpe[v]) == 2 and all(np.isfinite(res.mpjpe[v])) for v in res.variants)
    table = res.table()
    assert "ratio merge/off" in table and "ratio all/off" in table
    assert res.ratio("off") == 1.0


def test_ablate_is_reproducible():
    cfg = parse_config(TINY + "seeds = 1\n")
    assert ablate(cfg).mpjpe == ablate(cfg).mpjpe


def test_overfit_stops_at_target():
    seqs = synth_generate(SynthConfig(count=2, frames=16, seed=0))
    data = make_windows(seqs, 16)
    model = build_model(ModelConfig(frames=16, channels=4, merge_channels=6, num_bases=4, dropout=0.0))
    res = overfit(model, data, max_steps=40, target=0.0, every=10)
    assert res.steps == 10 and len(res.checkpoints) == 1  # a zero target is met at the first check
    res = overfit(model, data, max_steps=20, target=1.0, every=10)
    assert res.steps == 20 and res.reduction < 1.0


def test_inspect_matrices_per_window():
    seq = synth_generate(SynthConfig(count=1, frames=50, seed=0))[0]
    model = build_model(ModelConfig(frames=16, channels=4, merge_channels=6, num_bases=4, cond="all"))
    ins = inspect_connections(model, seq)
    assert ins.starts == [0, 16, 32, 34]
    assert ins.blocks == ["down0", "down1", "up0", "up1", "merge0", "merge1"]
    assert all(m.shape == (4, 17, 17) and np.all(np.isfinite(m)) for m in ins.matrices)
    with pytest.raises(ValueError, match="no conditional"):
        inspect_connections(build_model(ModelConfig(frames=16, channels=4, merge_channels=6, cond="off")), seq)


def test_format_grid():
    text = format_grid(np.arange(9.0).reshape(3, 3), ["a", "b", "c"])
    lines = text.splitlines()
    assert len(lines) == 4 and lines[0].split() == ["a", "b", "c"]
    assert [float(v) for v in lines[3].split()[1:]] == [6.0, 7.0, 8.0]


def test_heatmap_pgm(tmp_path):
    write_heatmap_pgm(tmp_path / "h.pgm", np.array([[-2.0, 0.0], [1.0, 2.0]]), cell=3)
    raw = (tmp_path / "h.pgm").read_bytes()
    header, pixels = raw[:11], np.frombuffer(raw[11:], dtype=np.uint8).reshape(6, 6)
    assert header == b"P5\n6 6\n255\n"
    assert pixels[0, 0] == 0 and pixels[0, 3] == 128 and pixels[5, 5] == 255


def test_curve_svg_is_valid_xml(tmp_path):
    write_curve_svg(tmp_path / "c.svg", [5, 10, 15], [10.0, 50.0, 90.0])
    root = ET.parse(tmp_path / "c.svg").getroot()
    line = root.find("{http://www.w3.org/2000/svg}polyline")
    assert len(line.get("points").split()) == 3
