import numpy as np
import pytest

from adaseq.architecture import ModelConfig, ModelParams
from adaseq.cells import MaskConstants
from adaseq.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from adaseq.training import evaluate


@pytest.mark.parametrize("arch", ["da_lstm", "stacked_lstm", "deep_transition_lstm"])
def test_round_trip_bitwise(tmp_path, arch):
    cfg = ModelConfig(arch=arch, hidden_size=5, num_cells=3, input_dim=4, num_classes=3, seed=11, mask=MaskConstants(0.02, 7.5))
    params = ModelParams.init(cfg)
    params.b_out[...] = [np.pi, -1e-300, 1e300]
    save_checkpoint(tmp_path / "m.ckpt", params, cfg)
    back, cfg2 = load_checkpoint(tmp_path / "m.ckpt")
    assert cfg2 == cfg
    a, b = params.named_tensors(), back.named_tensors()
    assert list(a) == list(b)
    for k in a:
        assert a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes()


def test_save_load_evaluate_bitwise(tmp_path):
    cfg = ModelConfig(hidden_size=6, num_cells=3, input_dim=3, num_classes=4, seed=2)
    params = ModelParams.init(cfg)
    g = np.random.default_rng(0)
    X, Y = g.normal(size=(5, 7, 3)), g.integers(0, 4, size=(5, 7))
    before = evaluate(params, cfg, X, Y)
    save_checkpoint(tmp_path / "m.ckpt", params, cfg)
    after = evaluate(*load_checkpoint(tmp_path / "m.ckpt"), X, Y)
    assert before[0] == after[0] and before[1].tobytes() == after[1].tobytes()


def test_file_bytes_deterministic(tmp_path):
    cfg = ModelConfig(hidden_size=3, num_cells=2, input_dim=2, num_classes=2)
    save_checkpoint(tmp_path / "a", ModelParams.init(cfg), cfg)
    save_checkpoint(tmp_path / "b", ModelParams.init(cfg), cfg)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_corrupt_files_rejected(tmp_path):
    cfg = ModelConfig(hidden_size=3, num_cells=2, input_dim=2, num_classes=2)
    save_checkpoint(tmp_path / "a", ModelParams.init(cfg), cfg)
    blob = (tmp_path / "a").read_bytes()
    cases = {
        "magic": b"NOTACKPT" + blob[8:],
        "version": blob[:8] + (7).to_bytes(4, "little") + blob[12:],
        "truncated": blob[:-8],
    }
    for name, data in cases.items():
        (tmp_path / name).write_bytes(data)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / name)
