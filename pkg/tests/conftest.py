import numpy as np
import pytest

from adaseq.architecture import ModelConfig, ModelParams


def pamap2_row(ts, activity, value=0.0, hr="100.0"):
    """One 54-column PAMAP2 text row with constant sensor readings."""
    return " ".join([f"{ts:.2f}", str(activity), hr] + [f"{value:.6f}"] * 51)


def write_subject(path, rows):
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_model():
    def make(arch="da_lstm", D=4, m=3, input_dim=3, num_classes=4, seed=7, **kw):
        cfg = ModelConfig(arch=arch, hidden_size=D, num_cells=m, input_dim=input_dim, num_classes=num_classes, seed=seed, **kw)
        return cfg, ModelParams.init(cfg)

    return make
