import numpy as np
import pytest
import torch

from semisynth import TrainConfig

# small-kernel convs on this workload run faster single-threaded than with
# thread-pool synchronization overhead
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_config():
    """Smallest config that exercises every code path in a few seconds."""
    return TrainConfig(
        n_patients=10,
        slices_per_patient=2,
        canvas_size=32,
        paired_fraction=0.34,
        base_width=4,
        n_res_blocks=1,
        embed_dim=8,
        tap_indices=(0, 4, 6),
        distill_tap_indices=(4, 6, 9),
        patch_count=16,
        stage1_epochs=2,
        stage2_epochs=2,
        batch_size=2,
        seed=0,
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
