import pytest

from stclstm_depth.pipeline import TrainConfig
from stclstm_depth.synthdata import SceneSpec, generate_dataset


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory):
    # 5 sequences of 4 frames at 32x32: 4 train + 1 validation
    root = tmp_path_factory.mktemp("synth")
    generate_dataset(root, 5, 4, SceneSpec(resolution=(32, 32)), seed=3)
    return root


@pytest.fixture
def fast_config():
    def make(**overrides):
        base = dict(
            epochs=1,
            warmup_epochs=0,
            n_frames=2,
            batch_sequences=2,
            max_steps_per_epoch=2,
            augment=False,
            progress=False,
            use_gan=False,
        )
        base.update(overrides)
        return TrainConfig(**base)
    return make
