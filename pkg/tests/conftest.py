import numpy as np
import pytest

from depth_halluc import datasets, training
from depth_halluc.models import DiscriminatorConfig, GeneratorConfig

# Tiny shapes shared across the fast unit tests. Training tests use 16x16
# images, so the discriminator gets 2 stride-2 layers (size divisor 8).
TINY_GEN = GeneratorConfig(maps=(2, 2, 2), res_blocks=1)
TINY_DISC = DiscriminatorConfig(maps=(2, 2))


def tiny_training_config(**overrides) -> training.TrainingConfig:
    base = dict(
        mode="full",
        total_epochs=2,
        teacher_decay_epoch=1,
        student_decay_epoch=1,
        seed=0,
        image_size=16,
        gen_base_maps=2,
        gen_res_blocks=1,
        disc_base_maps=2,
        disc_layers=2,
        pool_size=4,
        checkpoint_every=1,
    )
    base.update(overrides)
    return training.TrainingConfig(**base)


@pytest.fixture(scope="session")
def tiny_paired_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_paired")
    datasets.make_synthetic_dataset(root, n=8, size=16, identities=4, seed=5)
    return root


@pytest.fixture(scope="session")
def tiny_paired_samples(tiny_paired_root):
    manifest = datasets.build_manifest(tiny_paired_root, 16, paired=True)
    return datasets.load_paired_dataset(manifest)


@pytest.fixture(scope="session")
def tiny_unpaired_samples(tiny_paired_root):
    manifest = datasets.build_manifest(tiny_paired_root, 16, paired=False)
    return datasets.load_rgb_dataset(manifest)


def random_image(rng: np.random.Generator, size: int = 16) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, (size, size, 3)).astype(np.float32)
