import os

import pytest

from expredit.networks import GeneratorConfig
from expredit.synth import synth_dataset_generate
from expredit.training import TrainConfig, train_single_stage


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """4 identities x 8 shared AU settings at 64 px, with ground truth."""
    out = tmp_path_factory.mktemp("corpus")
    manifest = synth_dataset_generate(4, 8, 4, str(out), seed=11, image_size=64)
    return manifest, str(out / "manifest.jsonl")


@pytest.fixture(scope="session")
def tiny_checkpoint(toy_corpus, tmp_path_factory):
    """A briefly trained single-stage checkpoint for plumbing tests."""
    manifest, manifest_path = toy_corpus
    out = tmp_path_factory.mktemp("tinyrun")
    config = TrainConfig(seed=3, epochs=2, steps_per_epoch=10, lr_decay_start_epoch=1)
    gen_config = GeneratorConfig.toy(au_dim=4, image_size=64, base_channels=4)
    path = train_single_stage(manifest, manifest_path, config, gen_config, str(out))
    assert os.path.exists(path)
    return path
