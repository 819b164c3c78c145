import pytest

from freqpad.data import SyntheticSpec, generate_synthetic, read_manifest, write_manifest
from freqpad.trainer import TrainConfig, train


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """Small synthetic corpus shared by trainer/CLI tests: 112 px frames,
    12 bona fide videos plus 6+6 attack videos, 3 frames each."""
    root = tmp_path_factory.mktemp("mini_corpus")
    spec = SyntheticSpec(n_videos_per_class=12, frames_per_video=3,
                         image_size=112, seed=7, dataset_id="mini")
    manifest = generate_synthetic(spec, str(root))
    path = root / "manifest.csv"
    write_manifest(manifest, str(path))
    return read_manifest(str(path)), str(path)


@pytest.fixture(scope="session")
def mini_train_cfg():
    return TrainConfig(input_size=112, max_epochs=2, batch_size=16, seed=0)


@pytest.fixture(scope="session")
def mini_run(mini_corpus, mini_train_cfg, tmp_path_factory):
    """One short training run shared by checkpoint/eval tests."""
    manifest, _ = mini_corpus
    out = tmp_path_factory.mktemp("mini_run")
    ckpt_path, log_path = train(mini_train_cfg, manifest, str(out))
    return ckpt_path, log_path, mini_train_cfg, manifest
