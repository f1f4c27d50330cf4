import os

import pytest

from src.domain.config import RunConfig
from src.domain.errors import ConfigError

DEFAULT_CFG = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "default.cfg")


def _write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return str(path)


def test_defaults():
    config = RunConfig()
    assert (config.seed, config.eta0, config.tau) == (0, 0.9, 1.0)
    assert (config.lambda_start, config.lambda_end, config.adapt_iters) == (10.0, 0.0, 100)
    assert config.adaptive_channels and config.use_se and not config.freeze_non_bn
    assert config.dtype == "f64"


def test_file_is_parsed_with_comments_and_types(tmp_path):
    path = _write(tmp_path, "# run\nseed=7\neta0=0.5\ntau=20\nuse_se=false\ndtype=f32\nadapt_iters=3\n")
    config = RunConfig.from_file(path)
    assert config.seed == 7
    assert config.eta0 == 0.5
    assert config.tau == 20.0
    assert config.use_se is False
    assert config.dtype == "f32"
    assert config.schedule().total_iters == 3
    assert config.flags().use_se is False


def test_overrides_win_and_none_is_ignored(tmp_path):
    path = _write(tmp_path, "seed=7\nadaptive_channels=true\n")
    config = RunConfig.from_file(path, seed=3, adaptive_channels=False, use_se=None)
    assert config.seed == 3
    assert config.adaptive_channels is False
    assert config.use_se is True


def test_text_round_trip(tmp_path):
    config = RunConfig(seed=5, tau=2.5, freeze_non_bn=True)
    assert RunConfig.from_file(_write(tmp_path, config.to_text())) == config


@pytest.mark.parametrize("text", [
    "unknown_key=1\n",
    "eta0=1.5\n",
    "eta0=-0.1\n",
    "tau=0\n",
    "adapt_iters=-1\n",
    "batch_size=1\n",
    "dtype=f16\n",
    "lr=0\n",
])
def test_invalid_values_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        RunConfig.from_file(_write(tmp_path, text))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_file(str(tmp_path / "absent.cfg"))


def test_shipped_default_config_is_valid():
    config = RunConfig.from_file(DEFAULT_CFG)
    assert config.num_classes == 4
    assert config.schedule().eta0 == config.eta0
