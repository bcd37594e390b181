import pytest

from saccade.config import ConfigError, RunConfig


def test_defaults_are_valid():
    cfg = RunConfig()
    assert cfg.low_size == (24, 24)
    assert cfg.attention_size == (6, 6)
    assert cfg.max_skip == 2 and cfg.k == 3


def test_text_round_trip():
    cfg = RunConfig(seed=7, tau=0.5, theta_h=(1.0, 0.0, 2.0), normalize_efficiency_loss=False, milestones=(3, 9))
    back = RunConfig.from_text(cfg.to_text())
    assert back == cfg
    assert isinstance(back.milestones[0], int)


def test_comments_blank_lines_and_overrides():
    cfg = RunConfig.from_text("# header\n\nframes = 6  # short clips\nk = 2\n", k=1)
    assert cfg.frames == 6 and cfg.k == 1


@pytest.mark.parametrize(
    "text, match",
    [
        ("bogus = 1\n", "unknown key"),
        ("frames 6\n", "key = value"),
        ("frames = six\n", "cannot parse"),
        ("normalize_efficiency_loss = maybe\n", "cannot parse"),
        ("split = 2\n", "split must lie"),
        ("classes = 1\n", "classes"),
        ("crop_size = 10\n", "crop_size"),
        ("tau = 0\n", "tau"),
        ("adjacency = hex\n", "adjacency"),
    ],
)
def test_bad_config_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_text(text)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.load(tmp_path / "nope.txt")
    assert RunConfig.load(None, seed=3).seed == 3
