import pytest

from naolab.cli import bundled_config
from naolab.config import load_config, parse_config, with_seed
from naolab.errors import ConfigurationError

BASE = """\
[experiment]
name = t
seed = 3

[data]
dx = 0.25
d = 20
train = sine:1, sine:2

[model]
variants = nao
layers = 2
d_k = 4
"""


def test_parses_minimal_config():
    cfg = parse_config(BASE)
    assert cfg.name == "t" and cfg.seed == 3 and cfg.train.seed == 3
    assert cfg.data.train == ("sine:1", "sine:2")
    assert cfg.model.layers == 2 and cfg.model.d == 20
    assert cfg.variants == ("nao",)


def test_digest_tracks_text():
    assert parse_config(BASE).digest == parse_config(BASE).digest
    assert parse_config(BASE).digest != parse_config(BASE + "# note\n").digest


@pytest.mark.parametrize("patch, line", [
    (("d = 20", "d = twenty"), 7),
    (("layers = 2", "layers = 1"), 12),
    (("variants = nao", "variants = transformer"), 11),
    (("train = sine:1, sine:2", "train = sine:99"), 8),
    (("dx = 0.25", "dx = -1"), 6),
])
def test_errors_name_the_line(patch, line):
    with pytest.raises(ConfigurationError) as info:
        parse_config(BASE.replace(*patch))
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_unknown_key_and_section():
    with pytest.raises(ConfigurationError) as info:
        parse_config(BASE + "colour = red\n")
    assert info.value.line == 14
    with pytest.raises(ConfigurationError) as info:
        parse_config(BASE + "[extras]\nx = 1\n")
    assert info.value.line == 14


def test_missing_name():
    with pytest.raises(ConfigurationError):
        parse_config(BASE.replace("name = t\n", ""))


def test_seed_override():
    cfg = with_seed(parse_config(BASE), 11)
    assert cfg.seed == cfg.train.seed == cfg.model.init_seed == 11
    assert cfg.digest != parse_config(BASE).digest


@pytest.mark.parametrize("name", ["smoke", "darcy", "sine_only_d302_dk10"])
def test_bundled_configs_parse(name):
    cfg = load_config(bundled_config(name))
    assert cfg.variants


def test_missing_file():
    with pytest.raises(ConfigurationError):
        load_config("/nonexistent/x.cfg")
