import pytest

from srtr.config import CONFIG_ENV, dump_config, load_config, parse_config, preset
from srtr.errors import ConfigError


def test_desk_defaults():
    cfg = preset("desk")
    m = cfg.model
    assert (m.d_model, m.n_heads, m.n_entities, m.n_triplets, m.sr_layers) == (64, 8, 20, 40, 3)
    assert m.d_align == 512


def test_large_preset_uses_published_sizes():
    m = preset("paper").model
    assert (m.n_entities, m.n_triplets, m.d_model) == (100, 200, 256)


def test_parse_overrides_and_comments():
    cfg = parse_config("preset = desk\n# note\nmodel.d_model = 32  # smaller\n"
                       "model.self_reasoning = off\ntrain.seeds = 4, 5\n")
    assert cfg.model.d_model == 32
    assert cfg.model.self_reasoning is False
    assert cfg.train.seeds == (4, 5)


@pytest.mark.parametrize("text, where", [
    ("model.d_model = 32\nmodel.nope = 1\n", ":2:"),
    ("model.d_model = abc\n", ":1:"),
    ("just words\n", ":1:"),
    ("model.d_model = 32\npreset = desk\n", ":2:"),
])
def test_parse_errors_name_the_line(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(text, "run.cfg")


def test_validation_rejects_inconsistent_values():
    with pytest.raises(ConfigError):
        parse_config("model.d_model = 30\n")  # 30 % 8 != 0
    with pytest.raises(ConfigError):
        parse_config("loss.tau_init = 1000\n")
    with pytest.raises(ConfigError):
        parse_config("loss.denominator = some\n")


def test_dump_parse_round_trip_preserves_digest():
    cfg = parse_config("preset = gradcheck\nloss.lambda_vla = 0.25\n")
    again = parse_config(dump_config(cfg))
    assert again.digest() == cfg.digest()
    assert again.digest() != preset("gradcheck").digest()


def test_environment_variable_supplies_path(tmp_path, monkeypatch):
    f = tmp_path / "c.cfg"
    f.write_text("model.n_heads = 4\n")
    monkeypatch.setenv(CONFIG_ENV, str(f))
    assert load_config().model.n_heads == 4
    other = tmp_path / "d.cfg"
    other.write_text("model.n_heads = 2\n")
    assert load_config(other).model.n_heads == 2  # explicit path wins
    monkeypatch.delenv(CONFIG_ENV)
    assert load_config().model.n_heads == 8


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_output_paths_do_not_change_the_digest():
    a = parse_config("paths.out = x\n")
    b = parse_config("paths.out = y\n")
    assert a.digest() == b.digest()
