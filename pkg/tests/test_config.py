"""key=value settings: parsing, file loading, overrides, config assembly."""

import pytest

from rpsm.config import KEYS, load_config, make_configs, parse_overrides, parse_value


def test_parse_value_types():
    assert parse_value("stages", "3") == 3
    assert parse_value("lr", "5e-3") == 5e-3
    assert parse_value("alphas", "1, 0.5 2") == (1.0, 0.5, 2.0)
    assert parse_value("share_recurrent", "Yes") is True
    assert parse_value("augment", "off") is False
    assert parse_value("preset", "FULL") == "full"


def test_parse_value_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown config key 'stagez'"):
        parse_value("stagez", "3")
    with pytest.raises(ValueError, match="known:.*clip_len.*stages"):
        parse_value("nope", "1")


def test_parse_value_reports_bad_values():
    with pytest.raises(ValueError, match="bad value for 'stages'"):
        parse_value("stages", "three")
    with pytest.raises(ValueError, match="boolean"):
        parse_value("augment", "maybe")
    with pytest.raises(ValueError, match="desk.*full"):
        parse_value("preset", "huge")


def test_load_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# experiment settings\n"
        "stages = 2\n"
        "\n"
        "lr = 0.005   # with inline comment\n"
        "alphas = 1 1\n"
        "share_2d = true\n"
    )
    settings = load_config(str(cfg))
    assert settings == {"stages": 2, "lr": 0.005, "alphas": (1.0, 1.0), "share_2d": True}


def test_load_config_reports_line_numbers(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("stages = 2\njust some words\n")
    with pytest.raises(ValueError, match=r"bad.cfg:2: expected key = value"):
        load_config(str(cfg))
    cfg.write_text("stages = 2\nlr = fast\n")
    with pytest.raises(ValueError, match=r"bad.cfg:2: bad value for 'lr'"):
        load_config(str(cfg))


def test_parse_overrides():
    assert parse_overrides(["stages=4", "lr = 0.01"]) == {"stages": 4, "lr": 0.01}
    with pytest.raises(ValueError, match="override must be key=value"):
        parse_overrides(["stages"])
    with pytest.raises(ValueError, match="unknown config key"):
        parse_overrides(["stagez=4"])


def test_make_configs_routes_keys():
    mcfg, tcfg = make_configs({"stages": 2, "clip_len": 4, "share_recurrent": False,
                               "lr": 0.01, "epochs": 7, "augment": False})
    assert mcfg.preset == "desk"
    assert mcfg.stages == 2 and mcfg.clip_len == 4
    assert mcfg.share_recurrent_across_stages is False
    assert tcfg.lr == 0.01 and tcfg.epochs == 7 and tcfg.augment is False


def test_make_configs_full_preset():
    mcfg, _ = make_configs({"preset": "full", "stages": 1})
    assert mcfg.preset == "full"
    assert mcfg.input_hw == 368 and mcfg.stages == 1


def test_make_configs_defaults():
    mcfg, tcfg = make_configs({})
    assert mcfg.preset == "desk" and mcfg.stages == 3
    assert tcfg.lr == 1e-3 and tcfg.augment is True


def test_every_documented_key_is_accepted():
    sample = {"preset": "desk", "stages": "2", "clip_len": "3", "joints": "17",
              "share_recurrent": "yes", "share_2d": "no", "lr": "1e-3",
              "decay": "0", "alphas": "1 1", "epochs": "2", "seed": "0",
              "scale_min": "0.9", "scale_max": "1.1", "augment": "yes",
              "eval_every": "1", "max_steps": "0"}
    assert set(sample) == set(KEYS)
    settings = {k: parse_value(k, v) for k, v in sample.items()}
    mcfg, tcfg = make_configs(settings)
    assert mcfg.stages == 2 and tcfg.epochs == 2
