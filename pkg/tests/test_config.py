import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from crossmodal.config import COMMAND_SECTIONS, default_config_text, parse_config
from crossmodal.errors import ConfigError

COMMANDS = sorted(COMMAND_SECTIONS)


def key_lines(text):
    return [i for i, line in enumerate(text.splitlines()) if "=" in line]


@pytest.mark.parametrize("command", COMMANDS)
def test_defaults_parse(command):
    cfg = parse_config(default_config_text(command), command)
    assert set(cfg.sections) == set(COMMAND_SECTIONS[command])


def test_meta_carries_loss_section():
    text = default_config_text("train", loss={"margin": 0.3}, meta={"iterations": 7})
    meta = parse_config(text, "train").meta()
    assert meta.iterations == 7 and meta.loss.margin == 0.3


@given(data=st.data())
def test_missing_key_is_named(data):
    command = data.draw(st.sampled_from(COMMANDS))
    lines = default_config_text(command).splitlines()
    i = data.draw(st.sampled_from(key_lines("\n".join(lines))))
    key = lines[i].split("=")[0].strip()
    del lines[i]
    with pytest.raises(ConfigError, match=rf"missing key '{re.escape(key)}'"):
        parse_config("\n".join(lines), command)


@given(data=st.data(), name=st.from_regex(r"[a-z]{3,10}_x", fullmatch=True))
def test_unknown_key_is_named(data, name):
    command = data.draw(st.sampled_from(COMMANDS))
    lines = default_config_text(command).splitlines()
    i = data.draw(st.sampled_from(key_lines("\n".join(lines))))
    lines.insert(i, f"{name} = 1")
    with pytest.raises(ConfigError, match=rf"unknown key '{name}'"):
        parse_config("\n".join(lines), command)


@pytest.mark.parametrize("command,section,key,value", [
    ("train", "meta", "iterations", "lots"),
    ("train", "meta", "normalize", "yes"),
    ("train", "train", "strategy", "magic"),
    ("evaluate", "protocol", "noise_rates", "0.1, 2.0"),
    ("retrieve", "retrieve", "mode", "psychic"),
    ("tradeoff", "tradeoff", "mc_samples", "10"),
    ("train", "concept_world", "n_concepts", "4"),
])
def test_bad_values_name_the_field(command, section, key, value):
    text = default_config_text(command, **{section: {key: value}})
    with pytest.raises(ConfigError, match=re.escape(f"[{section}]")):
        parse_config(text, command)


def test_missing_section():
    with pytest.raises(ConfigError, match=r"missing section \[tradeoff\]"):
        parse_config(default_config_text("tradeoff").split("[tradeoff]")[0], "tradeoff")


def test_unknown_command():
    with pytest.raises(ConfigError):
        default_config_text("fly")


def test_list_and_empty_list_values():
    text = default_config_text("evaluate", protocol={"k_grid": (1, 3), "noise_rates": ()})
    p = parse_config(text, "evaluate")["protocol"]
    assert p.k_grid == (1, 3) and p.noise_rates == ()
