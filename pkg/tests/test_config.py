"""INI run configuration: defaults, validation paths, round-trips."""

import dataclasses

import pytest

from mghl.config import (ConfigError, apply_overrides, load_config,
                         parse_config, to_ini)


def test_empty_text_yields_documented_defaults():
    rc = parse_config("")
    assert rc.env_name == "keydoor"
    assert rc.env_size == 12
    assert rc.env_step_limit == 300
    assert rc.agent.active_subgoals == ("pc", "dc", "fc")
    assert rc.agent.subgoal_refresh_interval == 1
    assert rc.agent.weights.alpha == 0.8
    assert rc.agent.weights.eta == 0.05
    assert rc.agent.bptt_manager == 20
    assert rc.agent.bptt_worker == 100
    assert rc.agent.gamma == 0.99
    assert rc.conv_specs == ((8, 3, 1), (16, 3, 2))
    assert rc.trainer.total_steps == 2_000_000
    assert rc.trainer.num_actors == 8
    assert rc.trainer.lr == 7e-4
    assert rc.trainer.lr_decay is True
    assert rc.trainer.clip_norm == 40.0
    assert rc.trainer.stop_at_return is None
    assert rc.seeds == (0,)
    assert rc.metrics_interval == 1000


def test_sparse_file_overrides_only_named_keys():
    rc = parse_config("[env]\nsize = 8\n\n[agent]\nblock_size = 2\n")
    assert rc.env_size == 8
    assert rc.agent.block_size == 2
    assert rc.trainer.total_steps == 2_000_000


def test_alpha_out_of_range_message():
    with pytest.raises(ConfigError) as exc:
        parse_config("[weights]\nalpha = 1.5\n")
    assert str(exc.value) == "weights.alpha out of range [0, 1]: got 1.5"


@pytest.mark.parametrize("text,needle", [
    ("[bogus]\nx = 1\n", "bogus is not a known section"),
    ("[env]\nsped = 3\n", "env.sped is not a known key"),
    ("[env]\nname = pong\n", "env.name unknown environment"),
    ("[env]\nsize = 4\n", "env.size out of range"),
    ("[agent]\nsubgoals = pc, teleport\n", "agent.subgoals has unknown kind"),
    ("[agent]\nsubgoals =\n", "agent.subgoals must list at least one"),
    ("[agent]\ngamma = 0\n", "agent.gamma out of range"),
    ("[agent]\nblock_size = 5\n", "does not tile a 12x12"),
    ("[agent]\nconv = 8:3\n", "filters:kernel:stride"),
    ("[agent]\nconv = a:b:c\n", "non-integer"),
    ("[weights]\neta = 0\n", "weights.eta out of range"),
    ("[trainer]\ntotal_steps = 0\n", "trainer.total_steps out of range"),
    ("[trainer]\nlr = -1\n", "trainer.lr out of range"),
    ("[trainer]\nrmsprop_decay = 1\n", "trainer.rmsprop_decay out of range"),
    ("[run]\nseeds = a,b\n", "run.seeds must be comma-separated integers"),
    ("[run]\nmetrics_interval = 0\n", "run.metrics_interval out of range"),
    ("[env]\nsize = not_a_number\n", "env.size must be an integer"),
    ("not ini at all", "not valid INI"),
])
def test_validation_errors_name_the_field(text, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert needle in str(exc.value)


def test_conv_must_fit_the_observation():
    with pytest.raises(ConfigError) as exc:
        parse_config("[env]\nsize = 6\n[agent]\nblock_size = 2\n"
                     "conv = 8:7:1\n")
    assert "agent.conv invalid for a 6x6" in str(exc.value)


def test_clip_norm_and_stop_accept_none():
    rc = parse_config("[trainer]\nclip_norm = none\nstop_at_return = none\n")
    assert rc.trainer.clip_norm is None
    assert rc.trainer.stop_at_return is None


def test_stop_at_return_parses_float():
    rc = parse_config("[trainer]\nstop_at_return = 3.9\n")
    assert rc.trainer.stop_at_return == 3.9


def test_seed_list_parses():
    rc = parse_config("[run]\nseeds = 3, 1, 2\n")
    assert rc.seeds == (3, 1, 2)


def test_to_ini_round_trips_effective_config():
    text = ("[env]\nname = collect\nsize = 8\n[agent]\nblock_size = 2\n"
            "subgoals = pc, rand\n[trainer]\nclip_norm = none\n"
            "stop_at_return = 1.5\n[run]\nseeds = 7\n")
    rc = parse_config(text)
    again = parse_config(to_ini(rc))
    assert again == rc  # source_text excluded from equality
    assert again.source_text != rc.source_text


def test_to_ini_of_defaults_round_trips():
    rc = parse_config("")
    assert parse_config(to_ini(rc)) == rc


def test_load_config_reads_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[env]\nsize = 6\n[agent]\nblock_size = 3\n")
    rc = load_config(str(path))
    assert rc.env_size == 6
    assert rc.source_text.startswith("[env]")


def test_example_config_in_repo_parses():
    import os
    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    rc = load_config(os.path.join(here, "configs", "keydoor.ini"))
    assert rc.env_name == "keydoor"
    assert rc.seeds == (0, 1, 2, 3, 4)
    assert rc.trainer.stop_at_return == 3.9


def test_apply_overrides_from_cli_strings():
    rc = parse_config("")
    out = apply_overrides(rc, seeds="1,2,3", actors=2, subgoals="pc,fc",
                          out_dir="/tmp/elsewhere")
    assert out.seeds == (1, 2, 3)
    assert out.trainer.num_actors == 2
    assert out.agent.active_subgoals == ("pc", "fc")
    assert out.out_dir == "/tmp/elsewhere"
    # untouched fields survive
    assert out.trainer.total_steps == rc.trainer.total_steps


def test_apply_overrides_none_is_identity():
    rc = parse_config("")
    assert apply_overrides(rc) == rc


def test_apply_overrides_validates():
    rc = parse_config("")
    with pytest.raises(ConfigError, match="unknown kind"):
        apply_overrides(rc, subgoals="pc,warp")
    with pytest.raises(ConfigError, match="num_actors"):
        apply_overrides(rc, actors=0)
    with pytest.raises(ConfigError, match="seeds"):
        apply_overrides(rc, seeds="one,two")


def test_encoder_config_reflects_env_size():
    rc = parse_config("[env]\nsize = 8\n[agent]\nblock_size = 2\n")
    enc = rc.encoder_config()
    assert enc.input_shape == (3, 8, 8)
    assert enc.conv_specs == rc.conv_specs


def test_derived_trainer_config_is_frozen_dataclass():
    rc = parse_config("")
    with pytest.raises(dataclasses.FrozenInstanceError):
        rc.trainer.lr = 0.1
