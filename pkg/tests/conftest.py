"""Shared fixtures: a miniature KeyDoor run configuration that trains in
well under a second, for exercising artifact plumbing end to end."""

import pytest

_TINY_TEMPLATE = """\
[run]
seeds = {seeds}
metrics_interval = {metrics_interval}
checkpoint_interval = {checkpoint_interval}
out_dir = {out_dir}

[env]
name = keydoor
size = 6
step_limit = 40
seed = 0

[agent]
subgoals = {subgoals}
refresh = 1
hidden_units = 12
bptt_manager = 5
bptt_worker = 10
block_size = 2
conv =
fc_units = 16

[trainer]
total_steps = {steps}
num_actors = 1
stop_at_return = {stop_at_return}
stop_window = 5
"""


@pytest.fixture
def tiny_config(tmp_path):
    """Factory writing a miniature run config; returns the INI path."""

    def make(steps=300, seeds="0", subgoals="pc", metrics_interval=100,
             checkpoint_interval=0, stop_at_return="none", out_dir=None,
             name="run.ini"):
        out = out_dir if out_dir is not None else str(tmp_path / "out")
        path = tmp_path / name
        path.write_text(_TINY_TEMPLATE.format(
            steps=steps, seeds=seeds, subgoals=subgoals,
            metrics_interval=metrics_interval,
            checkpoint_interval=checkpoint_interval,
            stop_at_return=stop_at_return, out_dir=out))
        return str(path)

    return make
