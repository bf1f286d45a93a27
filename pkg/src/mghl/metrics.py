"""Metrics artifacts.

The trainer reports one record per finished episode; metrics.csv rows are
emitted at a fixed environment-step interval instead, each aggregating the
episodes that finished inside its interval (mean of every numeric field).
Intervals in which no episode finished keep the cadence with empty stats,
and subgoal kinds outside the active set are always logged empty. The raw
per-episode records go to a companion episodes.csv untouched.
"""

from __future__ import annotations

import csv

METRICS_COLUMNS = (
    "global_step", "episode_index", "ext_return_raw", "ext_return_scaled",
    "int_return_pc", "int_return_dc", "int_return_fc", "int_return_rand",
    "policy_entropy", "value_loss", "policy_loss", "wallclock_s",
)

_MEANED = (
    "ext_return_raw", "ext_return_scaled", "int_return_pc", "int_return_dc",
    "int_return_fc", "int_return_rand", "policy_entropy", "value_loss",
    "policy_loss",
)


def bucket_episode_rows(episode_rows, interval, total_steps):
    """Aggregate per-episode records into fixed-interval metrics rows.

    Row k covers global steps ((k-1)*interval, k*interval]; its fields are
    the means over episodes that finished in that span (empty when none
    did). episode_index and wallclock_s carry the last episode seen so far.
    """
    if interval < 1:
        raise ValueError("metrics interval must be >= 1")
    last_step = max([total_steps] + [r["global_step"] for r in episode_rows])
    n_rows = (last_step + interval - 1) // interval
    out = []
    i = 0
    last_episode = None
    for k in range(1, n_rows + 1):
        hi = k * interval
        bucket = []
        while i < len(episode_rows) and episode_rows[i]["global_step"] <= hi:
            bucket.append(episode_rows[i])
            i += 1
        if bucket:
            last_episode = bucket[-1]
        row = {"global_step": hi}
        row["episode_index"] = (last_episode["episode_index"]
                                if last_episode else None)
        row["wallclock_s"] = (last_episode["wallclock_s"]
                              if last_episode else None)
        for col in _MEANED:
            vals = [b[col] for b in bucket if b.get(col) is not None]
            row[col] = sum(vals) / len(vals) if vals else None
        out.append(row)
    return out


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(path, rows, columns=METRICS_COLUMNS):
    """Write dict rows as CSV with a fixed header; None becomes empty."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(col)) for col in columns])
    return path


def write_metrics(path, episode_rows, interval, total_steps):
    """Bucket per-episode records and write metrics.csv."""
    return write_rows(path, bucket_episode_rows(episode_rows, interval,
                                                total_steps))


EPISODE_COLUMNS = METRICS_COLUMNS + ("episode_steps", "actor")


def write_episodes(path, episode_rows):
    """Write the raw per-episode records (one row per finished episode)."""
    return write_rows(path, episode_rows, columns=EPISODE_COLUMNS)


def read_rows(path):
    """Parse a CSV written by write_rows back into dict rows; empty cells
    become None, numeric cells become int or float, anything else stays a
    string."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for record in reader:
            row = {}
            for col, cell in zip(header, record):
                if cell == "":
                    row[col] = None
                    continue
                try:
                    row[col] = int(cell)
                except ValueError:
                    try:
                        row[col] = float(cell)
                    except ValueError:
                        row[col] = cell
            rows.append(row)
    return header, rows
