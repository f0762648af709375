"""
Analysis Module
Speedup summaries for one build and regression detection across builds
"""

import logging
import os
import re
import subprocess
from dataclasses import dataclass

import numpy as np

from utils.errors import InsufficientHistory, MissingBaseline, MissingMetric, NonpositiveValue, SchemaViolation
from utils.publisher import TESTED_COMMIT_TRAILER
from utils.results import RESULT_FILE_RE, read_result_csv

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD_PCT = 10.0
IMPROVEMENT = 'improvement'
DEGRADATION = 'degradation'


@dataclass(frozen=True)
class SpeedupEntry:
    point: object
    value: float
    speedup: float
    efficiency: float


@dataclass(frozen=True)
class SpeedupGroup:
    nodes: int
    baseline: object
    entries: tuple

    def speedup_range(self):
        """(min, max) over the non-baseline points, None when there are none"""
        ratios = [e.speedup for e in self.entries if e.point != self.baseline]
        if not ratios:
            return None
        return min(ratios), max(ratios)


@dataclass(frozen=True)
class BuildEntry:
    build_num: str
    commit_id: str
    table: object


@dataclass(frozen=True)
class BuildSeries:
    entries: tuple

    def __post_init__(self):
        keys = [build_sort_key(entry.build_num) for entry in self.entries]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            raise SchemaViolation("build series must be strictly increasing by build number")

    def __len__(self):
        return len(self.entries)

    def history(self, metric, point):
        """(entry, value) for every build that measured metric at point"""
        found = []
        for entry in self.entries:
            value = entry.table.value(point, metric)
            if value is not None:
                found.append((entry, value))
        return found


@dataclass(frozen=True)
class Transition:
    from_build: str
    to_build: str
    from_commit: str
    to_commit: str
    previous: float
    current: float
    change_pct: float
    direction: str


def compute_speedup(table, metric, baseline, points=None):
    """value(baseline) / value(point) for a time-like metric"""
    values = table.values(metric)
    if not values:
        raise MissingMetric(f"metric {metric!r} not in build {table.build_num}")
    if baseline not in values:
        raise MissingBaseline(f"no {metric!r} value at baseline {baseline.label}")

    compared = sorted(values, key=lambda p: p.sort_key) if points is None else list(points)
    missing = [p.label for p in compared if p not in values]
    if missing:
        raise MissingMetric(f"metric {metric!r} missing at {', '.join(missing)}")

    base_value = values[baseline]
    for point in [baseline, *compared]:
        if values[point] <= 0:
            raise NonpositiveValue(f"{metric} at {point.label} is {values[point]}")

    speedups = []
    for point in compared:
        ratio = 1.0 if point == baseline else base_value / values[point]
        speedups.append((point, ratio))
    return speedups


def default_baseline(table, metric, nodes):
    """Smallest total_procs point measured on `nodes` nodes"""
    candidates = [p for p in table.values(metric) if p.nodes == nodes]
    if not candidates:
        raise MissingBaseline(f"no {metric!r} values on {nodes} node(s)")
    return min(candidates, key=lambda p: p.sort_key)


def speedup_by_node_count(table, metric, baseline=None):
    """One SpeedupGroup per node count; each group has its own baseline unless one is forced"""
    values = table.values(metric)
    if not values:
        raise MissingMetric(f"metric {metric!r} not in build {table.build_num}")

    groups = []
    for nodes in sorted({p.nodes for p in values}):
        base = baseline or default_baseline(table, metric, nodes)
        points = sorted((p for p in values if p.nodes == nodes), key=lambda p: p.sort_key)
        entries = tuple(
            SpeedupEntry(
                point=point,
                value=values[point],
                speedup=ratio,
                efficiency=ratio * base.total_procs / point.total_procs,
            )
            for point, ratio in compute_speedup(table, metric, base, points)
        )
        groups.append(SpeedupGroup(nodes=nodes, baseline=base, entries=entries))
    return groups


def detect_regressions(series, metric, point, threshold_pct=DEFAULT_THRESHOLD_PCT, higher_is_better=False):
    """Flag consecutive builds whose value moved by more than threshold_pct percent"""
    history = series.history(metric, point)
    if len(history) < 2:
        raise InsufficientHistory(
            f"need at least 2 builds with {metric!r} at {point.label}, found {len(history)}"
        )

    flagged = []
    for (before, previous), (after, current) in zip(history, history[1:]):
        if previous <= 0:
            raise NonpositiveValue(f"{metric} at {point.label} in build {before.build_num} is {previous}")
        change = (current - previous) / previous * 100.0
        if abs(change) <= threshold_pct:
            continue
        faster = current > previous if higher_is_better else current < previous
        flagged.append(Transition(
            from_build=before.build_num,
            to_build=after.build_num,
            from_commit=before.commit_id,
            to_commit=after.commit_id,
            previous=previous,
            current=current,
            change_pct=change,
            direction=IMPROVEMENT if faster else DEGRADATION,
        ))
    return flagged


def build_sort_key(build_num):
    """Numeric builds sort numerically, anything else in natural order after them"""
    text = str(build_num)
    if text.isdigit():
        return (0, int(text), ())
    parts = tuple((0, int(tok), '') if tok.isdigit() else (1, 0, tok) for tok in re.findall(r'\d+|\D+', text))
    return (1, 0, parts)


def git_commit_for(path):
    """Commit whose code produced the result file at path.

    The publishing commit names it in a Tested-commit trailer; files committed
    without one resolve to the parent of the commit that added them. None
    outside a git checkout.
    """
    cwd = os.path.dirname(os.path.abspath(path))
    added = _git_output(
        ['log', '-n', '1', '--diff-filter=A', '--format=%H%x00%B', '--', os.path.basename(path)], cwd,
    )
    if not added:
        return None
    commit, _, body = added.partition('\x00')
    prefix = f"{TESTED_COMMIT_TRAILER}:"
    for line in reversed(body.splitlines()):
        if line.startswith(prefix) and line[len(prefix):].strip():
            return line[len(prefix):].strip()
    return _git_output(['rev-parse', '--verify', '--quiet', f"{commit}^"], cwd) or commit


def _git_output(args, cwd):
    try:
        proc = subprocess.run(['git', *args], cwd=cwd, capture_output=True, text=True, timeout=30)
    except (OSError, subprocess.TimeoutExpired):
        return None
    output = proc.stdout.strip()
    return output if proc.returncode == 0 and output else None


def load_series(results_dir, commit_lookup=git_commit_for):
    """Discover scalability_test_result_<build>.csv files into a BuildSeries"""
    entries = []
    for name in os.listdir(results_dir):
        match = RESULT_FILE_RE.match(name)
        if not match:
            continue
        path = os.path.join(results_dir, name)
        build_num = match.group(1)
        commit = commit_lookup(path) if commit_lookup else None
        entries.append(BuildEntry(build_num, commit or build_num, read_result_csv(path, build_num)))
    entries.sort(key=lambda entry: build_sort_key(entry.build_num))
    logger.info("Loaded %d build(s) from %s", len(entries), results_dir)
    return BuildSeries(tuple(entries))


def write_gnuplot_data(groups, path):
    """Whitespace columns, one gnuplot index block per node count"""
    blocks = []
    for group in groups:
        lines = [f"# nodes={group.nodes} baseline={group.baseline.label}",
                 "# total_procs procs_per_node value speedup efficiency"]
        for entry in group.entries:
            lines.append(
                f"{entry.point.total_procs} {entry.point.procs_per_node} "
                f"{entry.value!r} {entry.speedup:.6f} {entry.efficiency:.6f}"
            )
        blocks.append('\n'.join(lines))
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write('\n\n\n'.join(blocks) + '\n')
    return path


def summarize_groups(groups):
    """Plain dict view used for JSON output"""
    summary = []
    for group in groups:
        bounds = group.speedup_range()
        summary.append({
            'nodes': group.nodes,
            'baseline': group.baseline.label,
            'speedup_min': bounds[0] if bounds else None,
            'speedup_max': bounds[1] if bounds else None,
            'mean_efficiency': float(np.mean([e.efficiency for e in group.entries])),
            'points': [
                {'point': e.point.label, 'value': e.value, 'speedup': e.speedup, 'efficiency': e.efficiency}
                for e in group.entries
            ],
        })
    return summary
