"""
Results Module
Turns per-run output files into the build-numbered result CSV
"""

import csv
import glob
import io
import logging
import math
import os
import re
import shlex
import subprocess
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from werkzeug.utils import secure_filename

from utils.errors import EmptyOutputDir, IoFailure, ParserFailure, ParserOutputMalformed
from utils.planner import ScalePoint

logger = logging.getLogger(__name__)

CSV_HEADER = ('nodes', 'procs_per_node', 'total_procs', 'metric', 'value')
RESULT_FILE_RE = re.compile(r'^scalability_test_result_(.+)\.csv$')
OUTPUT_FILE_RE = re.compile(r'^(\d+)x(\d+)\.out$')
METRIC_NAME_RE = re.compile(r'^[A-Za-z_][A-Za-z0-9_.\-]*$')
KV_LINE_RE = re.compile(
    r'^\s*([A-Za-z_][A-Za-z0-9_.\-]*)\s*=\s*([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)\s*$'
)
DEFAULT_PARSER_TIMEOUT_S = 600


@dataclass(frozen=True)
class MetricRow:
    nodes: int
    procs_per_node: int
    total_procs: int
    metric_name: str
    metric_value: float

    @property
    def point(self):
        return ScalePoint(self.nodes, self.procs_per_node)

    @property
    def sort_key(self):
        return (self.total_procs, self.nodes, self.metric_name)

    @classmethod
    def at(cls, point, metric_name, metric_value):
        return cls(point.nodes, point.procs_per_node, point.total_procs, metric_name, float(metric_value))


@dataclass
class ResultTable:
    build_num: str
    rows: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            key = (row.nodes, row.procs_per_node, row.metric_name)
            if key in seen:
                raise ParserOutputMalformed(
                    f"duplicate row for {row.nodes}x{row.procs_per_node} metric {row.metric_name!r}"
                )
            seen.add(key)

    def canonical(self):
        return ResultTable(self.build_num, sorted(self.rows, key=lambda row: row.sort_key))

    def metrics(self):
        return sorted({row.metric_name for row in self.rows})

    def values(self, metric):
        """Map ScalePoint -> value for one metric"""
        return {row.point: row.metric_value for row in self.rows if row.metric_name == metric}

    def value(self, point, metric):
        return self.values(metric).get(point)


def result_filename(build_num):
    return f"scalability_test_result_{secure_filename(str(build_num)) or 'unknown'}.csv"


def row_problem(nodes, ppn, total, metric, value):
    """What makes a row unreadable as handshake CSV, or None"""
    if nodes < 1 or ppn < 1 or total != nodes * ppn:
        return f"inconsistent scale point {nodes}x{ppn} total {total}"
    if not METRIC_NAME_RE.match(metric):
        return f"bad metric name {metric!r}"
    if not math.isfinite(value):
        return "non-finite value"
    return None


def format_result_csv(table: ResultTable) -> str:
    """Canonical CSV text; refuses any table parse_result_csv would reject"""
    if not table.rows:
        raise ParserOutputMalformed("result table has no rows")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(CSV_HEADER)
    for row in table.canonical().rows:
        problem = row_problem(row.nodes, row.procs_per_node, row.total_procs, row.metric_name, row.metric_value)
        if problem:
            raise ParserOutputMalformed(f"cannot write row {row.nodes}x{row.procs_per_node}: {problem}")
        writer.writerow([
            row.nodes, row.procs_per_node, row.total_procs, row.metric_name, repr(float(row.metric_value)),
        ])
    return buffer.getvalue()


def parse_result_csv(text: str, build_num: str) -> ResultTable:
    """Parse handshake CSV; raises ParserOutputMalformed on any schema violation"""
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise ParserOutputMalformed("parser produced no output")

    reader = csv.reader(lines)
    header = next(reader)
    if tuple(cell.strip() for cell in header) != CSV_HEADER:
        raise ParserOutputMalformed(f"bad header {header!r}, expected {','.join(CSV_HEADER)}")

    rows = []
    for lineno, cells in enumerate(reader, 2):
        if len(cells) != len(CSV_HEADER):
            raise ParserOutputMalformed(f"line {lineno}: expected {len(CSV_HEADER)} columns, got {len(cells)}")
        try:
            nodes, ppn, total = (int(cell) for cell in cells[:3])
            value = float(cells[4])
        except ValueError as exc:
            raise ParserOutputMalformed(f"line {lineno}: {exc}") from None
        metric = cells[3].strip()
        problem = row_problem(nodes, ppn, total, metric, value)
        if problem:
            raise ParserOutputMalformed(f"line {lineno}: {problem}")
        rows.append(MetricRow(nodes, ppn, total, metric, value))

    if not rows:
        raise ParserOutputMalformed("parser output has a header but no rows")
    return ResultTable(build_num, rows)


def write_result_csv(table: ResultTable, dest_dir) -> str:
    path = os.path.join(dest_dir, result_filename(table.build_num))
    text = format_result_csv(table)
    try:
        os.makedirs(dest_dir, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as handle:
            handle.write(text)
    except OSError as exc:
        raise IoFailure(f"could not write {path}: {exc}") from exc
    logger.info("Wrote %d result row(s) to %s", len(table.rows), path)
    return path


def read_result_csv(path, build_num=None):
    if build_num is None:
        match = RESULT_FILE_RE.match(os.path.basename(path))
        build_num = match.group(1) if match else os.path.basename(path)
    try:
        with open(path, encoding='utf-8') as handle:
            text = handle.read()
    except OSError as exc:
        raise IoFailure(f"could not read {path}: {exc}") from exc
    return parse_result_csv(text, build_num)


def run_output_files(output_dir):
    """(ScalePoint, path) for every <nodes>x<ppn>.out file, in matrix order"""
    found = []
    for path in glob.glob(os.path.join(output_dir, '*.out')):
        match = OUTPUT_FILE_RE.match(os.path.basename(path))
        if match:
            found.append((ScalePoint(int(match.group(1)), int(match.group(2))), path))
    return sorted(found, key=lambda item: item[0].sort_key)


def parse_output_dir(output_dir) -> list:
    """Built-in key=value parser.

    Every `name=<number>` line of a run output file becomes a metric; a name
    seen several times in one file (repeats) is reduced to its median.
    """
    rows = []
    for point, path in run_output_files(output_dir):
        samples = defaultdict(list)
        with open(path, encoding='utf-8', errors='replace') as handle:
            for line in handle:
                match = KV_LINE_RE.match(line)
                if match:
                    samples[match.group(1)].append(float(match.group(2)))
        for name in sorted(samples):
            rows.append(MetricRow.at(point, name, float(np.median(samples[name]))))
    return rows


def render_rows_csv(rows) -> str:
    return format_result_csv(ResultTable('', list(rows)))


class ResultCollector:
    def __init__(self, timeout=DEFAULT_PARSER_TIMEOUT_S):
        self.timeout = timeout

    def invoke_parser(self, parser_cmd, output_dir, build_num) -> ResultTable:
        """Run the output parser over output_dir and load its CSV.

        parser_cmd None selects the built-in key=value parser.
        """
        if not os.path.isdir(output_dir) or not run_output_files(output_dir):
            raise EmptyOutputDir(f"no run output files in {output_dir}")

        if parser_cmd is None:
            text = render_rows_csv(parse_output_dir(output_dir))
        else:
            text = self._run_external(parser_cmd, output_dir)
        return parse_result_csv(text, build_num)

    def _run_external(self, parser_cmd, output_dir):
        args = shlex.split(parser_cmd) if isinstance(parser_cmd, str) else list(parser_cmd)
        args.append(output_dir)
        logger.info("Running output parser: %s", shlex.join(args))
        try:
            proc = subprocess.run(args, capture_output=True, text=True, timeout=self.timeout)
        except (FileNotFoundError, PermissionError) as exc:
            raise ParserFailure(f"cannot execute parser {args[0]}: {exc}") from exc
        except subprocess.TimeoutExpired as exc:
            raise ParserFailure(f"parser did not finish within {self.timeout}s") from exc
        if proc.returncode != 0:
            raise ParserFailure(f"parser exited with status {proc.returncode}", proc.stderr)
        return proc.stdout
