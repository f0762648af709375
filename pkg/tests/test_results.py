import os
import sys
import time

import numpy as np
import pytest

from tests.conftest import make_executable
from utils.errors import EmptyOutputDir, IoFailure, ParserFailure, ParserOutputMalformed
from utils.planner import ScalePoint
from utils.results import (
    MetricRow,
    ResultCollector,
    ResultTable,
    format_result_csv,
    parse_output_dir,
    parse_result_csv,
    read_result_csv,
    result_filename,
    write_result_csv,
)

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def random_table(rng, build_num='42'):
    rows = []
    seen = set()
    for _ in range(int(rng.integers(1, 30))):
        point = ScalePoint(int(rng.integers(1, 65)), int(rng.integers(1, 65)))
        metric = ('elapsed', 'throughput', 'mem.peak_mb', 'io_s')[int(rng.integers(0, 4))]
        if (point, metric) in seen:
            continue
        seen.add((point, metric))
        value = float(rng.choice([rng.uniform(-1e6, 1e6), rng.uniform(0, 1e-6), rng.integers(0, 1000)]))
        rows.append(MetricRow.at(point, metric, value))
    return ResultTable(build_num, rows)


def test_result_filename():
    assert result_filename('1234') == 'scalability_test_result_1234.csv'
    assert result_filename('../evil') == 'scalability_test_result_evil.csv'


def test_csv_layout_is_canonical():
    table = ResultTable('7', [
        MetricRow.at(ScalePoint(2, 2), 'elapsed', 25),
        MetricRow.at(ScalePoint(1, 1), 'elapsed', 100),
        MetricRow.at(ScalePoint(1, 4), 'elapsed', 26.5),
    ])
    assert format_result_csv(table) == (
        'nodes,procs_per_node,total_procs,metric,value\n'
        '1,1,1,elapsed,100.0\n'
        '1,4,4,elapsed,26.5\n'
        '2,2,4,elapsed,25.0\n'
    )


def test_writing_twice_is_byte_identical(tmp_path):
    table = random_table(np.random.default_rng(1))
    first = write_result_csv(table, str(tmp_path / 'a'))
    second = write_result_csv(table, str(tmp_path / 'b'))
    with open(first, 'rb') as a, open(second, 'rb') as b:
        assert a.read() == b.read()


def test_parse_of_write_is_identity_on_random_tables():
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    for _ in range(1000):
        table = random_table(rng).canonical()
        parsed = parse_result_csv(format_result_csv(table), table.build_num)
        assert parsed == table
    assert time.perf_counter() - start < 10.0


def test_read_result_csv_takes_build_from_filename(tmp_path):
    table = random_table(np.random.default_rng(3), build_num='88').canonical()
    path = write_result_csv(table, str(tmp_path))
    assert read_result_csv(path) == table


def test_read_missing_file():
    with pytest.raises(IoFailure):
        read_result_csv('/nonexistent/scalability_test_result_1.csv')


@pytest.mark.parametrize('text', [
    '',
    'nodes,ppn,total,metric,value\n1,1,1,t,1.0\n',
    'nodes,procs_per_node,total_procs,metric,value\n',
    'nodes,procs_per_node,total_procs,metric,value\n1,1,1,t\n',
    'nodes,procs_per_node,total_procs,metric,value\n1,2,3,t,1.0\n',
    'nodes,procs_per_node,total_procs,metric,value\n1,1,1,t,fast\n',
    'nodes,procs_per_node,total_procs,metric,value\n1,1,1,t,nan\n',
    'nodes,procs_per_node,total_procs,metric,value\n1,1,1,bad name,1.0\n',
    'nodes,procs_per_node,total_procs,metric,value\n1,1,1,t,1.0\n1,1,1,t,2.0\n',
])
def test_malformed_parser_output(text):
    with pytest.raises(ParserOutputMalformed):
        parse_result_csv(text, '1')


@pytest.mark.parametrize('row', [
    MetricRow(1, 1, 1, 'bad name', 1.0),
    MetricRow(1, 1, 1, 'a,b', 1.0),
    MetricRow(1, 1, 1, '', 1.0),
    MetricRow(1, 1, 1, 'elapsed', float('nan')),
    MetricRow(1, 1, 1, 'elapsed', float('inf')),
    MetricRow(1, 2, 3, 'elapsed', 1.0),
])
def test_writer_refuses_rows_the_reader_rejects(row, tmp_path):
    table = ResultTable('5', [MetricRow.at(ScalePoint(1, 2), 'elapsed', 2.0), row])
    with pytest.raises(ParserOutputMalformed):
        format_result_csv(table)
    with pytest.raises(ParserOutputMalformed):
        write_result_csv(table, str(tmp_path))
    assert not os.path.exists(tmp_path / result_filename('5'))


def test_writer_refuses_empty_table():
    with pytest.raises(ParserOutputMalformed):
        format_result_csv(ResultTable('5', []))


def test_builtin_parser_takes_median_of_repeats(tmp_path):
    (tmp_path / '1x2.out').write_text('# repeat 0\nelapsed=10\n# repeat 1\nelapsed=30\n# repeat 2\nelapsed=12\n')
    (tmp_path / '2x1.out').write_text('noise line\nelapsed = 4.5e1\nresidual=1e-3\n')
    (tmp_path / 'notes.txt').write_text('elapsed=999\n')

    rows = parse_output_dir(str(tmp_path))
    assert [(r.nodes, r.procs_per_node, r.metric_name, r.metric_value) for r in rows] == [
        (1, 2, 'elapsed', 12.0),
        (2, 1, 'elapsed', 45.0),
        (2, 1, 'residual', 0.001),
    ]


def test_collector_builtin_parser(tmp_path):
    (tmp_path / '1x1.out').write_text('elapsed=64\n')
    table = ResultCollector().invoke_parser(None, str(tmp_path), '5')
    assert table.build_num == '5'
    assert table.value(ScalePoint(1, 1), 'elapsed') == 64.0


def test_collector_empty_output_dir(tmp_path):
    with pytest.raises(EmptyOutputDir):
        ResultCollector().invoke_parser(None, str(tmp_path), '1')
    with pytest.raises(EmptyOutputDir):
        ResultCollector().invoke_parser(None, str(tmp_path / 'missing'), '1')


def test_collector_external_parser(tmp_path):
    out_dir = tmp_path / 'out'
    out_dir.mkdir()
    (out_dir / '1x1.out').write_text('whatever\n')
    parser = make_executable(
        tmp_path / 'parse.sh',
        '#!/usr/bin/env bash\necho "nodes,procs_per_node,total_procs,metric,value"\n'
        'for f in "$1"/*.out; do echo "1,1,1,files,1"; done\n',
    )
    table = ResultCollector().invoke_parser(parser, str(out_dir), '3')
    assert table.value(ScalePoint(1, 1), 'files') == 1.0


def test_collector_parser_failure_keeps_stderr(tmp_path):
    (tmp_path / '1x1.out').write_text('elapsed=1\n')
    parser = make_executable(tmp_path / 'bad.sh', '#!/usr/bin/env bash\necho "cannot parse" >&2\nexit 4\n')
    with pytest.raises(ParserFailure) as excinfo:
        ResultCollector().invoke_parser(parser, str(tmp_path), '1')
    assert excinfo.value.stderr.strip() == 'cannot parse'
    assert 'status 4' in str(excinfo.value)


def test_collector_parser_not_executable(tmp_path):
    (tmp_path / '1x1.out').write_text('elapsed=1\n')
    with pytest.raises(ParserFailure):
        ResultCollector().invoke_parser(str(tmp_path / 'nope'), str(tmp_path), '1')


def test_collector_parser_timeout(tmp_path):
    (tmp_path / '1x1.out').write_text('elapsed=1\n')
    parser = make_executable(tmp_path / 'slow.sh', '#!/usr/bin/env bash\nexec sleep 10\n')
    with pytest.raises(ParserFailure):
        ResultCollector(timeout=0.5).invoke_parser(parser, str(tmp_path), '1')


def test_output_parser_script_matches_builtin(tmp_path):
    (tmp_path / '1x1.out').write_text('elapsed=64\n')
    (tmp_path / '1x2.out').write_text('elapsed=32\n')
    command = [sys.executable, os.path.join(ROOT, 'output_parser.py')]
    external = ResultCollector().invoke_parser(command, str(tmp_path), '9')
    builtin = ResultCollector().invoke_parser(None, str(tmp_path), '9')
    assert external == builtin
