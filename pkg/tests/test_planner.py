import time

import pytest

from utils.beefile import ScalabilitySpec, ScaleMode
from utils.errors import EmptyMatrix, MatrixTooLarge, RangeError, SchemaViolation
from utils.planner import RunMatrix, ScalePoint, expand_axis, expand_matrix, matrix_as_rows, required_nodes


def oracle_log_axis(lo, hi):
    values = [lo * 2 ** k for k in range(0, 64) if lo * 2 ** k <= hi]
    return values if values[-1] == hi else values + [hi]


def test_listing_matrix_has_thirty_points():
    start = time.perf_counter()
    spec = ScalabilitySpec('run.sh', (1, 32), (1, 16), ScaleMode.log2())
    matrix = expand_matrix(spec)

    assert len(matrix) == 30
    assert matrix.max_nodes == 32
    assert required_nodes(matrix) == 32
    assert {p.nodes for p in matrix} == {1, 2, 4, 8, 16, 32}
    assert {p.procs_per_node for p in matrix} == {1, 2, 4, 8, 16}
    assert time.perf_counter() - start < 1.0


def test_log_axis_matches_oracle_up_to_256():
    for lo in range(1, 257):
        for hi in range(lo, 257):
            assert expand_axis((lo, hi), ScaleMode.log2()) == oracle_log_axis(lo, hi)


def test_log_axis_appends_endpoint():
    assert expand_axis((1, 10), ScaleMode.log2()) == [1, 2, 4, 8, 10]
    assert expand_axis((3, 3), ScaleMode.log2()) == [3]


def test_linear_axis_with_step():
    assert expand_axis((1, 4), ScaleMode.linear()) == [1, 2, 3, 4]
    assert expand_axis((1, 10), ScaleMode.linear(4)) == [1, 5, 9, 10]


def test_matrix_order_and_uniqueness():
    matrix = expand_matrix(ScalabilitySpec('run.sh', (1, 4), (1, 4), ScaleMode.linear()))
    keys = [p.sort_key for p in matrix]

    assert keys == sorted(keys)
    assert len(set(matrix.points)) == len(matrix) == 16
    assert matrix.points[0] == ScalePoint(1, 1)
    # equal totals keep the fewer-nodes point first
    assert matrix.points.index(ScalePoint(1, 2)) < matrix.points.index(ScalePoint(2, 1))


def test_max_nodes_is_largest_point():
    matrix = expand_matrix(ScalabilitySpec('run.sh', (2, 5), (1, 3), ScaleMode.linear(2)))
    assert matrix.max_nodes == max(p.nodes for p in matrix) == 5


def test_matrix_cap():
    spec = ScalabilitySpec('run.sh', (1, 100), (1, 100), ScaleMode.linear())
    with pytest.raises(MatrixTooLarge):
        expand_matrix(spec, cap=4096)
    assert len(expand_matrix(spec, cap=10000)) == 10000


def test_required_nodes_of_empty_matrix():
    with pytest.raises(EmptyMatrix):
        required_nodes(RunMatrix(points=(), max_nodes=0))
    with pytest.raises(EmptyMatrix):
        RunMatrix.of([])


def test_scale_point_label_round_trip():
    point = ScalePoint(4, 16)
    assert point.label == '4x16'
    assert point.total_procs == 64
    assert ScalePoint.parse('4x16') == point
    with pytest.raises(SchemaViolation):
        ScalePoint.parse('4-16')
    with pytest.raises(RangeError):
        ScalePoint(0, 1)


def test_matrix_as_rows():
    matrix = RunMatrix.of([ScalePoint(2, 2), ScalePoint(1, 1)])
    assert matrix_as_rows(matrix) == [
        {'index': 1, 'nodes': 1, 'procs_per_node': 1, 'total_procs': 1},
        {'index': 2, 'nodes': 2, 'procs_per_node': 2, 'total_procs': 4},
    ]
