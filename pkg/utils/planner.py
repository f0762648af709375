"""
Planner Module
Expands scalability ranges into the ordered run matrix
"""

import re
from dataclasses import dataclass
from itertools import product

from utils.beefile import LOG2, ScalabilitySpec, ScaleMode
from utils.errors import EmptyMatrix, MatrixTooLarge, RangeError, SchemaViolation

DEFAULT_MATRIX_CAP = 4096

_LABEL_RE = re.compile(r'^(\d+)x(\d+)$')


@dataclass(frozen=True)
class ScalePoint:
    nodes: int
    procs_per_node: int

    def __post_init__(self):
        if self.nodes < 1 or self.procs_per_node < 1:
            raise RangeError(f"scale point needs nodes, ppn >= 1, got {self.nodes}x{self.procs_per_node}")

    @property
    def total_procs(self):
        return self.nodes * self.procs_per_node

    @property
    def label(self):
        return f"{self.nodes}x{self.procs_per_node}"

    @property
    def sort_key(self):
        return (self.total_procs, self.nodes)

    @classmethod
    def parse(cls, label):
        """Build a point from its "<nodes>x<ppn>" label"""
        match = _LABEL_RE.match(label.strip())
        if not match:
            raise SchemaViolation(f"bad scale point {label!r}, expected <nodes>x<ppn>")
        return cls(int(match.group(1)), int(match.group(2)))


@dataclass(frozen=True)
class RunMatrix:
    points: tuple[ScalePoint, ...]
    max_nodes: int

    @classmethod
    def of(cls, points):
        """Order, dedupe and size an arbitrary collection of points"""
        ordered = tuple(sorted(set(points), key=lambda point: point.sort_key))
        if not ordered:
            raise EmptyMatrix("run matrix has no points")
        return cls(points=ordered, max_nodes=max(point.nodes for point in ordered))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def expand_axis(bounds, mode: ScaleMode) -> list[int]:
    """Enumerate one axis; hi is always included"""
    lo, hi = bounds
    if lo < 1 or lo > hi:
        raise RangeError(f"axis range [{lo}, {hi}] is invalid")

    values = []
    value = lo
    while value <= hi:
        values.append(value)
        value = value * 2 if mode.kind == LOG2 else value + mode.step
    if values[-1] != hi:
        values.append(hi)
    return values


def expand_matrix(spec: ScalabilitySpec, cap=DEFAULT_MATRIX_CAP) -> RunMatrix:
    node_axis = expand_axis(spec.num_of_nodes, spec.mode)
    ppn_axis = expand_axis(spec.proc_per_node, spec.mode)

    size = len(node_axis) * len(ppn_axis)
    if size > cap:
        raise MatrixTooLarge(
            f"run matrix would have {size} points ({len(node_axis)} node counts x "
            f"{len(ppn_axis)} ppn values), cap is {cap}"
        )

    return RunMatrix.of(ScalePoint(n, p) for n, p in product(node_axis, ppn_axis))


def required_nodes(matrix: RunMatrix) -> int:
    """Node count to provision once for the whole job"""
    if not matrix.points:
        raise EmptyMatrix("run matrix has no points")
    return matrix.max_nodes


def matrix_as_rows(matrix):
    return [
        {
            'index': index,
            'nodes': point.nodes,
            'procs_per_node': point.procs_per_node,
            'total_procs': point.total_procs,
        }
        for index, point in enumerate(matrix.points, 1)
    ]
