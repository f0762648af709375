"""
Beefile Module
Parses and validates the JSON task description (beefile) into a TaskSpec
"""

import json
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Any

from utils.errors import MalformedJson, RangeError, SchemaViolation, UnknownBackend

logger = logging.getLogger(__name__)

KNOWN_TOP_LEVEL = ('task_conf', 'docker_conf', 'exec_env_conf')
KNOWN_TASK_KEYS = ('task_name', 'exec_target', 'scalability_test')
KNOWN_SCALABILITY_KEYS = ('script', 'num_of_nodes', 'proc_per_node', 'mode', 'step', 'repeats')

LINEAR = 'linear'
LOG2 = 'log2'
_MODE_ALIASES = {'linear': LINEAR, 'log': LOG2, 'log2': LOG2}


@dataclass(frozen=True)
class ScaleMode:
    kind: str = LINEAR
    step: int = 1

    def __post_init__(self):
        if self.kind not in (LINEAR, LOG2):
            raise SchemaViolation(f"unknown mode {self.kind!r}")
        if self.step < 1:
            raise RangeError(f"linear step must be >= 1, got {self.step}")

    @classmethod
    def linear(cls, step=1):
        return cls(LINEAR, step)

    @classmethod
    def log2(cls):
        return cls(LOG2, 1)


@dataclass(frozen=True)
class ScalabilitySpec:
    script: str
    num_of_nodes: tuple[int, int]
    proc_per_node: tuple[int, int]
    mode: ScaleMode = field(default_factory=ScaleMode)
    repeats: int = 1

    def __post_init__(self):
        for name, (lo, hi) in (('num_of_nodes', self.num_of_nodes), ('proc_per_node', self.proc_per_node)):
            if lo < 1:
                raise RangeError(f"{name} lower bound must be >= 1, got {lo}")
            if lo > hi:
                raise RangeError(f"{name} range [{lo}, {hi}] has min > max")
        if self.repeats < 1:
            raise RangeError(f"repeats must be >= 1, got {self.repeats}")


@dataclass(frozen=True)
class TaskSpec:
    task_name: str
    exec_target: str
    image_ref: str
    scalability: ScalabilitySpec
    backend_conf: dict = field(default_factory=dict)
    # JSON path of the block backend_conf was read from
    backend_conf_path: str = '$.exec_env_conf'
    docker_conf: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    # exec_env_conf as written, every block included
    exec_env_conf: dict = field(default_factory=dict, compare=False)
    warnings: tuple[str, ...] = field(default=(), compare=False)


def load_taskspec(path):
    """Read and parse a beefile from disk"""
    with open(path, 'rb') as handle:
        return parse_taskspec(handle.read())


def parse_taskspec(raw: bytes | str) -> TaskSpec:
    """Parse beefile JSON text into a validated TaskSpec"""
    try:
        if isinstance(raw, bytes):
            raw = raw.decode('utf-8')
        document = json.loads(raw)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedJson(f"beefile is not valid JSON: {exc}") from exc

    if not isinstance(document, dict):
        raise SchemaViolation("$: beefile must be a JSON object")

    warnings = []
    extras = {}
    for key, value in document.items():
        if key not in KNOWN_TOP_LEVEL:
            extras[key] = value
            warnings.append(f"$.{key}: unknown top-level key ignored")

    task_conf = _require(document, 'task_conf', dict, '$')
    task_name = _require(task_conf, 'task_name', str, '$.task_conf')
    if not task_name or re.search(r'\s', task_name):
        raise SchemaViolation("$.task_conf.task_name: must be nonempty and contain no whitespace")

    exec_target = _require(task_conf, 'exec_target', str, '$.task_conf')
    from utils.backends import backend_names
    if exec_target not in backend_names():
        raise UnknownBackend(
            f"$.task_conf.exec_target: unknown backend {exec_target!r} "
            f"(known: {', '.join(backend_names())})"
        )

    for key in task_conf:
        if key not in KNOWN_TASK_KEYS:
            warnings.append(f"$.task_conf.{key}: unknown key ignored")

    scalability = _parse_scalability(
        _require(task_conf, 'scalability_test', dict, '$.task_conf'),
        '$.task_conf.scalability_test',
        warnings,
    )

    docker_conf = document.get('docker_conf', {})
    if not isinstance(docker_conf, dict):
        raise SchemaViolation("$.docker_conf: expected object")
    image_ref = docker_conf.get('docker_img_tag', '')
    if not isinstance(image_ref, str):
        raise SchemaViolation("$.docker_conf.docker_img_tag: expected string")

    exec_env_conf = document.get('exec_env_conf', {})
    if not isinstance(exec_env_conf, dict):
        raise SchemaViolation("$.exec_env_conf: expected object")
    backend_conf, backend_conf_path = select_backend_block(exec_env_conf, exec_target)

    for message in warnings:
        logger.warning(message)

    return TaskSpec(
        task_name=task_name,
        exec_target=exec_target,
        image_ref=image_ref,
        scalability=scalability,
        backend_conf=backend_conf,
        backend_conf_path=backend_conf_path,
        docker_conf=docker_conf,
        extras=extras,
        exec_env_conf=exec_env_conf,
        warnings=tuple(warnings),
    )


def select_backend_block(exec_env_conf, target):
    """Pick the conf block for a backend.

    Both the flat layout and the Listing-style layout keyed by backend name
    are accepted.
    """
    keyed = exec_env_conf.get(target)
    if isinstance(keyed, dict):
        return dict(keyed), f'$.exec_env_conf.{target}'
    return dict(exec_env_conf), '$.exec_env_conf'


def serialize_taskspec(spec: TaskSpec) -> dict:
    """Inverse of parse_taskspec, in the beefile layout"""
    scal = spec.scalability
    scalability_test = {
        'script': scal.script,
        'num_of_nodes': list(scal.num_of_nodes),
        'proc_per_node': list(scal.proc_per_node),
        'mode': 'log' if scal.mode.kind == LOG2 else 'linear',
    }
    if scal.mode.kind == LINEAR:
        scalability_test['step'] = scal.mode.step
    if scal.repeats != 1:
        scalability_test['repeats'] = scal.repeats

    if spec.backend_conf_path == '$.exec_env_conf':
        exec_env_conf = dict(spec.backend_conf)
    else:
        exec_env_conf = {
            name: dict(block) for name, block in spec.exec_env_conf.items() if isinstance(block, dict)
        }
        exec_env_conf[spec.exec_target] = dict(spec.backend_conf)

    document = {
        'task_conf': {
            'task_name': spec.task_name,
            'exec_target': spec.exec_target,
            'scalability_test': scalability_test,
        },
        'docker_conf': dict(spec.docker_conf),
        'exec_env_conf': exec_env_conf,
    }
    document.update(spec.extras)
    return document


def retarget(spec: TaskSpec, target: str) -> TaskSpec:
    """Same task bound to another backend.

    The conf comes from a keyed exec_env_conf block for target; a flat block
    belongs to the original target, so the new backend starts from {}.
    """
    from utils.backends import backend_class

    if target == spec.exec_target:
        return spec
    backend_class(target)
    block = spec.exec_env_conf.get(target)
    conf = dict(block) if isinstance(block, dict) else {}
    logger.info("Backend overridden: %s -> %s", spec.exec_target, target)
    return replace(
        spec,
        exec_target=target,
        backend_conf=conf,
        backend_conf_path=f'$.exec_env_conf.{target}',
    )


def validate_backend_conf(spec: TaskSpec) -> list:
    """Ask the selected backend to check its conf block; returns findings"""
    from utils.backends import backend_class
    from utils.planner import expand_axis

    lo, hi = spec.scalability.num_of_nodes
    max_nodes = expand_axis((lo, hi), spec.scalability.mode)[-1]
    return backend_class(spec.exec_target).validate_conf(
        spec.backend_conf, max_nodes, spec.backend_conf_path
    )


def _parse_scalability(block, path, warnings):
    for key in block:
        if key not in KNOWN_SCALABILITY_KEYS:
            warnings.append(f"{path}.{key}: unknown key ignored")

    script = _require(block, 'script', str, path)
    if not script:
        raise SchemaViolation(f"{path}.script: must be nonempty")
    nodes = _parse_range(block, 'num_of_nodes', path)
    ppn = _parse_range(block, 'proc_per_node', path)

    mode_name = _require(block, 'mode', str, path)
    kind = _MODE_ALIASES.get(mode_name.lower())
    if kind is None:
        raise SchemaViolation(f"{path}.mode: expected 'linear' or 'log', got {mode_name!r}")
    step = _optional_int(block, 'step', path, default=1)
    if kind == LOG2 and 'step' in block:
        warnings.append(f"{path}.step: ignored in log mode")
        step = 1
    repeats = _optional_int(block, 'repeats', path, default=1)

    return ScalabilitySpec(
        script=script,
        num_of_nodes=nodes,
        proc_per_node=ppn,
        mode=ScaleMode(kind, step),
        repeats=repeats,
    )


def _parse_range(block, key, path):
    value = block.get(key)
    if value is None:
        raise SchemaViolation(f"{path}.{key}: required field missing")
    if not isinstance(value, list) or len(value) != 2 or not all(_is_int(v) for v in value):
        raise SchemaViolation(f"{path}.{key}: expected [min, max] integer pair")
    return int(value[0]), int(value[1])


def _optional_int(block, key, path, default):
    if key not in block:
        return default
    value = block[key]
    if not _is_int(value):
        raise SchemaViolation(f"{path}.{key}: expected integer")
    return int(value)


def _require(block: dict, key: str, kind: type, path: str) -> Any:
    if key not in block:
        raise SchemaViolation(f"{path}.{key}: required field missing")
    value = block[key]
    if not isinstance(value, kind):
        raise SchemaViolation(f"{path}.{key}: expected {kind.__name__}")
    return value


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)
