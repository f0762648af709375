"""
Backends Module
Compute-platform interface, shared launch types and the backend registry
"""

import itertools
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field

from utils.errors import LaunchFailure, UnknownBackend
from utils.planner import ScalePoint

logger = logging.getLogger(__name__)

_BACKENDS = {}
_alloc_counter = itertools.count(1)


@dataclass(frozen=True)
class Finding:
    path: str
    message: str


@dataclass
class Allocation:
    alloc_id: str
    node_handles: list
    provision_wall_time: float
    released: bool = False


@dataclass(frozen=True)
class LaunchRequest:
    point: ScalePoint
    script: str
    timeout: float
    output_sink: str
    env: dict = field(default_factory=dict)


@dataclass
class LaunchResult:
    exit_code: int
    wall_time: float
    timed_out: bool
    output_path: str
    cancelled: bool = False

    @property
    def succeeded(self):
        return self.exit_code == 0 and not self.timed_out and not self.cancelled


@dataclass(frozen=True)
class BackendCall:
    op: str
    detail: dict


def register_backend(name):
    """Class decorator adding a backend to the registry under `name`"""
    def decorator(cls):
        cls.name = name
        _BACKENDS[name] = cls
        return cls
    return decorator


def _load_builtin_backends():
    # registration happens on import
    import utils.simulated_backend  # noqa: F401
    import utils.ssh_backend  # noqa: F401


def backend_names():
    _load_builtin_backends()
    return sorted(_BACKENDS)


def backend_class(name):
    _load_builtin_backends()
    try:
        return _BACKENDS[name]
    except KeyError:
        raise UnknownBackend(f"unknown backend {name!r} (known: {', '.join(sorted(_BACKENDS))})") from None


def create_backend(name, conf=None, image_ref=''):
    return backend_class(name)(conf or {}, image_ref=image_ref)


def new_alloc_id(prefix):
    return f"{prefix}-{next(_alloc_counter)}-{uuid.uuid4().hex[:8]}"


def swarm_env(point: ScalePoint):
    """Variables every launched script receives"""
    return {
        'SWARM_NODES': str(point.nodes),
        'SWARM_PPN': str(point.procs_per_node),
        'SWARM_TOTAL_PROCS': str(point.total_procs),
    }


def rank_placement(point: ScalePoint, handles):
    """Round-robin ranks over the first point.nodes handles"""
    hosts = handles[:point.nodes]
    return [hosts[rank % len(hosts)] for rank in range(point.total_procs)]


class Backend:
    """Base class for compute backends.

    Subclasses implement _provision, _launch and _teardown. The public methods
    keep the call log, enforce request invariants and make teardown
    idempotent.
    """
    name = 'abstract'

    def __init__(self, conf, image_ref=''):
        self.conf = dict(conf)
        self.image_ref = image_ref
        self.call_log = []
        self.cancel_event = threading.Event()

    @classmethod
    def validate_conf(cls, conf, max_nodes, base_path='$.exec_env_conf'):
        return []

    def provision(self, node_count, timeout=None) -> Allocation:
        """Bring up node_count nodes; ProvisionTimeout once `timeout` seconds pass"""
        if node_count < 1:
            raise ValueError("node_count must be >= 1")
        if timeout is not None and timeout <= 0:
            raise ValueError("provision timeout must be > 0")
        self.call_log.append(BackendCall('provision', {'node_count': node_count, 'timeout': timeout}))
        alloc = self._provision(node_count, timeout)
        logger.info("Provisioned %d node(s) on %s as %s in %.1fs",
                    node_count, self.name, alloc.alloc_id, alloc.provision_wall_time)
        return alloc

    def launch(self, alloc: Allocation, req: LaunchRequest) -> LaunchResult:
        if alloc.released:
            raise LaunchFailure(f"allocation {alloc.alloc_id} was already released")
        if req.point.nodes > len(alloc.node_handles):
            raise LaunchFailure(
                f"point {req.point.label} needs {req.point.nodes} nodes, allocation has {len(alloc.node_handles)}"
            )
        if req.timeout <= 0:
            raise LaunchFailure("launch timeout must be > 0")
        self.call_log.append(BackendCall('launch', {'point': req.point.label, 'timeout': req.timeout}))
        return self._launch(alloc, req)

    def teardown(self, alloc: Allocation) -> bool:
        if alloc.released:
            self.call_log.append(BackendCall('teardown', {'alloc_id': alloc.alloc_id, 'noop': True}))
            return True
        self.call_log.append(BackendCall('teardown', {'alloc_id': alloc.alloc_id, 'noop': False}))
        try:
            self._teardown(alloc)
        finally:
            alloc.released = True
        logger.info("Released allocation %s", alloc.alloc_id)
        return True

    def cancel(self):
        """Ask a running launch to stop; safe from a signal handler"""
        self.cancel_event.set()

    def now(self):
        return time.monotonic()

    def calls(self, op):
        return [call for call in self.call_log if call.op == op]

    def _provision(self, node_count, timeout):
        raise NotImplementedError

    def _launch(self, alloc, req):
        raise NotImplementedError

    def _teardown(self, alloc):
        raise NotImplementedError


def check_script(script):
    if not os.path.isfile(script):
        raise LaunchFailure(f"run script {script} does not exist")
    if not os.access(script, os.X_OK):
        raise LaunchFailure(f"run script {script} is not executable")


def conf_number(conf, key, path, findings, minimum=0.0, maximum=None):
    """Append a finding when conf[key] is present but not a number in range"""
    if key not in conf:
        return
    value = conf[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        findings.append(Finding(f"{path}.{key}", "expected a number"))
    elif value < minimum or (maximum is not None and value > maximum):
        bound = f"[{minimum}, {maximum}]" if maximum is not None else f">= {minimum}"
        findings.append(Finding(f"{path}.{key}", f"must be {bound}, got {value}"))
