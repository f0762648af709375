"""
Simulated Backend Module
Local stand-in for a cluster: synthetic nodes, a seeded latency model and a
virtual clock, so whole jobs run deterministically in well under a second.
"""

import logging
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np

from utils.backends import (
    Allocation,
    Backend,
    Finding,
    LaunchResult,
    check_script,
    conf_number,
    new_alloc_id,
    register_backend,
    swarm_env,
)
from utils.errors import InsufficientCapacity, ProvisionTimeout, SchemaViolation, TeardownPartial
from utils.planner import ScalePoint
from utils.process_runner import CANCELLED_EXIT_CODE, TIMEOUT_EXIT_CODE, run_with_timeout

logger = logging.getLogger(__name__)

DEFAULT_BASE_LATENCY_S = 600.0
DEFAULT_PER_NODE_LATENCY_S = 2.0
DEFAULT_JITTER_PCT = 1.0
DEFAULT_T1_S = 64.0

_PROVISION_STREAM = 0


@dataclass(frozen=True)
class WorkloadModel:
    """Strong-scaling runtime model.

    T(p) = t1 * (f + (1 - f) / p) * (1 + penalty * (nodes - 1))
    f = 0 and penalty = 0 gives perfect scaling T1/p.
    """
    t1_s: float = DEFAULT_T1_S
    serial_fraction: float = 0.0
    internode_penalty: float = 0.0

    @classmethod
    def from_conf(cls, block):
        return cls(
            t1_s=float(block.get('t1_s', DEFAULT_T1_S)),
            serial_fraction=float(block.get('serial_fraction', 0.0)),
            internode_penalty=float(block.get('internode_penalty', 0.0)),
        )

    def runtime(self, point: ScalePoint):
        p = point.total_procs
        f = self.serial_fraction
        return self.t1_s * (f + (1.0 - f) / p) * (1.0 + self.internode_penalty * (point.nodes - 1))


@register_backend('simulated')
class SimulatedBackend(Backend):
    KNOWN_KEYS = (
        'seed', 'base_latency_s', 'per_node_latency_s', 'jitter_pct',
        'execute_script', 'workload', 'faults', 'kill_grace_s',
    )
    WORKLOAD_KEYS = ('t1_s', 'serial_fraction', 'internode_penalty')
    FAULT_KEYS = (
        'capacity', 'provision_timeout', 'fail_points', 'fail_exit_code',
        'timeout_points', 'unreachable_nodes',
    )

    def __init__(self, conf, image_ref=''):
        super().__init__(conf, image_ref)
        self.seed = int(self.conf.get('seed', 0))
        self.base_latency_s = float(self.conf.get('base_latency_s', DEFAULT_BASE_LATENCY_S))
        self.per_node_latency_s = float(self.conf.get('per_node_latency_s', DEFAULT_PER_NODE_LATENCY_S))
        self.jitter = float(self.conf.get('jitter_pct', DEFAULT_JITTER_PCT)) / 100.0
        self.execute_script = bool(self.conf.get('execute_script', True))
        self.kill_grace_s = float(self.conf.get('kill_grace_s', 5.0))

        # wall times always come from the model, scripts or not
        self.workload = WorkloadModel.from_conf(self.conf.get('workload') or {})

        faults = self.conf.get('faults', {})
        self.capacity = faults.get('capacity')
        self.fail_provision_timeout = bool(faults.get('provision_timeout', False))
        self.fail_points = {ScalePoint.parse(label) for label in faults.get('fail_points', [])}
        self.fail_exit_code = int(faults.get('fail_exit_code', 1))
        self.timeout_points = {ScalePoint.parse(label) for label in faults.get('timeout_points', [])}
        self.unreachable_nodes = set(faults.get('unreachable_nodes', []))

        self._clock = 0.0
        self._attempts = Counter()

    @classmethod
    def validate_conf(cls, conf, max_nodes, base_path='$.exec_env_conf'):
        findings = []
        for key in conf:
            if key not in cls.KNOWN_KEYS:
                findings.append(Finding(f"{base_path}.{key}", "unknown key for simulated backend"))

        seed = conf.get('seed', 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            findings.append(Finding(f"{base_path}.seed", "expected a nonnegative integer"))
        conf_number(conf, 'base_latency_s', base_path, findings)
        conf_number(conf, 'per_node_latency_s', base_path, findings)
        conf_number(conf, 'jitter_pct', base_path, findings, maximum=100.0)
        conf_number(conf, 'kill_grace_s', base_path, findings)
        if not isinstance(conf.get('execute_script', True), bool):
            findings.append(Finding(f"{base_path}.execute_script", "expected true or false"))

        workload = conf.get('workload', {})
        if not isinstance(workload, dict):
            findings.append(Finding(f"{base_path}.workload", "expected object"))
        else:
            path = f"{base_path}.workload"
            for key in workload:
                if key not in cls.WORKLOAD_KEYS:
                    findings.append(Finding(f"{path}.{key}", "unknown workload parameter"))
            if 't1_s' in workload:
                conf_number(workload, 't1_s', path, findings, minimum=1e-9)
            conf_number(workload, 'serial_fraction', path, findings, maximum=1.0)
            conf_number(workload, 'internode_penalty', path, findings)

        faults = conf.get('faults', {})
        if not isinstance(faults, dict):
            findings.append(Finding(f"{base_path}.faults", "expected object"))
        else:
            findings.extend(cls._validate_faults(faults, f"{base_path}.faults"))
        return findings

    @classmethod
    def _validate_faults(cls, faults, path):
        findings = []
        for key in faults:
            if key not in cls.FAULT_KEYS:
                findings.append(Finding(f"{path}.{key}", "unknown fault"))
        if 'capacity' in faults:
            conf_number(faults, 'capacity', path, findings, minimum=1)
        for key in ('fail_points', 'timeout_points'):
            labels = faults.get(key, [])
            if not isinstance(labels, list):
                findings.append(Finding(f"{path}.{key}", "expected a list of <nodes>x<ppn> labels"))
                continue
            for index, label in enumerate(labels):
                try:
                    ScalePoint.parse(str(label))
                except SchemaViolation as exc:
                    findings.append(Finding(f"{path}.{key}[{index}]", str(exc)))
        if 'fail_exit_code' in faults:
            conf_number(faults, 'fail_exit_code', path, findings, minimum=1, maximum=255)
        nodes = faults.get('unreachable_nodes', [])
        if not isinstance(nodes, list) or not all(isinstance(n, int) and not isinstance(n, bool) for n in nodes):
            findings.append(Finding(f"{path}.unreachable_nodes", "expected a list of node indices"))
        return findings

    def now(self):
        return self._clock

    def provision_latency(self, node_count):
        """Modeled wall time of bringing up node_count nodes"""
        nominal = self.base_latency_s + self.per_node_latency_s * node_count
        return nominal * self._jitter_factor(_PROVISION_STREAM, node_count)

    def modeled_runtime(self, point, attempt=0):
        return self.workload.runtime(point) * self._jitter_factor(
            point.nodes, point.procs_per_node, attempt + 1
        )

    def _jitter_factor(self, *stream):
        if self.jitter <= 0:
            return 1.0
        rng = np.random.default_rng([self.seed, *stream])
        return 1.0 + rng.uniform(-self.jitter, self.jitter)

    def _provision(self, node_count, timeout):
        if self.capacity is not None and node_count > self.capacity:
            raise InsufficientCapacity(
                f"simulated pool has {self.capacity} node(s), {node_count} requested"
            )
        if self.fail_provision_timeout:
            raise ProvisionTimeout("simulated provisioning did not complete")
        latency = self.provision_latency(node_count)
        if timeout is not None and latency > timeout:
            self._clock += timeout
            raise ProvisionTimeout(f"provisioning needs {latency:.0f}s, only {timeout:.0f}s left")
        self._clock += latency
        return Allocation(
            alloc_id=new_alloc_id('sim'),
            node_handles=[f"sim-node-{index:03d}" for index in range(node_count)],
            provision_wall_time=latency,
        )

    def _launch(self, alloc, req):
        point = req.point
        attempt = self._attempts[point]
        self._attempts[point] += 1
        modeled = self.modeled_runtime(point, attempt)

        if self.cancel_event.is_set():
            return LaunchResult(CANCELLED_EXIT_CODE, 0.0, False, req.output_sink, cancelled=True)

        if point in self.fail_points:
            self._write(req.output_sink, f"# simulated failure at {point.label}\n")
            result = LaunchResult(self.fail_exit_code, min(modeled, req.timeout), False, req.output_sink)
        elif point in self.timeout_points:
            self._write(req.output_sink, f"# simulated hang at {point.label}\n")
            result = LaunchResult(TIMEOUT_EXIT_CODE, req.timeout, True, req.output_sink)
        elif self.execute_script:
            result = self._run_script(alloc, req, modeled)
        else:
            self._write(req.output_sink, self._synthetic_output(point, attempt, modeled))
            result = LaunchResult(0, modeled, False, req.output_sink)

        if result.succeeded and result.wall_time > req.timeout:
            result = LaunchResult(TIMEOUT_EXIT_CODE, req.timeout, True, req.output_sink)
        self._clock += result.wall_time
        return result

    def _run_script(self, alloc, req, modeled):
        """Run the real script for its output; the wall time is the modeled one"""
        check_script(req.script)
        env = dict(os.environ)
        env.update(req.env)
        env.update(swarm_env(req.point))
        env['SWARM_HOSTS'] = ','.join(alloc.node_handles[:req.point.nodes])
        env['SWARM_MODELED_SECONDS'] = f"{modeled:.6f}"

        outcome = run_with_timeout(
            [os.path.abspath(req.script)],
            req.output_sink,
            req.timeout,
            env=env,
            grace=self.kill_grace_s,
            cancel_event=self.cancel_event,
        )
        if outcome.timed_out or outcome.cancelled:
            wall = outcome.wall_time
        else:
            wall = modeled if outcome.exit_code == 0 else min(modeled, req.timeout)
        return LaunchResult(outcome.exit_code, wall, outcome.timed_out, req.output_sink, outcome.cancelled)

    @staticmethod
    def _synthetic_output(point, attempt, modeled):
        return (
            f"# simulated run {point.label} attempt {attempt}\n"
            f"elapsed={modeled:.6f}\n"
        )

    @staticmethod
    def _write(path, text):
        with open(path, 'a', encoding='utf-8') as sink:
            sink.write(text)

    def _teardown(self, alloc):
        lost = [alloc.node_handles[i] for i in sorted(self.unreachable_nodes) if 0 <= i < len(alloc.node_handles)]
        if lost:
            raise TeardownPartial(lost)
