"""
Executor Module
Drives one scalability job: provision once, run every scale point in order,
capture outputs and stage timings, always tear down.
"""

import glob
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np
from werkzeug.utils import secure_filename

from utils.backends import LaunchRequest, LaunchResult
from utils.errors import (
    BackendError,
    EmptyMatrix,
    LaunchFailure,
    ProvisionFailure,
    ProvisionTimeout,
    RangeError,
    TeardownPartial,
)
from utils.planner import required_nodes

logger = logging.getLogger(__name__)

DEFAULT_JOB_TIMEOUT_S = 120 * 60
STAGES = ('install', 'provision', 'execute', 'collect', 'publish')

COMPLETED = 'completed'
FAILED_POINTS = 'failed_points'
ABORTED = 'aborted'
TIMED_OUT = 'timed_out'
CANCELLED = 'cancelled'


@dataclass
class StageTimings:
    install_s: float = 0.0
    provision_s: float = 0.0
    execute_s: float = 0.0
    collect_s: float = 0.0
    publish_s: float = 0.0

    def seconds(self, stage):
        return getattr(self, f"{stage}_s")

    def as_dict(self):
        return asdict(self)


@dataclass
class RunRecord:
    point: object
    result: LaunchResult
    started_at: str
    attempts: list = field(default_factory=list)
    # set when the job deadline, not the point timeout, stopped this run
    cut_by_deadline: bool = False

    @property
    def total_wall_time(self):
        return sum(attempt.wall_time for attempt in self.attempts) if self.attempts else self.result.wall_time


@dataclass
class JobOutcome:
    records: list
    timings: StageTimings
    status: str
    alloc_id: str = ''
    teardown_error: str = ''

    @property
    def failed_records(self):
        return [record for record in self.records if not record.result.succeeded]

    @property
    def ok(self):
        return self.status == COMPLETED and not self.teardown_error


@dataclass
class StageReport:
    text: str
    data: dict


class JobExecutor:
    def __init__(self, backend, output_root='outputs', fail_fast=False, point_timeout=None):
        """Bind the executor to one backend instance"""
        self.backend = backend
        self.output_root = output_root
        self.fail_fast = fail_fast
        self.point_timeout = point_timeout

    def output_dir(self, spec):
        return os.path.join(self.output_root, secure_filename(spec.task_name) or 'task')

    def cancel(self):
        self.backend.cancel()

    def run_job(self, spec, matrix, job_timeout=DEFAULT_JOB_TIMEOUT_S) -> JobOutcome:
        if not matrix.points:
            raise EmptyMatrix("run matrix has no points")
        if job_timeout <= 0:
            raise RangeError(f"job timeout must be > 0, got {job_timeout}")

        out_dir = self._prepare_output_dir(spec)
        timings = StageTimings()
        node_count = required_nodes(matrix)

        # the job budget starts before provisioning
        start = self.backend.now()
        deadline = start + job_timeout
        try:
            alloc = self.backend.provision(node_count, timeout=job_timeout)
        except ProvisionTimeout as exc:
            if self.backend.now() < deadline:
                raise ProvisionFailure(f"provisioning {node_count} node(s) failed: {exc}") from exc
            logger.error("Job deadline of %.0fs reached while provisioning: %s", job_timeout, exc)
            timings.provision_s = self.backend.now() - start
            return JobOutcome([], timings, TIMED_OUT)
        except BackendError as exc:
            raise ProvisionFailure(f"provisioning {node_count} node(s) failed: {exc}") from exc
        timings.provision_s = alloc.provision_wall_time

        point_timeout = self.point_timeout or job_timeout / len(matrix)
        records = []
        status = COMPLETED
        outcome = JobOutcome(records, timings, status, alloc_id=alloc.alloc_id)
        try:
            for point in matrix:
                if self.backend.cancel_event.is_set():
                    status = CANCELLED
                    break
                remaining = deadline - self.backend.now()
                if remaining <= 0:
                    status = TIMED_OUT
                    break

                record = self._run_point(spec, alloc, point, point_timeout, deadline, out_dir)
                records.append(record)
                result = record.result
                if result.cancelled:
                    status = CANCELLED
                    break
                if record.cut_by_deadline:
                    logger.error("Job deadline of %.0fs reached during %s", job_timeout, point.label)
                    status = TIMED_OUT
                    break
                if not result.succeeded:
                    logger.warning(
                        "Point %s failed (exit %s%s)", point.label, result.exit_code,
                        ', timed out' if result.timed_out else '',
                    )
                    status = FAILED_POINTS
                    if self.fail_fast:
                        status = ABORTED
                        break
                else:
                    logger.info("Point %s done in %.3fs", point.label, result.wall_time)
        finally:
            try:
                self.backend.teardown(alloc)
            except TeardownPartial as exc:
                logger.error("%s", exc)
                outcome.teardown_error = str(exc)

        timings.execute_s = sum(record.total_wall_time for record in records)
        outcome.status = status
        return outcome

    def _prepare_output_dir(self, spec):
        out_dir = self.output_dir(spec)
        os.makedirs(out_dir, exist_ok=True)
        for stale in glob.glob(os.path.join(out_dir, '*.out')):
            os.remove(stale)
        return out_dir

    def _run_point(self, spec, alloc, point, point_timeout, deadline, out_dir):
        sink = os.path.join(out_dir, f"{point.label}.out")
        started_at = datetime.now(timezone.utc).isoformat()
        repeats = spec.scalability.repeats
        attempts = []
        cut = False

        for repeat in range(repeats):
            remaining = deadline - self.backend.now()
            if remaining <= 0:
                cut = True
                break
            timeout = min(point_timeout, remaining)
            if repeats > 1:
                with open(sink, 'a', encoding='utf-8') as handle:
                    handle.write(f"# repeat {repeat}\n")
            request = LaunchRequest(
                point=point,
                script=spec.scalability.script,
                timeout=timeout,
                output_sink=sink,
                env={'SWARM_TASK_NAME': spec.task_name, 'SWARM_REPEAT': str(repeat)},
            )
            try:
                result = self.backend.launch(alloc, request)
            except LaunchFailure as exc:
                with open(sink, 'a', encoding='utf-8') as handle:
                    handle.write(f"# launch failed: {exc}\n")
                result = LaunchResult(127, 0.0, False, sink)
            attempts.append(result)
            if result.timed_out and timeout < point_timeout:
                cut = True
            if not result.succeeded:
                break

        if not attempts:
            summary = LaunchResult(124, 0.0, True, sink)
        elif all(attempt.succeeded for attempt in attempts) and len(attempts) == repeats:
            summary = LaunchResult(0, float(np.median([a.wall_time for a in attempts])), False, sink)
        else:
            summary = next((a for a in attempts if not a.succeeded), attempts[-1])
            if summary.succeeded:
                summary = LaunchResult(124, summary.wall_time, True, sink)
        return RunRecord(point=point, result=summary, started_at=started_at, attempts=attempts, cut_by_deadline=cut)


def render_stage_report(timings: StageTimings) -> StageReport:
    """Per-stage seconds and shares; shares are rounded so they sum to exactly 100.0"""
    seconds = [max(0.0, timings.seconds(stage)) for stage in STAGES]
    shares = _rounded_shares(seconds)
    total = sum(seconds)

    rows = [
        {'stage': stage, 'seconds': round(secs, 3), 'percent': share}
        for stage, secs, share in zip(STAGES, seconds, shares)
    ]
    data = {'stages': rows, 'total_s': round(total, 3)}
    lines = [f"{'stage':<10} {'seconds':>12} {'share':>7}"]
    for row in rows:
        lines.append(f"{row['stage']:<10} {row['seconds']:>12.3f} {row['percent']:>6.1f}%")
    lines.append(f"{'total':<10} {total:>12.3f} {100.0 if total > 0 else 0.0:>6.1f}%")
    return StageReport(text='\n'.join(lines), data=data)


def write_stage_report(report: StageReport, out_dir):
    path = os.path.join(out_dir, 'stages.json')
    os.makedirs(out_dir, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(report.data, handle, indent=2, sort_keys=True)
        handle.write('\n')
    return path


def _rounded_shares(values):
    # largest remainder over tenths of a percent
    total = sum(values)
    if total <= 0:
        return [0.0] * len(values)
    exact = [v / total * 1000.0 for v in values]
    floors = [int(np.floor(x)) for x in exact]
    short = 1000 - sum(floors)
    order = sorted(range(len(values)), key=lambda i: exact[i] - floors[i], reverse=True)
    for i in order[:short]:
        floors[i] += 1
    return [f / 10.0 for f in floors]
