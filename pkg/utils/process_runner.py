"""
Process Runner Module
Runs a command with a deadline, streaming combined output to a file
"""

import logging
import subprocess
import time
from dataclasses import dataclass

import psutil

logger = logging.getLogger(__name__)

TIMEOUT_EXIT_CODE = 124
CANCELLED_EXIT_CODE = 130
POLL_INTERVAL_S = 0.05


@dataclass
class ProcessOutcome:
    exit_code: int
    wall_time: float
    timed_out: bool = False
    cancelled: bool = False


def run_with_timeout(cmd, output_path, timeout, env=None, cwd=None, grace=5.0, cancel_event=None):
    """Run cmd until it exits, the timeout passes or cancel_event is set.

    stdout and stderr both go to output_path. On timeout or cancellation the
    whole process tree gets SIGTERM, then SIGKILL after `grace` seconds.
    wall_time covers the command only.
    """
    with open(output_path, 'ab') as sink:
        start = time.perf_counter()
        proc = subprocess.Popen(
            cmd,
            stdout=sink,
            stderr=subprocess.STDOUT,
            stdin=subprocess.DEVNULL,
            env=env,
            cwd=cwd,
            start_new_session=True,
        )
        deadline = start + timeout
        timed_out = cancelled = False
        while True:
            try:
                proc.wait(timeout=POLL_INTERVAL_S)
                break
            except subprocess.TimeoutExpired:
                pass
            if cancel_event is not None and cancel_event.is_set():
                cancelled = True
            elif time.perf_counter() >= deadline:
                timed_out = True
            if timed_out or cancelled:
                logger.warning("Stopping pid %s (%s)", proc.pid, 'cancelled' if cancelled else 'timeout')
                terminate_tree(proc.pid, grace)
                proc.wait()
                break
        wall_time = time.perf_counter() - start

    exit_code = proc.returncode
    if timed_out:
        exit_code = TIMEOUT_EXIT_CODE
    elif cancelled:
        exit_code = CANCELLED_EXIT_CODE
    return ProcessOutcome(exit_code, wall_time, timed_out, cancelled)


def terminate_tree(pid, grace=5.0):
    """SIGTERM a process and all its descendants, SIGKILL stragglers"""
    try:
        parent = psutil.Process(pid)
    except psutil.NoSuchProcess:
        return
    procs = parent.children(recursive=True) + [parent]
    for proc in procs:
        try:
            proc.terminate()
        except psutil.NoSuchProcess:
            pass
    _, alive = psutil.wait_procs(procs, timeout=grace)
    for proc in alive:
        try:
            proc.kill()
        except psutil.NoSuchProcess:
            pass
    psutil.wait_procs(alive, timeout=grace)
