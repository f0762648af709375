"""
SSH Backend Module
Runs scale points on pre-existing hosts reachable over SSH
"""

import logging
import os
import shlex
import shutil
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor

from utils.backends import (
    Allocation,
    Backend,
    Finding,
    LaunchResult,
    check_script,
    conf_number,
    new_alloc_id,
    rank_placement,
    register_backend,
    swarm_env,
)
from utils.errors import (
    AuthFailure,
    BackendError,
    InsufficientCapacity,
    LaunchFailure,
    ProvisionTimeout,
    TeardownPartial,
)
from utils.process_runner import run_with_timeout

logger = logging.getLogger(__name__)

SSH_CONNECTION_ERROR = 255

READY = 'ready'
UNREACHABLE = 'unreachable'
DENIED = 'denied'


def fan_out(func, items):
    """Call func on every item, one thread per item; results in item order"""
    items = list(items)
    if not items:
        return []
    with ThreadPoolExecutor(max_workers=len(items)) as pool:
        return list(pool.map(func, items))


def run_command(args, timeout):
    """Run a short control command and capture its output"""
    logger.debug("exec: %s", shlex.join(args))
    return subprocess.run(
        args,
        capture_output=True,
        text=True,
        timeout=timeout,
        stdin=subprocess.DEVNULL,
    )


@register_backend('ssh-cluster')
class SshClusterBackend(Backend):
    KNOWN_KEYS = (
        'hosts', 'user', 'identity_file', 'generate_key', 'workdir',
        'connect_timeout_s', 'provision_timeout_s', 'kill_grace_s',
        'ssh_binary', 'scp_binary', 'ssh_keygen_binary',
    )

    def __init__(self, conf, image_ref='', runner=None):
        super().__init__(conf, image_ref)
        self.hosts = list(self.conf.get('hosts', []))
        self.user = self.conf.get('user')
        self.identity_file = self.conf.get('identity_file')
        self.generate_key = bool(self.conf.get('generate_key', False))
        self.workdir = self.conf.get('workdir', '/tmp/swarmci')
        self.connect_timeout_s = float(self.conf.get('connect_timeout_s', 10))
        self.provision_timeout_s = float(self.conf.get('provision_timeout_s', 900))
        self.kill_grace_s = float(self.conf.get('kill_grace_s', 5.0))
        self.ssh_binary = self.conf.get('ssh_binary', 'ssh')
        self.scp_binary = self.conf.get('scp_binary', 'scp')
        self.ssh_keygen_binary = self.conf.get('ssh_keygen_binary', 'ssh-keygen')
        self.runner = runner or run_command
        self._key_dir = None
        self._staged = set()

    @classmethod
    def validate_conf(cls, conf, max_nodes, base_path='$.exec_env_conf'):
        findings = []
        for key in conf:
            if key not in cls.KNOWN_KEYS:
                findings.append(Finding(f"{base_path}.{key}", "unknown key for ssh-cluster backend"))

        hosts_path = f"{base_path}.hosts"
        hosts = conf.get('hosts')
        if hosts is None:
            findings.append(Finding(hosts_path, "required field absent"))
        elif not isinstance(hosts, list) or not all(isinstance(h, str) and h.strip() for h in hosts):
            findings.append(Finding(hosts_path, "expected an ordered list of host names"))
        else:
            if len(set(hosts)) != len(hosts):
                findings.append(Finding(hosts_path, "duplicate host entries"))
            if len(hosts) < max_nodes:
                findings.append(Finding(
                    hosts_path,
                    f"insufficient hosts: {len(hosts)} configured, {max_nodes} required",
                ))

        for key in ('user', 'identity_file', 'workdir', 'ssh_binary', 'scp_binary', 'ssh_keygen_binary'):
            if key in conf and (not isinstance(conf[key], str) or not conf[key]):
                findings.append(Finding(f"{base_path}.{key}", "expected a nonempty string"))
        if 'generate_key' in conf and not isinstance(conf['generate_key'], bool):
            findings.append(Finding(f"{base_path}.generate_key", "expected true or false"))
        if conf.get('identity_file') and conf.get('generate_key'):
            findings.append(Finding(
                f"{base_path}.generate_key",
                "identity_file and generate_key are mutually exclusive",
            ))
        if 'connect_timeout_s' in conf:
            conf_number(conf, 'connect_timeout_s', base_path, findings, minimum=1)
        if 'provision_timeout_s' in conf:
            conf_number(conf, 'provision_timeout_s', base_path, findings, minimum=1)
        conf_number(conf, 'kill_grace_s', base_path, findings)
        return findings

    def target(self, host):
        return f"{self.user}@{host}" if self.user else host

    def ssh_args(self, target, command):
        args = [
            self.ssh_binary,
            '-o', 'BatchMode=yes',
            '-o', f'ConnectTimeout={int(self.connect_timeout_s)}',
            '-o', 'StrictHostKeyChecking=accept-new',
        ]
        if self.identity_file:
            args += ['-i', self.identity_file]
        return args + [target, command]

    def scp_args(self, source, target, dest):
        args = [self.scp_binary, '-q', '-o', 'BatchMode=yes']
        if self.identity_file:
            args += ['-i', self.identity_file]
        return args + [source, f"{target}:{dest}"]

    def ensure_key(self):
        """Create an ephemeral keypair when generate_key is set"""
        if self.identity_file or not self.generate_key:
            return self.identity_file
        self._key_dir = tempfile.mkdtemp(prefix='swarmci-key-')
        key_path = os.path.join(self._key_dir, 'id_swarmci')
        proc = self.runner(
            [self.ssh_keygen_binary, '-q', '-t', 'ed25519', '-N', '', '-C', 'swarmci', '-f', key_path],
            30,
        )
        if proc.returncode != 0:
            raise BackendError(f"ssh-keygen failed: {proc.stderr.strip()}")
        self.identity_file = key_path
        logger.info("Generated ephemeral key; authorize %s.pub on the cluster hosts", key_path)
        return key_path

    def _provision(self, node_count, timeout):
        if node_count > len(self.hosts):
            raise InsufficientCapacity(f"{len(self.hosts)} host(s) configured, {node_count} requested")

        limit = self.provision_timeout_s if timeout is None else min(self.provision_timeout_s, timeout)
        start = time.perf_counter()
        deadline = start + limit
        ready = []
        try:
            self.ensure_key()
            self._select_hosts(node_count, deadline, limit, ready)
            if self.image_ref:
                self._pull_image(ready, deadline)
        except BackendError:
            self._release(ready)
            raise

        return Allocation(
            alloc_id=new_alloc_id('ssh'),
            node_handles=ready,
            provision_wall_time=time.perf_counter() - start,
        )

    def _select_hosts(self, node_count, deadline, limit, ready):
        """Fill `ready` with the first node_count reachable hosts in configured order.

        Hosts are checked in waves sized to the nodes still missing, every host
        of a wave at once.
        """
        pending = list(self.hosts)
        unreachable = []
        while len(ready) < node_count and pending:
            remaining = deadline - time.perf_counter()
            if remaining <= 0:
                raise ProvisionTimeout(f"provisioning exceeded {limit:.0f}s")
            missing = node_count - len(ready)
            wave, pending = pending[:missing], pending[missing:]
            check_timeout = min(remaining, self.connect_timeout_s * 3)
            states = fan_out(lambda host: self._check_host(host, check_timeout), wave)

            ready.extend(self.target(host) for host, state in zip(wave, states) if state == READY)
            unreachable.extend(host for host, state in zip(wave, states) if state == UNREACHABLE)
            denied = [self.target(host) for host, state in zip(wave, states) if state == DENIED]
            if denied:
                raise AuthFailure(f"ssh authentication to {', '.join(denied)} failed")

        if len(ready) < node_count:
            if time.perf_counter() >= deadline:
                raise ProvisionTimeout(f"provisioning exceeded {limit:.0f}s")
            raise InsufficientCapacity(
                f"{len(ready)} of {node_count} node(s) available; unreachable: {', '.join(unreachable)}"
            )

    def _check_host(self, host, timeout):
        target = self.target(host)
        try:
            proc = self.runner(self.ssh_args(target, f"mkdir -p {shlex.quote(self.workdir)}"), timeout)
        except subprocess.TimeoutExpired:
            logger.warning("Host %s did not answer within %.0fs", host, timeout)
            return UNREACHABLE
        if proc.returncode == SSH_CONNECTION_ERROR and 'Permission denied' in proc.stderr:
            return DENIED
        if proc.returncode != 0:
            logger.warning("Host %s unavailable: %s", host, proc.stderr.strip())
            return UNREACHABLE
        return READY

    def _pull_image(self, targets, deadline):
        # TODO: stage the image once and share it instead of pulling on every node
        timeout = max(deadline - time.perf_counter(), 1.0)
        command = f"docker pull {shlex.quote(self.image_ref)}"
        errors = fan_out(lambda target: self._remote(target, command, timeout), targets)
        failed = [f"{target} ({error})" for target, error in zip(targets, errors) if error]
        if failed:
            raise BackendError(f"image pull failed on {', '.join(failed)}")

    def _remote(self, target, command, timeout):
        """Run command on target; None on success, else the reason it failed"""
        try:
            proc = self.runner(self.ssh_args(target, command), timeout)
        except subprocess.TimeoutExpired:
            return f"no answer within {timeout:.0f}s"
        if proc.returncode != 0:
            return proc.stderr.strip() or f"exit {proc.returncode}"
        return None

    def _copy(self, source, target, dest):
        try:
            proc = self.runner(self.scp_args(source, target, dest), self.connect_timeout_s * 3)
        except subprocess.TimeoutExpired:
            return "copy timed out"
        if proc.returncode != 0:
            return proc.stderr.strip() or f"exit {proc.returncode}"
        return None

    def _remove_workdirs(self, targets):
        """rm -rf the workdir on every target; returns the ones that failed"""
        command = f"rm -rf {shlex.quote(self.workdir)}"
        errors = fan_out(lambda target: self._remote(target, command, self.connect_timeout_s * 3), targets)
        return [target for target, error in zip(targets, errors) if error]

    def _drop_key(self):
        if self._key_dir:
            shutil.rmtree(self._key_dir, ignore_errors=True)
            self._key_dir = None
            if self.generate_key:
                self.identity_file = None

    def _release(self, targets):
        """Undo a provisioning that failed part way"""
        lost = self._remove_workdirs(targets)
        if lost:
            logger.warning("Could not clean up %s after failed provisioning", ', '.join(lost))
        self._drop_key()

    def _launch(self, alloc, req):
        check_script(req.script)
        remote_script = f"{self.workdir.rstrip('/')}/{os.path.basename(req.script)}"
        nodes = alloc.node_handles[:req.point.nodes]
        pending = [target for target in nodes if (alloc.alloc_id, target, req.script) not in self._staged]
        errors = fan_out(lambda target: self._copy(req.script, target, remote_script), pending)
        failed = []
        for target, error in zip(pending, errors):
            if error:
                failed.append(f"{target} ({error})")
            else:
                self._staged.add((alloc.alloc_id, target, req.script))
        if failed:
            raise LaunchFailure(f"could not stage {req.script} on {', '.join(failed)}")

        env = dict(req.env)
        env.update(swarm_env(req.point))
        env['SWARM_HOSTS'] = ','.join(nodes)
        env['SWARM_RANK_HOSTS'] = ','.join(rank_placement(req.point, nodes))
        assignments = ' '.join(f"{name}={shlex.quote(value)}" for name, value in sorted(env.items()))
        command = (
            f"cd {shlex.quote(self.workdir)} && chmod +x {shlex.quote(remote_script)} && "
            f"env {assignments} {shlex.quote(remote_script)}"
        )

        outcome = run_with_timeout(
            self.ssh_args(nodes[0], command),
            req.output_sink,
            req.timeout,
            grace=self.kill_grace_s,
            cancel_event=self.cancel_event,
        )
        if outcome.timed_out or outcome.cancelled:
            self._kill_remote(nodes, remote_script)
        elif outcome.exit_code == SSH_CONNECTION_ERROR:
            logger.warning("ssh to %s exited 255 for point %s", nodes[0], req.point.label)
        return LaunchResult(
            outcome.exit_code, outcome.wall_time, outcome.timed_out, req.output_sink, outcome.cancelled
        )

    def _kill_remote(self, nodes, remote_script):
        command = f"pkill -f {shlex.quote(remote_script)}"
        # pkill exits 1 when nothing matched, so only log
        errors = fan_out(lambda target: self._remote(target, command, self.connect_timeout_s), nodes)
        for target, error in zip(nodes, errors):
            if error:
                logger.debug("pkill on %s: %s", target, error)

    def _teardown(self, alloc):
        lost = self._remove_workdirs(alloc.node_handles)
        self._drop_key()
        if lost:
            raise TeardownPartial(lost)
