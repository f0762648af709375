import json
import os
import stat
import subprocess

import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures')

FAKE_SSH = """#!/usr/bin/env bash
# fake ssh: runs the remote command locally; last two args are target and command
target="${@: -2:1}"
command="${@: -1}"
host="${target#*@}"
echo "$target $command" >> "${FAKE_SSH_LOG:-/dev/null}"
case ",${FAKE_SSH_DENIED}," in *",${host},"*)
    echo "${target}: Permission denied (publickey)." >&2; exit 255;;
esac
case ",${FAKE_SSH_UNREACHABLE}," in *",${host},"*)
    echo "ssh: connect to host ${host} port 22: No route to host" >&2; exit 255;;
esac
exec bash -c "$command"
"""

FAKE_SCP = """#!/usr/bin/env bash
# fake scp: copies locally; last two args are source and target:dest
source="${@: -2:1}"
dest="${@: -1}"
dest="${dest#*:}"
mkdir -p "$(dirname "$dest")"
cp "$source" "$dest"
"""


def make_executable(path, text):
    with open(path, 'w') as f:
        f.write(text)
    os.chmod(path, os.stat(path).st_mode | stat.S_IXUSR)
    return str(path)


def beefile_document(script='run.sh', nodes=(1, 4), ppn=(1, 4), mode='log', target='simulated',
                     conf=None, task_name='demo-task', **extra):
    scalability = {
        'script': str(script),
        'num_of_nodes': list(nodes),
        'proc_per_node': list(ppn),
        'mode': mode,
    }
    scalability.update(extra)
    return {
        'task_conf': {
            'task_name': task_name,
            'exec_target': target,
            'scalability_test': scalability,
        },
        'docker_conf': {'docker_img_tag': ''},
        'exec_env_conf': {target: conf if conf is not None else {}},
    }


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def run_script(tmp_path):
    """Executable that prints the modeled runtime as elapsed=<seconds>"""
    return make_executable(
        tmp_path / 'run.sh',
        '#!/usr/bin/env bash\necho "procs=${SWARM_TOTAL_PROCS}"\necho "elapsed=${SWARM_MODELED_SECONDS:-1}"\n',
    )


@pytest.fixture
def write_beefile(tmp_path):
    def write(document, name='beefile.json'):
        path = tmp_path / name
        path.write_text(json.dumps(document))
        return str(path)
    return write


@pytest.fixture
def fake_ssh(tmp_path, monkeypatch):
    """Fake ssh/scp binaries plus a log of every ssh invocation"""
    bin_dir = tmp_path / 'bin'
    bin_dir.mkdir()
    log = tmp_path / 'ssh.log'
    log.touch()
    monkeypatch.setenv('FAKE_SSH_LOG', str(log))
    monkeypatch.delenv('FAKE_SSH_UNREACHABLE', raising=False)
    monkeypatch.delenv('FAKE_SSH_DENIED', raising=False)
    return {
        'ssh': make_executable(bin_dir / 'ssh', FAKE_SSH),
        'scp': make_executable(bin_dir / 'scp', FAKE_SCP),
        'log': log,
        'workdir': str(tmp_path / 'remote-work'),
    }


def git(*args, cwd):
    return subprocess.run(['git', *args], cwd=cwd, capture_output=True, text=True, check=True)


@pytest.fixture
def git_remote(tmp_path):
    """A bare origin with one commit on main and a working clone of it"""
    origin = tmp_path / 'origin.git'
    work = tmp_path / 'checkout'
    git('init', '--quiet', '--bare', '--initial-branch=main', str(origin), cwd=tmp_path)
    git('clone', '--quiet', str(origin), str(work), cwd=tmp_path)
    git('config', 'user.email', 'dev@example.com', cwd=work)
    git('config', 'user.name', 'Dev', cwd=work)
    (work / 'README').write_text('project\n')
    git('add', 'README', cwd=work)
    git('commit', '--quiet', '-m', 'initial', cwd=work)
    git('push', '--quiet', 'origin', 'HEAD:refs/heads/main', cwd=work)
    return {'origin': str(origin), 'work': str(work)}
