"""
Publisher Module
Commits the result CSV back to the tested repository without retriggering CI
"""

import logging
import os
import shlex
import shutil
import subprocess
from dataclasses import dataclass, field

from utils.errors import AuthFailure, IoFailure, PublishError, PushRejected, SchemaViolation

logger = logging.getLogger(__name__)

RESULTS_SUBDIR = 'scalability-results'
COMMIT_MESSAGE = 'BeeSwarm commit {build_num} [skip ci]'
TESTED_COMMIT_TRAILER = 'Tested-commit'
REDACTED = '***'
FALLBACK_IDENTITY = ('-c', 'user.name=swarmci', '-c', 'user.email=swarmci@localhost')

_AUTH_MARKERS = (
    'authentication failed', 'could not read username', 'could not read password',
    'permission denied', 'invalid username or password', 'returned error: 403',
    'returned error: 401',
)
_REJECT_MARKERS = ('[rejected]', 'non-fast-forward', 'fetch first', 'failed to push some refs')


def redact(text, secrets):
    """Replace every occurrence of every secret with ***; idempotent"""
    secrets = sorted({s for s in secrets if s}, key=len, reverse=True)
    if not text or not secrets:
        return text
    mask = '' if any(secret in REDACTED for secret in secrets) else REDACTED

    while True:
        spans = []
        for secret in secrets:
            start = text.find(secret)
            while start != -1:
                spans.append((start, start + len(secret)))
                start = text.find(secret, start + 1)
        if not spans:
            return text
        spans.sort()
        merged = [list(spans[0])]
        for start, end in spans[1:]:
            if start <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], end)
            else:
                merged.append([start, end])
        pieces, cursor = [], 0
        for start, end in merged:
            pieces.append(text[cursor:start])
            pieces.append(mask)
            cursor = end
        pieces.append(text[cursor:])
        text = ''.join(pieces)


class RedactingFilter(logging.Filter):
    """Scrubs secrets from log records before any handler formats them"""

    def __init__(self, secrets=()):
        super().__init__()
        self.secrets = [s for s in secrets if s]

    def add(self, *secrets):
        self.secrets.extend(s for s in secrets if s and s not in self.secrets)

    def filter(self, record):
        if not self.secrets:
            return True
        message = record.getMessage()
        cleaned = redact(message, self.secrets)
        if cleaned != message:
            record.msg, record.args = cleaned, None
        if record.exc_info and not record.exc_text:
            record.exc_text = logging.Formatter().formatException(record.exc_info)
        if record.exc_text:
            record.exc_text = redact(record.exc_text, self.secrets)
        return True


def install_redaction(secrets, root=None):
    """Attach one RedactingFilter to every handler of the root logger"""
    root = root or logging.getLogger()
    for handler in root.handlers:
        existing = next((f for f in handler.filters if isinstance(f, RedactingFilter)), None)
        if existing:
            existing.add(*secrets)
        else:
            handler.addFilter(RedactingFilter(secrets))


@dataclass(frozen=True)
class PublishTarget:
    repo_url: str
    branch: str
    token: str = field(repr=False)
    build_num: str

    def __post_init__(self):
        if not self.branch:
            raise SchemaViolation("publish target branch must be nonempty")


def commit_message(build_num):
    return COMMIT_MESSAGE.format(build_num=build_num)


def build_remote_url(target: PublishTarget):
    """https://<token>@<repo_url>; local paths and file:// URLs pass through"""
    url = target.repo_url
    if url.startswith('file://') or os.path.isabs(url) or os.path.isdir(url):
        return url
    for scheme in ('https://', 'http://'):
        if url.startswith(scheme):
            url = url[len(scheme):]
    if not target.token:
        return f"https://{url}"
    return f"https://{target.token}@{url}"


def run_git(args, cwd, timeout=300):
    env = dict(os.environ)
    env['GIT_TERMINAL_PROMPT'] = '0'
    return subprocess.run(args, cwd=cwd, capture_output=True, text=True, env=env, timeout=timeout)


class ResultPublisher:
    def __init__(self, repo_dir='.', results_subdir=RESULTS_SUBDIR, git='git', runner=None):
        """Publisher working on the CI checkout at repo_dir"""
        self.repo_dir = repo_dir
        self.results_subdir = results_subdir
        self.git = git
        self.runner = runner or run_git
        self._secrets = []

    def publish_result(self, file, target: PublishTarget) -> str:
        if not os.path.isfile(file):
            raise IoFailure(f"result file {file} does not exist")
        self._secrets = [target.token]

        dest_dir = os.path.join(self.repo_dir, self.results_subdir)
        os.makedirs(dest_dir, exist_ok=True)
        dest = os.path.join(dest_dir, os.path.basename(file))
        if os.path.abspath(dest) != os.path.abspath(file):
            shutil.copyfile(file, dest)
        relative = os.path.relpath(dest, self.repo_dir)

        # HEAD before the results commit is the code the numbers belong to
        tested = self._run(['rev-parse', '--verify', '--quiet', 'HEAD'], check=False).stdout.strip()
        message = ['-m', commit_message(target.build_num)]
        if tested:
            message += ['-m', f"{TESTED_COMMIT_TRAILER}: {tested}"]

        self._run(['add', '--', relative])
        identity = [] if self._has_identity() else list(FALLBACK_IDENTITY)
        self._run(identity + ['commit', '--quiet', '--allow-empty', *message])

        remote = build_remote_url(target)
        refspec = f"HEAD:refs/heads/{target.branch}"
        if not self._push(remote, refspec):
            logger.warning("Push to %s was rejected; rebasing on the remote branch and retrying once", target.branch)
            self._run(['fetch', '--quiet', remote, target.branch])
            rebase = self._run(['rebase', 'FETCH_HEAD'], check=False)
            if rebase.returncode != 0:
                self._run(['rebase', '--abort'], check=False)
                raise PushRejected(self._clean(f"rebase onto {target.branch} failed:\n{rebase.stderr}"))
            if not self._push(remote, refspec):
                raise PushRejected(
                    f"push to {target.branch} rejected twice; if the branch is protected, "
                    "publish to an unprotected results branch instead"
                )

        commit = self._run(['rev-parse', 'HEAD']).stdout.strip()
        logger.info("Published %s as %s on %s", relative, commit[:12], target.branch)
        return commit

    def _has_identity(self):
        proc = self._run(['config', 'user.email'], check=False)
        return proc.returncode == 0 and bool(proc.stdout.strip())

    def _push(self, remote, refspec):
        """True on success, False when rejected as non-fast-forward"""
        proc = self._run(['push', '--quiet', remote, refspec], check=False)
        if proc.returncode == 0:
            return True
        stderr = proc.stderr.lower()
        if any(marker in stderr for marker in _REJECT_MARKERS):
            return False
        if any(marker in stderr for marker in _AUTH_MARKERS):
            raise AuthFailure(self._clean(f"push authentication failed:\n{proc.stderr.strip()}"))
        raise PublishError(self._clean(f"git push failed:\n{proc.stderr.strip()}"))

    def _run(self, args, check=True):
        command = [self.git, *args]
        logger.debug("git: %s", self._clean(shlex.join(command)))
        proc = self.runner(command, self.repo_dir)
        if check and proc.returncode != 0:
            if any(marker in proc.stderr.lower() for marker in _AUTH_MARKERS):
                raise AuthFailure(self._clean(f"git {args[0]} authentication failed:\n{proc.stderr.strip()}"))
            raise PublishError(self._clean(f"git {args[0]} failed:\n{proc.stderr.strip()}"))
        return proc

    def _clean(self, text):
        return redact(text, self._secrets)
