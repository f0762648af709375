"""
CI Environment Module
Reads the CI variables swarmci understands
"""

from dataclasses import dataclass, field
from datetime import datetime, timezone

from utils.errors import MissingRequiredVar
from utils.publisher import PublishTarget

CI_VARIABLES = (
    'DOCKER_USERNAME', 'DOCKER_PASSWORD', 'REPO_TOKEN', 'REPO_URL', 'REPO_BRANCH',
    'BUILD_NUM', 'OS_USERNAME', 'OS_PASSWORD', 'OS_RESERVATION_ID',
)
PUBLISH_REQUIRED = ('REPO_TOKEN', 'REPO_URL', 'REPO_BRANCH', 'BUILD_NUM')
# values scrubbed from every diagnostic
SECRET_VARIABLES = (
    'DOCKER_USERNAME', 'DOCKER_PASSWORD', 'REPO_TOKEN', 'OS_USERNAME', 'OS_PASSWORD', 'OS_RESERVATION_ID',
)


@dataclass(frozen=True)
class CiEnvironment:
    repo_url: str = ''
    repo_branch: str = ''
    build_num: str = ''
    repo_token: str = field(default='', repr=False)
    docker_username: str = field(default='', repr=False)
    docker_password: str = field(default='', repr=False)
    os_username: str = field(default='', repr=False)
    os_password: str = field(default='', repr=False)
    os_reservation_id: str = field(default='', repr=False)
    present: tuple = ()
    missing: tuple = ()
    build_num_defaulted: bool = False

    def secrets(self):
        values = (
            self.repo_token, self.docker_username, self.docker_password,
            self.os_username, self.os_password, self.os_reservation_id,
        )
        return [value for value in values if value]

    def publish_target(self):
        return PublishTarget(
            repo_url=self.repo_url,
            branch=self.repo_branch,
            token=self.repo_token,
            build_num=self.build_num,
        )

    def presence_report(self):
        """Variable name -> 'set' / 'missing'; never values"""
        return {name: ('set' if name in self.present else 'missing') for name in CI_VARIABLES}


def load_ci_environment(env, publish=False, now=None) -> CiEnvironment:
    """Build a CiEnvironment from a name -> value mapping.

    Without publishing nothing is required and BUILD_NUM falls back to
    local-<UTC timestamp>. With publishing, PUBLISH_REQUIRED must be set.
    """
    values = {name: (env.get(name) or '').strip() for name in CI_VARIABLES}
    present = tuple(name for name in CI_VARIABLES if values[name])
    missing = tuple(name for name in CI_VARIABLES if not values[name])

    if publish:
        absent = [name for name in PUBLISH_REQUIRED if not values[name]]
        if absent:
            raise MissingRequiredVar(absent)

    build_num = values['BUILD_NUM']
    defaulted = False
    if not build_num:
        stamp = (now or datetime.now(timezone.utc)).strftime('%Y%m%dT%H%M%SZ')
        build_num = f"local-{stamp}"
        defaulted = True

    return CiEnvironment(
        repo_url=values['REPO_URL'],
        repo_branch=values['REPO_BRANCH'],
        build_num=build_num,
        repo_token=values['REPO_TOKEN'],
        docker_username=values['DOCKER_USERNAME'],
        docker_password=values['DOCKER_PASSWORD'],
        os_username=values['OS_USERNAME'],
        os_password=values['OS_PASSWORD'],
        os_reservation_id=values['OS_RESERVATION_ID'],
        present=present,
        missing=missing,
        build_num_defaulted=defaulted,
    )
