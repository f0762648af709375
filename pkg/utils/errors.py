"""
Errors Module
Exception hierarchy shared by every swarmci component
"""


class SwarmError(Exception):
    """Base class; exit_code is what the CLI returns for it"""
    exit_code = 1


# Configuration problems (exit 2)

class ConfigError(SwarmError):
    exit_code = 2


class MalformedJson(ConfigError):
    pass


class SchemaViolation(ConfigError):
    pass


class RangeError(ConfigError):
    pass


class UnknownBackend(ConfigError):
    pass


class InvalidBackendConf(ConfigError):
    def __init__(self, findings):
        self.findings = list(findings)
        lines = [f"{f.path}: {f.message}" for f in self.findings]
        super().__init__("invalid backend configuration:\n  " + "\n  ".join(lines))


class MatrixTooLarge(ConfigError):
    pass


class EmptyMatrix(ConfigError):
    pass


class MissingRequiredVar(ConfigError):
    def __init__(self, names):
        self.names = list(names)
        super().__init__("missing required environment variable(s): " + ", ".join(self.names))


# Compute backend

class BackendError(SwarmError):
    pass


class InsufficientCapacity(BackendError):
    pass


class ProvisionTimeout(BackendError):
    pass


class AuthFailure(BackendError):
    pass


class LaunchFailure(BackendError):
    pass


class TeardownPartial(BackendError):
    def __init__(self, hosts):
        self.hosts = list(hosts)
        super().__init__("teardown incomplete, unreachable node(s): " + ", ".join(self.hosts))


class ProvisionFailure(SwarmError):
    """Provisioning failed; no scale point was run"""


# Results

class ResultsError(SwarmError):
    pass


class ParserFailure(ResultsError):
    def __init__(self, message, stderr=""):
        self.stderr = stderr
        super().__init__(f"{message}\n{stderr}".rstrip())


class ParserOutputMalformed(ResultsError):
    pass


class EmptyOutputDir(ResultsError):
    pass


class MissingBaseline(ResultsError):
    pass


class MissingMetric(ResultsError):
    pass


class NonpositiveValue(ResultsError):
    pass


class InsufficientHistory(ResultsError):
    pass


class IoFailure(ResultsError):
    pass


# Publishing

class PublishError(SwarmError):
    pass


class PushRejected(PublishError):
    pass
