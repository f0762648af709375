import json

import pytest

from tests.conftest import beefile_document
from utils.beefile import (
    LINEAR,
    LOG2,
    ScalabilitySpec,
    ScaleMode,
    load_taskspec,
    parse_taskspec,
    retarget,
    serialize_taskspec,
    validate_backend_conf,
)
from utils.errors import MalformedJson, RangeError, SchemaViolation, UnknownBackend

LISTING_CONF = {
    'hosts': [f"node{i:02d}" for i in range(1, 33)],
    'user': 'ci',
}


def listing_document():
    return beefile_document(
        script='run_flecsale.sh', nodes=(1, 32), ppn=(1, 16), mode='log',
        target='ssh-cluster', conf=LISTING_CONF, task_name='flecsale-scaling',
    )


def test_parse_listing_shaped_beefile():
    spec = parse_taskspec(json.dumps(listing_document()))

    assert spec.task_name == 'flecsale-scaling'
    assert spec.exec_target == 'ssh-cluster'
    assert spec.scalability.num_of_nodes == (1, 32)
    assert spec.scalability.proc_per_node == (1, 16)
    assert spec.scalability.mode == ScaleMode.log2()
    assert spec.backend_conf == LISTING_CONF
    assert spec.backend_conf_path == '$.exec_env_conf.ssh-cluster'


def test_flat_exec_env_conf_is_accepted():
    document = listing_document()
    document['exec_env_conf'] = dict(LISTING_CONF)
    spec = parse_taskspec(json.dumps(document))

    assert spec.backend_conf == LISTING_CONF
    assert spec.backend_conf_path == '$.exec_env_conf'


def test_mode_aliases_and_linear_step():
    document = beefile_document(mode='linear', step=2)
    spec = parse_taskspec(json.dumps(document))
    assert spec.scalability.mode == ScaleMode(LINEAR, 2)

    document = beefile_document(mode='log2')
    assert parse_taskspec(json.dumps(document)).scalability.mode.kind == LOG2


def test_unknown_keys_warn_but_parse():
    document = beefile_document()
    document['notes'] = 'nightly'
    document['task_conf']['owner'] = 'perf-team'
    spec = parse_taskspec(json.dumps(document))

    assert spec.extras == {'notes': 'nightly'}
    assert '$.notes: unknown top-level key ignored' in spec.warnings
    assert '$.task_conf.owner: unknown key ignored' in spec.warnings


def test_malformed_json():
    with pytest.raises(MalformedJson):
        parse_taskspec('{"task_conf": ')
    with pytest.raises(MalformedJson):
        parse_taskspec(b'\xff\xfe')


@pytest.mark.parametrize('mutate, message', [
    (lambda d: d.pop('task_conf'), '$.task_conf'),
    (lambda d: d['task_conf'].pop('task_name'), '$.task_conf.task_name'),
    (lambda d: d['task_conf'].update(task_name='has space'), '$.task_conf.task_name'),
    (lambda d: d['task_conf']['scalability_test'].pop('script'), 'scalability_test.script'),
    (lambda d: d['task_conf']['scalability_test'].update(num_of_nodes=[1]), 'num_of_nodes'),
    (lambda d: d['task_conf']['scalability_test'].update(num_of_nodes=[1, 2.5]), 'num_of_nodes'),
    (lambda d: d['task_conf']['scalability_test'].update(mode='cubic'), 'mode'),
    (lambda d: d.update(exec_env_conf=[]), '$.exec_env_conf'),
])
def test_schema_violations_name_the_field(mutate, message):
    document = beefile_document()
    mutate(document)
    with pytest.raises(SchemaViolation) as excinfo:
        parse_taskspec(json.dumps(document))
    assert message in str(excinfo.value)


def test_inverted_range_is_range_error():
    document = beefile_document(nodes=(4, 1))
    with pytest.raises(RangeError):
        parse_taskspec(json.dumps(document))


def test_zero_lower_bound_is_range_error():
    with pytest.raises(RangeError):
        ScalabilitySpec('run.sh', (0, 4), (1, 1))


def test_unknown_backend():
    with pytest.raises(UnknownBackend):
        parse_taskspec(json.dumps(beefile_document(target='bee_aws')))


def test_insufficient_hosts_finding():
    document = beefile_document(target='ssh-cluster', nodes=(1, 32), conf={'hosts': ['a', 'b']})
    findings = validate_backend_conf(parse_taskspec(json.dumps(document)))

    assert [(f.path, f.message) for f in findings] == [
        ('$.exec_env_conf.ssh-cluster.hosts', 'insufficient hosts: 2 configured, 32 required'),
    ]


def test_missing_hosts_finding():
    document = beefile_document(target='ssh-cluster', conf={})
    findings = validate_backend_conf(parse_taskspec(json.dumps(document)))
    assert ('$.exec_env_conf.ssh-cluster.hosts', 'required field absent') in [(f.path, f.message) for f in findings]


def test_serialize_then_parse_is_identity():
    document = listing_document()
    document['task_conf']['scalability_test']['repeats'] = 3
    spec = parse_taskspec(json.dumps(document))
    assert parse_taskspec(json.dumps(serialize_taskspec(spec))) == spec


def test_load_taskspec_from_disk(write_beefile):
    path = write_beefile(beefile_document(task_name='from-disk'))
    assert load_taskspec(path).task_name == 'from-disk'


def test_retarget_uses_keyed_block_or_empty_conf():
    document = listing_document()
    document['exec_env_conf']['simulated'] = {'seed': 3}
    spec = parse_taskspec(json.dumps(document))

    moved = retarget(spec, 'simulated')
    assert moved.exec_target == 'simulated'
    assert moved.backend_conf == {'seed': 3}
    assert validate_backend_conf(moved) == []

    flat = listing_document()
    flat['exec_env_conf'] = dict(LISTING_CONF)
    assert retarget(parse_taskspec(json.dumps(flat)), 'simulated').backend_conf == {}

    with pytest.raises(UnknownBackend):
        retarget(spec, 'bee_os')
