"""
Sample Generator Script
Writes a beefile and run script to try swarmci locally on the simulated backend
"""

import json
import os
import stat

SAMPLE_SCRIPT = """#!/usr/bin/env bash
# One scale point. swarmci exports SWARM_NODES, SWARM_PPN, SWARM_TOTAL_PROCS and SWARM_HOSTS;
# on the simulated backend SWARM_MODELED_SECONDS is the modeled runtime.
echo "running ${SWARM_TOTAL_PROCS} procs on ${SWARM_NODES} node(s): ${SWARM_HOSTS}"
echo "elapsed=${SWARM_MODELED_SECONDS:-0}"
"""


def sample_beefile(script='sample_workload.sh'):
    return {
        'task_conf': {
            'task_name': 'sample-scaling',
            'exec_target': 'simulated',
            'scalability_test': {
                'script': script,
                'num_of_nodes': [1, 32],
                'proc_per_node': [1, 16],
                'mode': 'log',
            },
        },
        'docker_conf': {
            'docker_img_tag': '',
            'docker_username': '',
            'docker_shared_dir': '/shared',
        },
        'exec_env_conf': {
            'simulated': {
                'seed': 7,
                'workload': {'t1_s': 640.0, 'serial_fraction': 0.02, 'internode_penalty': 0.05},
            },
            'ssh-cluster': {
                'hosts': [f"node{i:02d}.cluster.local" for i in range(1, 33)],
                'user': 'ci',
                'generate_key': True,
            },
        },
    }


def create_sample(directory='.'):
    script_path = os.path.join(directory, 'sample_workload.sh')
    with open(script_path, 'w') as f:
        f.write(SAMPLE_SCRIPT)
    os.chmod(script_path, os.stat(script_path).st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)

    beefile_path = os.path.join(directory, 'beefile.json')
    with open(beefile_path, 'w') as f:
        json.dump(sample_beefile(), f, indent=2)
        f.write('\n')
    print(f"Sample beefile '{beefile_path}' and run script '{script_path}' created successfully.")
    return beefile_path, script_path


if __name__ == '__main__':
    create_sample()
