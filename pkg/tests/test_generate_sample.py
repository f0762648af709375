import json
import os

import app
from generate_sample import create_sample


def test_sample_beefile_plans_thirty_points(tmp_path, capsys):
    beefile, script = create_sample(str(tmp_path))

    assert os.access(script, os.X_OK)
    with open(beefile) as f:
        assert json.load(f)['task_conf']['exec_target'] == 'simulated'
    capsys.readouterr()
    assert app.main(['plan', beefile, '--json']) == 0
    assert len(json.loads(capsys.readouterr().out)['points']) == 30
