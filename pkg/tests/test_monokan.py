import json
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest
from click.testing import CliRunner

from mono_kan import __version__
from mono_kan.main import EXIT_DIVERGED, EXIT_ERROR, EXIT_FAIL, monokan
from mono_kan.network import save_model


@pytest.fixture
def line_data(tmp_path):
    """Descriptor and CSV of y = 2x + a small free wiggle in z."""
    x = np.linspace(-3.0, 3.0, 60)
    z = np.cos(7.0 * x)
    rows = ['x,z,y'] + [f'{a:.17g},{b:.17g},{2 * a + 0.1 * b:.17g}' for a, b in zip(x, z)]
    (tmp_path / 'line.csv').write_text('\n'.join(rows) + '\n')
    descriptor = tmp_path / 'line.yml'
    descriptor.write_text(
        'name: line\n'
        'path: line.csv\n'
        'target: y\n'
        'directions:\n'
        '  x: increasing\n'
        'seed: 1\n'
    )
    config = tmp_path / 'train.yml'
    config.write_text('max_epochs: 15\nhidden: [2]\nknots: 4\n')
    return descriptor, config


def invoke(*args):
    runner = CliRunner()
    return runner.invoke(monokan, [str(a) for a in args])


def json_output(result):
    return json.loads(result.stdout[result.stdout.index('{'):])


def test_version():
    assert __version__


def test_monokan_version():
    result = invoke('--version')
    assert result.exit_code == 0
    assert __version__ in result.output


def test_train_writes_a_certified_model(line_data, tmp_path):
    descriptor, config = line_data
    out = tmp_path / 'model.json'
    result = invoke('train', '--data', descriptor, '--config', config, '--out', out)
    assert result.exit_code == 0, result.output
    assert 'Certificate: PASS' in result.output
    assert 'Trained 15 epochs' in result.output
    assert json.loads(out.read_text())['schema'] == 'monokan-model-v1'
    log_lines = (tmp_path / 'model.log.ndjson').read_text().splitlines()
    assert len(log_lines) == 15
    assert json.loads(log_lines[0])['epoch'] == 1


def test_train_json_and_eval_agree(line_data, tmp_path):
    descriptor, config = line_data
    out = tmp_path / 'model.json'
    trained = invoke('train', '-d', descriptor, '-c', config, '-o', out, '--seed', 3, '--json')
    assert trained.exit_code == 0, trained.output
    summary = json_output(trained)
    assert summary['verdict'] == 'PASS'
    assert summary['epochs'] == 15

    evaluated = invoke('eval', '--model', out, '--data', descriptor, '--json')
    assert evaluated.exit_code == 0, evaluated.output
    results = json.loads(evaluated.stdout)
    assert set(results) == {'train', 'val', 'test'}
    assert results['test'] == summary['test']


def test_train_reports_config_line(line_data, resources, tmp_path):
    descriptor, _ = line_data
    result = invoke(
        'train', '-d', descriptor, '-c', resources / 'malformed_config.yml', '-o', tmp_path / 'm.json'
    )
    assert result.exit_code == EXIT_ERROR
    assert 'malformed_config.yml:3' in result.output
    assert not (tmp_path / 'm.json').exists()


def test_train_divergence_exit_code(line_data, tmp_path):
    descriptor, config = line_data
    config.write_text('max_epochs: 5\nlearning_rate: 1.0e+300\n')
    result = invoke('train', '-d', descriptor, '-c', config, '-o', tmp_path / 'm.json')
    assert result.exit_code == EXIT_DIVERGED
    assert 'Training diverged' in result.output


def test_train_missing_dataset(tmp_path):
    result = invoke('train', '-d', tmp_path / 'absent.yml', '-o', tmp_path / 'm.json')
    assert result.exit_code == EXIT_ERROR
    assert 'absent.yml' in result.output


def test_certify_pass_and_fail(identity_model, random_model, tmp_path):
    good = tmp_path / 'good.json'
    bad = tmp_path / 'bad.json'
    save_model(identity_model(), good)
    save_model(random_model(1, widths=(3, 4, 1)), bad)

    passed = invoke('certify', '--model', good)
    assert passed.exit_code == 0
    assert 'PASS' in passed.output

    failed = invoke('certify', '-m', bad, '--json')
    assert failed.exit_code == EXIT_FAIL
    document = json.loads(failed.stdout)
    assert document['verdict'] == 'FAIL'
    assert document['violations']


def test_certify_missing_model(tmp_path):
    result = invoke('certify', '--model', tmp_path / 'absent.json')
    assert result.exit_code == EXIT_ERROR
    assert 'not found' in result.output


def test_certify_non_object_model(tmp_path):
    path = tmp_path / 'list.json'
    path.write_text('[]')
    result = invoke('certify', '--model', path)
    assert result.exit_code == EXIT_ERROR
    assert 'JSON object' in result.output


def test_falsify(identity_model, tmp_path):
    good = tmp_path / 'good.json'
    save_model(identity_model(), good)
    result = invoke('falsify', '-m', good, '--pairs', 1000)
    assert result.exit_code == 0
    assert 'Violations: 0 in 1,000 pairs' in result.output

    reversed_model = identity_model()
    reversed_model.layers[0].omega_phi[...] = -1.0
    bad = tmp_path / 'bad.json'
    save_model(reversed_model, bad)
    result = invoke('falsify', '-m', bad, '-n', 1000, '--json')
    assert result.exit_code == EXIT_FAIL
    document = json.loads(result.stdout)
    assert document['violations'] > 0
    assert document['pairs'] == 1000


def test_export_splines(identity_model, tmp_path):
    model_path = tmp_path / 'model.json'
    save_model(identity_model(widths=(2, 1)), model_path)
    result = invoke('export-splines', '-m', model_path, '-o', tmp_path / 'out', '--svg')
    assert result.exit_code == 0, result.output
    assert 'Written 4 files' in result.output
    assert (tmp_path / 'out' / 'index.csv').is_file()


def test_eval_feature_mismatch(identity_model, line_data, tmp_path):
    descriptor, _ = line_data
    model_path = tmp_path / 'model.json'
    save_model(identity_model(), model_path)
    result = invoke('eval', '-m', model_path, '-d', descriptor)
    assert result.exit_code == EXIT_ERROR
    assert 'model expects 1' in result.output


def test_fetch_data(tmp_path):
    target = tmp_path / 'auto-mpg.data'
    with patch('mono_kan.main.fetch', return_value=[target]) as fetch:
        result = invoke('fetch-data', 'auto-mpg', '--out', tmp_path)
    assert result.exit_code == 0, result.output
    assert f'Downloaded {target}' in result.output
    [specs, out] = fetch.call_args.args
    assert [spec.name for spec in specs] == ['auto-mpg']
    assert Path(out) == tmp_path


def test_fetch_data_unknown_name(tmp_path):
    result = invoke('fetch-data', 'iris', '--out', tmp_path)
    assert result.exit_code == EXIT_ERROR
