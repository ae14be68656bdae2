"""
Unit tests for the command-line front end and the verify registry
"""

import gzip
import json

import pandas as pd
import pytest

from cli.main import EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_OK, main
from cli.verify import CHECKS, VerifyContext, verify_all
from core.exceptions import ConfigurationException


def _spec(tmp_path, spec, name='net.json'):
    path = tmp_path / name
    path.write_text(json.dumps(spec))
    return str(path)


def _read_json(path):
    return json.loads(path.read_text())


@pytest.fixture
def z_spec(tmp_path):
    return _spec(tmp_path, {'generator': 'integer-line'})


@pytest.fixture
def out(tmp_path):
    return tmp_path / 'out'


# ============================================================================
# Commands
# ============================================================================

class TestCommands:
    """Run each command on small networks"""

    def test_net_describe(self, z_spec, out, capsys):
        assert main(['net', 'describe', '--net', z_spec, '--out', str(out), '--radii', '3,5']) == EXIT_OK
        assert capsys.readouterr().out.strip() == '{"generator": "integer-line"}'
        info = _read_json(out / 'describe.json')
        assert info['finite'] is False
        assert info['layer_sizes'] == {'3': 2, '5': 2}
        manifest = _read_json(out / 'manifest.json')
        assert [a['file'] for a in manifest['artifacts']] == ['network.json', 'describe.json']
        assert manifest['network']['generator'] == 'integer-line'

    def test_hmeasure_from_vertex(self, z_spec, out):
        for route in ('direct', 'det'):
            args = ['hmeasure', '--net', z_spec, '--set', '0,3', '--from', '1',
                    '--route', route, '--radii', '10', '--out', str(out / route)]
            assert main(args) == EXIT_OK
            frame = pd.read_csv(out / route / 'hmeasure.csv')
            assert frame['weight'].tolist() == pytest.approx([2 / 3, 1 / 3])

    def test_hmeasure_direct_needs_start(self, z_spec, out):
        args = ['hmeasure', '--net', z_spec, '--set', '0,3', '--route', 'direct', '--out', str(out)]
        assert main(args) == EXIT_ERROR
        assert _read_json(out / 'error.json')['field'] == 'from'

    def test_minimax(self, z_spec, out):
        assert main(['minimax', '--net', z_spec, '--radii', '2,4', '--out', str(out)]) == EXIT_OK
        data = _read_json(out / 'minimax.json')
        assert data['limit']['values'] == pytest.approx([0.5, 0.5])
        assert data['limit']['sandwich']['holds'] is True

    def test_green_boundary(self, z_spec, out):
        """Reflecting balls reproduce min(x, y) on the line; the mode is recorded"""
        args = ['green', '--net', z_spec, '--radii', '4,8', '--tol', '1e-9',
                '--boundary', 'reflecting', '--out', str(out)]
        assert main(args) == EXIT_OK
        assert _read_json(out / 'green.json')['boundary'] == 'reflecting'
        frame = pd.read_csv(out / 'green.csv')
        row = frame[(frame['x'] == 2) & (frame['y'] == 3)]
        assert row['g'].iloc[0] == pytest.approx(2.0)

    def test_green_default_is_absorbing(self, z_spec, out):
        assert main(['green', '--net', z_spec, '--radii', '4,8', '--out', str(out)]) == EXIT_OK
        assert _read_json(out / 'green.json')['boundary'] == 'absorbing'

    def test_hsim_compressed(self, z_spec, out):
        args = ['hsim', '--net', z_spec, '--radii', '1,10', '--paths', '20', '--seed', '3',
                '--compress', '--out', str(out)]
        assert main(args) == EXIT_OK
        lines = gzip.decompress((out / 'paths.txt.gz').read_bytes()).decode().splitlines()
        assert len(lines) == 20
        assert all(line.split()[-1] in ('11', '-11') for line in lines)
        assert _read_json(out / 'hsim.json')['simulation']['n_paths'] == 20

    def test_ust_finite(self, tmp_path, out):
        spec = _spec(tmp_path, {
            'generator': 'explicit-edge-list',
            'params': {'edges': [[0, 1], [0, 2], [1, 3], [2, 3]]},
            'conductance': 'per-edge',
        })
        assert main(['ust', '--net', spec, '--samples', '200', '--out', str(out)]) == EXIT_OK
        summary = _read_json(out / 'ust.json')
        assert summary['total_weight'] == pytest.approx(4.0)
        assert summary['chi_square']['trees'] == 4
        assert len(pd.read_csv(out / 'tree.csv')) == 4


# ============================================================================
# Errors
# ============================================================================

class TestErrors:
    """Failed runs write error.json and exit with status 2"""

    def test_missing_net(self, out):
        assert main(['green', '--out', str(out)]) == EXIT_ERROR
        error = _read_json(out / 'error.json')
        assert error['code'] == 'INVALID_CONFIG'
        assert error['command'] == 'green'
        assert not (out / 'manifest.json').exists()

    def test_bad_spec(self, tmp_path, out):
        spec = _spec(tmp_path, {'generator': 'no-such-network'})
        assert main(['net', 'describe', '--net', spec, '--out', str(out)]) == EXIT_ERROR
        assert _read_json(out / 'error.json')['code'] == 'INVALID_SPEC'

    def test_missing_spec_file(self, tmp_path, out):
        args = ['net', 'describe', '--net', str(tmp_path / 'absent.json'), '--out', str(out)]
        assert main(args) == EXIT_ERROR
        error = _read_json(out / 'error.json')
        assert error['code'] == 'INVALID_SPEC'
        assert error['field'] == 'net'

    def test_bad_seed(self, z_spec, out):
        assert main(['green', '--net', z_spec, '--seed', '-1', '--out', str(out)]) == EXIT_ERROR
        assert _read_json(out / 'error.json')['field'] == 'seed'

    def test_unknown_vertex(self, tmp_path, out):
        spec = _spec(tmp_path, {'generator': 'explicit-edge-list', 'params': {'edges': [[0, 1], [1, 2]]}})
        args = ['hmeasure', '--net', spec, '--set', '0,9', '--from', '1', '--route', 'direct', '--out', str(out)]
        assert main(args) == EXIT_ERROR
        assert _read_json(out / 'error.json')['code'] == 'VERTEX_NOT_FOUND'

    def test_unknown_check(self, out):
        assert main(['verify', '--only', 'no-such-check', '--out', str(out)]) == EXIT_ERROR
        error = _read_json(out / 'error.json')
        assert error['code'] == 'INVALID_CONFIG'
        assert error['field'] == 'only'

    def test_unknown_injection(self, out):
        assert main(['verify', '--inject', 'flip-signs', '--out', str(out)]) == EXIT_ERROR
        assert _read_json(out / 'error.json')['field'] == 'inject'


# ============================================================================
# Verify
# ============================================================================

class TestVerify:
    """Test the identity registry"""

    def test_registry(self):
        assert {'z-potential', 'green-symmetry', 'lipschitz', 'det-direct', 'hmeasure-z2',
                'nonuniqueness-z', 'green-identity', 'last-exit', 'reversal', 'martin',
                'minimax', 'escaping-potential', 'wilson', 'phi-lattice'} <= set(CHECKS)

    def test_unknown_name(self):
        with pytest.raises(ConfigurationException):
            verify_all(['nope'], VerifyContext())

    def test_z_potential(self):
        result = verify_all(['z-potential'], VerifyContext())[0]
        assert result.passed
        assert result.detail['killed_level'] == pytest.approx(20.5)

    def test_cli_passes(self, out, capsys):
        assert main(['verify', '--only', 'green-symmetry,det-direct', '--out', str(out)]) == EXIT_OK
        printed = capsys.readouterr().out.splitlines()
        assert printed[0].startswith('PASS green-symmetry')
        assert printed[1].startswith('PASS det-direct')
        assert _read_json(out / 'verify.json')['passed'] is True

    def test_dipoles_pass(self):
        result = verify_all(['dipole-identities'], VerifyContext())[0]
        assert result.passed
        assert result.detail['mode'] == 'reflecting'

    @pytest.mark.slow
    def test_injected_fault_is_caught(self, out):
        args = ['verify', '--only', 'lipschitz', '--inject', 'corrupt-potential', '--out', str(out)]
        assert main(args) == EXIT_CHECK_FAILED
        assert _read_json(out / 'manifest.json')['status'] == 'checks-failed'
        frame = pd.read_csv(out / 'verify.csv')
        assert frame['passed'].tolist() == [False]


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
