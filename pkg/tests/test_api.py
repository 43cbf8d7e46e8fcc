import pytest


class TestHealth:

    def test_health(self, client):
        response = client.get('/health')
        assert response.status_code == 200
        assert response.get_json()['status'] == 'ok'


class TestQuantizerEndpoints:

    def test_quantizer(self, client):
        data = client.get('/api/quantizer?B=3&sigma0=2.0').get_json()
        assert data['success']
        assert len(data['quantizer']['thresholds']) == 9
        assert data['quantizer']['thresholds'][0] == '-inf'
        assert data['panter_dite_mse'] == pytest.approx(3 ** 0.5 * 3.141592653589793 / 2 * 4 * 2.0 ** -6)

    def test_bad_bits(self, client):
        response = client.get('/api/quantizer?B=0')
        assert response.status_code == 400
        assert not response.get_json()['success']

    def test_plevels(self, client):
        data = client.get('/api/plevels?B=2&p=inf').get_json()
        assert data['table']['p'] == 'inf'
        assert len(data['table']['plevels']) == 4

    def test_plevels_rejects_fractional_exponent(self, client):
        assert client.get('/api/plevels?B=2&p=2.5').status_code == 400

    def test_epsilon(self, client):
        data = client.get('/api/epsilon?M=1024&B=3&p=4').get_json()
        assert data['epsilon'] == pytest.approx(0.5652, abs=1e-4)
        assert client.get('/api/epsilon?B=4&p=inf').get_json()['epsilon'] == 0.03125

    def test_error_ratio(self, client):
        data = client.get('/api/error-ratio?M=4096&B=4&p=2').get_json()
        assert data['success'] and data['report']['mu'] == pytest.approx(64.0)
        assert client.get('/api/error-ratio?p=inf').status_code == 400


class TestProjectionEndpoint:

    def test_project(self, client):
        data = client.post('/api/project', json={'v': [3.0, 4.0], 'radius': 1.0, 'p': 2}).get_json()
        assert data['projection'] == pytest.approx([0.6, 0.8])

    def test_project_with_check(self, client):
        data = client.post('/api/project', json={'v': [2.0, -1.0, 0.5], 'radius': 0.5, 'p': 4,
                                                 'check': True}).get_json()
        assert data['check']['p'] == '4'
        assert data['check']['oracle_distance'] < 1e-6

    def test_missing_fields(self, client):
        assert client.post('/api/project', json={'v': [1.0]}).status_code == 400

    def test_bad_radius(self, client):
        assert client.post('/api/project', json={'v': [1.0], 'radius': -1}).status_code == 400


class TestSolveEndpoint:

    def test_analytic_instance(self, client):
        payload = {'y': [2.0, 0.0], 'sensing': [[1.0, 0.0], [0.0, 1.0]], 'radius': 1.0,
                   'solver': {'max_iters': 20000, 'rel_change_tol': 1e-10}}
        data = client.post('/api/solve', json=payload).get_json()
        assert data['success'] and data['report']['converged']
        assert data['report']['estimate'] == pytest.approx([1.0, 0.0], abs=1e-4)

    def test_invalid_steps(self, client):
        payload = {'y': [2.0, 0.0], 'sensing': [[1.0, 0.0], [0.0, 1.0]], 'radius': 1.0,
                   'solver': {'step_sigma': 1.0, 'step_tau': 1.0}}
        assert client.post('/api/solve', json=payload).status_code == 400

    def test_missing_fields(self, client):
        response = client.post('/api/solve', json={'y': [1.0]})
        assert response.status_code == 400
        assert 'sensing' in response.get_json()['error']


class TestRunRegistry:

    def test_empty(self, client):
        data = client.get('/api/runs').get_json()
        assert data == {'success': True, 'runs': []}

    def test_unknown_run(self, client):
        assert client.get('/api/runs/42').status_code == 404

    def test_lists_cli_runs(self, client, runner, tmp_path):
        result = runner.invoke(args=['eps-validate', '--M', '4', '--B-list', '3', '--p-list', '2',
                                     '--trials', '1', '--quiet', '--output', str(tmp_path / 'eps')])
        assert result.exit_code == 0, result.output
        runs = client.get('/api/runs').get_json()['runs']
        assert len(runs) == 1 and runs[0]['kind'] == 'EPS_VALIDATE'
        detail = client.get(f"/api/runs/{runs[0]['id']}").get_json()
        assert detail['run']['spec']['M'] == 4
