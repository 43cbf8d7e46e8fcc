from flask import Blueprint, jsonify, request

from core.compander_service import CompanderService
from core.distortion_service import DistortionService
from core.exceptions import QCSError
from core.plevel_service import PLevelService
from core.solver_service import SolverService
from models.quantizer import GaussianSource, exponent_to_str, parse_exponent
from models.reconstruction import SolverConfig, WeightedConstraint
from models.run import ExperimentRun

api_bp = Blueprint('api', __name__, url_prefix='/api')


def _source() -> GaussianSource:
    return GaussianSource(request.args.get('sigma0', 1.0, type=float))


def _exponent(default='2'):
    return parse_exponent(request.args.get('p', default))


@api_bp.route('/quantizer', methods=['GET'])
def quantizer():
    """Thresholds and levels of the B-bit companded quantizer"""
    try:
        q = CompanderService.design_quantizer(request.args.get('B', 4, type=int), _source())
        return jsonify({'success': True, 'quantizer': q.to_dict(),
                        'panter_dite_mse': CompanderService.panter_dite_mse(q)})
    except (QCSError, ValueError) as e:
        return jsonify({'success': False, 'error': str(e)}), 400
    except Exception as e:
        return jsonify({'success': False, 'error': str(e)}), 500


@api_bp.route('/plevels', methods=['GET'])
def plevels():
    """p-optimal levels for (B, p, sigma0)"""
    try:
        q = CompanderService.design_quantizer(request.args.get('B', 4, type=int), _source())
        table = PLevelService().plevel_table(_exponent(), q)
        return jsonify({'success': True, 'table': table.to_dict()})
    except (QCSError, ValueError) as e:
        return jsonify({'success': False, 'error': str(e)}), 400
    except Exception as e:
        return jsonify({'success': False, 'error': str(e)}), 500


@api_bp.route('/epsilon', methods=['GET'])
def epsilon():
    """D_pC radius eps_p for (M, B, p, sigma0)"""
    try:
        M = request.args.get('M', 1024, type=int)
        B = request.args.get('B', 4, type=int)
        p = _exponent()
        value = DistortionService.epsilon_p(M, B, p, _source())
        return jsonify({'success': True, 'M': M, 'B': B, 'p': exponent_to_str(p), 'epsilon': value})
    except (QCSError, ValueError) as e:
        return jsonify({'success': False, 'error': str(e)}), 400
    except Exception as e:
        return jsonify({'success': False, 'error': str(e)}), 500


@api_bp.route('/error-ratio', methods=['GET'])
def error_ratio():
    try:
        report = DistortionService.error_ratio_diagnostic(
            request.args.get('M', 1024, type=int),
            request.args.get('B', 4, type=int),
            _exponent(),
            _source(),
        )
        return jsonify({'success': True, 'report': report.to_dict()})
    except (QCSError, ValueError) as e:
        return jsonify({'success': False, 'error': str(e)}), 400
    except Exception as e:
        return jsonify({'success': False, 'error': str(e)}), 500


@api_bp.route('/project', methods=['POST'])
def project():
    """Project a vector onto an lp ball"""
    try:
        data = request.get_json() or {}
        if 'v' not in data or 'radius' not in data:
            return jsonify({'success': False, 'error': 'v and radius are required'}), 400
        p = parse_exponent(data.get('p', 2))
        radius = float(data['radius'])
        z = SolverService.project_lp_ball(data['v'], p, radius)
        payload = {'success': True, 'projection': [float(c) for c in z]}
        if data.get('check'):
            payload['check'] = SolverService.projection_self_check(data['v'], p, radius)
            payload['check']['p'] = exponent_to_str(p)
        return jsonify(payload)
    except (QCSError, ValueError) as e:
        return jsonify({'success': False, 'error': str(e)}), 400
    except Exception as e:
        return jsonify({'success': False, 'error': str(e)}), 500


@api_bp.route('/solve', methods=['POST'])
def solve():
    """Solve one GBPDN instance given observations, matrix, weights and radius"""
    try:
        data = request.get_json() or {}
        for key in ('y', 'sensing', 'radius'):
            if key not in data:
                return jsonify({'success': False, 'error': f'{key} is required'}), 400
        y = data['y']
        weights = data.get('weights') or [1.0] * len(y)
        constraint = WeightedConstraint(p=parse_exponent(data.get('p', 2)), weights=weights,
                                        radius=float(data['radius']), center=y)
        cfg = SolverConfig.from_dict(data.get('solver'))
        report = SolverService.gbpdn_solve(y, data['sensing'], constraint, cfg)
        return jsonify({'success': True, 'report': report.to_dict()})
    except (QCSError, ValueError) as e:
        return jsonify({'success': False, 'error': str(e)}), 400
    except Exception as e:
        return jsonify({'success': False, 'error': str(e)}), 500


@api_bp.route('/runs', methods=['GET'])
def runs():
    """Registered harness runs, newest first"""
    try:
        rows = ExperimentRun.query.order_by(ExperimentRun.created_at.desc()).all()
        return jsonify({'success': True, 'runs': [r.to_dict() for r in rows]})
    except Exception as e:
        return jsonify({'success': False, 'error': str(e)}), 500


@api_bp.route('/runs/<int:run_id>', methods=['GET'])
def run_detail(run_id):
    try:
        run = ExperimentRun.query.get(run_id)
        if not run:
            return jsonify({'success': False, 'error': 'Run not found'}), 404
        return jsonify({'success': True, 'run': run.to_dict()})
    except Exception as e:
        return jsonify({'success': False, 'error': str(e)}), 500
