from flask import Flask, request, jsonify
from flask_cors import CORS
import logging
import os
import traceback

from . import __version__
from .cli import cmd_doctor, cmd_evolve, cmd_kmatrix, cmd_rates, cmd_steady, cmd_superop, cmd_sweep
from .config import ScenarioConfig
from .errors import VRelaxError
from .operators import get_memory_info

logger = logging.getLogger(__name__)

COMMANDS = {
    'kmatrix': cmd_kmatrix,
    'rates': cmd_rates,
    'superop': cmd_superop,
    'evolve': cmd_evolve,
    'steady': cmd_steady,
    'sweep': cmd_sweep,
}


def _error(e, status):
    return jsonify({
        'success': False,
        'error': str(e),
        'error_type': type(e).__name__,
    }), status


def _run_command(name):
    data = request.get_json(silent=True)
    if not data:
        return jsonify({
            'success': False,
            'error': 'No config provided',
            'error_type': 'ConfigError',
        }), 400
    try:
        config = ScenarioConfig.from_dict(data)
        workers = int(os.environ.get('VRELAX_WORKERS', 1))
        if workers > 1 and config.run['workers'] == 1:
            config = config.with_values('run', workers=workers)
        memory = get_memory_info()
        logger.info(f"📥 {name}: process={config.run['process']}, Memory: {memory['rss_mb']:.1f}MB")
        text, summary = COMMANDS[name](config)
        logger.info(f"✅ {name} done: {len(text):,} bytes of CSV")
        return jsonify({'success': True, 'command': name, 'summary': summary, 'csv': text})
    except VRelaxError as e:
        logger.error(f"❌ {name} failed: {e}")
        return _error(e, e.http_status)
    except Exception as e:
        logger.error(f"❌ {name} crashed: {e}")
        logger.error(traceback.format_exc())
        return _error(e, 500)


def create_app():
    app = Flask(__name__)
    CORS(app, resources={
        r"/*": {
            "origins": "*",
            "methods": ["GET", "POST", "OPTIONS"],
            "allow_headers": ["Content-Type", "Authorization"],
        }
    })

    @app.route('/')
    def health_check():
        return jsonify({
            'service': 'vrelax V-type relaxation operators',
            'status': 'healthy',
            'version': __version__,
            'commands': sorted(COMMANDS) + ['doctor'],
            'memory': get_memory_info(),
        })

    @app.route('/doctor')
    def doctor():
        checks = cmd_doctor()
        failed = [c.name for c in checks if c.status == 'FAIL']
        return jsonify({
            'success': not failed,
            'checks': [{'name': c.name, 'status': c.status, 'detail': c.detail} for c in checks],
            'failed': failed,
        })

    for name in COMMANDS:
        app.add_url_rule(f'/{name}', name, lambda name=name: _run_command(name), methods=['POST'])

    return app
