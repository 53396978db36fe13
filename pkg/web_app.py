"""
Interfaz Web para la estimación de profundidad ST-CLSTM
Corre con: python web_app.py

Endpoints (JSON):
    GET  /          descripción del servicio
    POST /evaluate  {"checkpoint", "data", "frames"}          -> MetricReport
    POST /predict   {"checkpoint", "input", "out", "colormap"} -> frames escritos

Los checkpoints y los datasets solo se leen.
"""
from flask import Flask, jsonify, request

from stclstm_depth.checkpoint import load_checkpoint
from stclstm_depth.errors import CheckpointError, DatasetFormatError, DatasetIOError, DepthError
from stclstm_depth.inference import predict
from stclstm_depth.pipeline import evaluate

app = Flask(__name__)
app.config.setdefault("DEFAULT_CHECKPOINT", None)


def _checkpoint_path(data):
    path = data.get('checkpoint') or app.config["DEFAULT_CHECKPOINT"]
    if not path:
        raise DepthError("falta 'checkpoint'")
    return path


@app.route('/')
def index():
    """Descripción del servicio"""
    return jsonify({
        'service': 'stclstm-depth',
        'endpoints': {
            '/evaluate': 'POST {checkpoint, data, frames=16} -> métricas rel, rms, log10, delta1-3, tcc, tmc',
            '/predict': 'POST {checkpoint, input, out, colormap=false} -> número de frames escritos',
        },
    })


@app.route('/evaluate', methods=['POST'])
def evaluate_checkpoint():
    """Evalúa un checkpoint sobre un dataset"""
    data = request.get_json(silent=True) or {}
    try:
        bundle = load_checkpoint(_checkpoint_path(data))
        if 'data' not in data:
            raise DepthError("falta 'data'")
        report = evaluate(bundle, data['data'], int(data.get('frames', 16)))
        return jsonify({'success': True, 'report': report.to_dict()})
    except (DatasetIOError, DatasetFormatError, CheckpointError) as e:
        return jsonify({'success': False, 'error': f'Error de E/S: {str(e)}'})
    except (DepthError, ValueError) as e:
        return jsonify({'success': False, 'error': f'Error: {str(e)}'})


@app.route('/predict', methods=['POST'])
def predict_depth():
    """Predice profundidades y las escribe en el directorio de salida"""
    data = request.get_json(silent=True) or {}
    try:
        bundle = load_checkpoint(_checkpoint_path(data))
        if 'input' not in data or 'out' not in data:
            raise DepthError("faltan 'input' u 'out'")
        n = predict(bundle, data['input'], data['out'], emit_colormap=bool(data.get('colormap', False)))
        return jsonify({'success': True, 'frames': n})
    except (DatasetIOError, DatasetFormatError, CheckpointError) as e:
        return jsonify({'success': False, 'error': f'Error de E/S: {str(e)}'})
    except (DepthError, ValueError) as e:
        return jsonify({'success': False, 'error': f'Error: {str(e)}'})


if __name__ == '__main__':
    print("Iniciando servicio de profundidad ST-CLSTM...")
    print("Abre en: http://127.0.0.1:5000")
    app.run(debug=False, host='127.0.0.1', port=5000)
