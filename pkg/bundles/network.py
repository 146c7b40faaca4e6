"""
Red densa N(t; x₀, θ; w): tanh en capas ocultas, salida lineal y variante
opcional con conexiones de salto (la entrada cruda se concatena a la salida
de cada capa oculta).
"""
from dataclasses import dataclass, field
import hashlib
import json
import logging
import math
import os
from pathlib import Path
import tempfile

import numpy as np

from . import diffcore as dc
from .exceptions import CheckpointError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'odebundle-checkpoint'
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Arquitectura: anchos, activación y conexiones de salto"""
    input_dim: int
    hidden: tuple
    output_dim: int
    skip_connections: bool = False
    activation: str = 'tanh'

    def __post_init__(self):
        object.__setattr__(self, 'hidden', tuple(int(h) for h in self.hidden))
        anchos = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(w) < 1 for w in anchos):
            raise ValueError(f'Todos los anchos deben ser >= 1: {anchos}')
        if self.activation != 'tanh':
            raise ValueError(f'Activación no soportada: {self.activation}')

    def layer_shapes(self):
        """(salidas, entradas) de cada capa, incluida la de salida"""
        shapes = []
        fan_in = self.input_dim
        for width in (*self.hidden, self.output_dim):
            shapes.append((width, fan_in))
            fan_in = width + (self.input_dim if self.skip_connections else 0)
        return shapes

    def to_dict(self):
        return {
            'input_dim': self.input_dim,
            'hidden': list(self.hidden),
            'output_dim': self.output_dim,
            'skip_connections': self.skip_connections,
            'activation': self.activation,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            input_dim=int(data['input_dim']),
            hidden=tuple(data['hidden']),
            output_dim=int(data['output_dim']),
            skip_connections=bool(data.get('skip_connections', False)),
            activation=data.get('activation', 'tanh'),
        )


def parameter_count(spec):
    """Cantidad total de pesos y sesgos entrenables"""
    return sum(out * inp + out for out, inp in spec.layer_shapes())


@dataclass
class NetworkParams:
    """Pesos (salidas×entradas) y sesgos por capa"""
    spec: NetworkSpec
    weights: list
    biases: list

    def flatten(self):
        """Orden canónico: capa por capa, pesos por filas y luego sesgos"""
        partes = []
        for w, b in zip(self.weights, self.biases):
            partes.append(np.asarray(w, dtype=float).ravel())
            partes.append(np.asarray(b, dtype=float).ravel())
        return np.concatenate(partes) if partes else np.zeros(0)

    @classmethod
    def from_flat(cls, spec, flat):
        flat = np.asarray(flat, dtype=float)
        esperado = parameter_count(spec)
        if flat.shape != (esperado,):
            raise ValueError(f'Se esperaban {esperado} parámetros, llegaron {flat.size}')
        weights, biases = [], []
        offset = 0
        for out, inp in spec.layer_shapes():
            weights.append(flat[offset:offset + out * inp].reshape(out, inp).copy())
            offset += out * inp
            biases.append(flat[offset:offset + out].copy())
            offset += out
        return cls(spec, weights, biases)

    @property
    def count(self):
        return parameter_count(self.spec)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.flatten())))


def init(spec, seed):
    """Glorot uniforme para los pesos, sesgos en cero; determinista por semilla"""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for out, inp in spec.layer_shapes():
        limite = math.sqrt(6.0 / (inp + out))
        weights.append(rng.uniform(-limite, limite, size=(out, inp)))
        biases.append(np.zeros(out))
    return NetworkParams(spec, weights, biases)


def zeros(spec):
    return NetworkParams.from_flat(spec, np.zeros(parameter_count(spec)))


def forward(params, inputs):
    """Evaluación numpy sin cinta: (..., input_dim) -> (..., output_dim)"""
    x = np.asarray(inputs, dtype=float)
    spec = params.spec
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f'Dimensión de entrada {x.shape[-1]}, la red espera {spec.input_dim}')
    h = x
    ultima = len(params.weights) - 1
    for capa, (w, b) in enumerate(zip(params.weights, params.biases)):
        z_in = np.concatenate([h, x], axis=-1) if capa > 0 and spec.skip_connections else h
        z = z_in @ w.T + b
        h = np.tanh(z) if capa < ultima else z
    return h


def register_parameters(params, tape, offset=0):
    """Hojas de la cinta para cada parámetro, con índice canónico (+offset)"""
    return [tape.leaf(v, index=offset + k) for k, v in enumerate(params.flatten())]


def record_forward(params, tape, inputs, leaves=None):
    """
    Graba N(entradas) en la cinta neurona por neurona.
    `leaves` son las hojas de register_parameters; sin ellas los pesos van como constantes.
    """
    spec = params.spec
    inputs = list(inputs)
    if len(inputs) != spec.input_dim:
        raise ValueError(f'Dimensión de entrada {len(inputs)}, la red espera {spec.input_dim}')
    flat = leaves if leaves is not None else [float(v) for v in params.flatten()]
    h = inputs
    offset = 0
    capas = spec.layer_shapes()
    for capa, (out, inp) in enumerate(capas):
        z_in = h + inputs if capa > 0 and spec.skip_connections else h
        w = flat[offset:offset + out * inp]
        offset += out * inp
        b = flat[offset:offset + out]
        offset += out
        salida = []
        for i in range(out):
            z = dc.dot(w[i * inp:(i + 1) * inp], z_in, b[i])
            salida.append(dc.tanh(z) if capa < len(capas) - 1 else z)
        h = salida
    return h


# ==================== CHECKPOINTS ====================

@dataclass
class Checkpoint:
    """Contenido completo de un archivo de checkpoint"""
    params: NetworkParams
    seed: int = 0
    bundle: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)


def _fmt(value):
    return format(float(value), '.17g')


def encode_array(values):
    return [_fmt(v) for v in np.asarray(values, dtype=float).ravel()]


def decode_array(values):
    return np.array([float(v) for v in values], dtype=float)


def _digest(encoded):
    return hashlib.sha256('\n'.join(encoded).encode('ascii')).hexdigest()


def checkpoint_text(params, seed=0, bundle=None, training=None):
    """Serializa el checkpoint a texto JSON determinista"""
    encoded = encode_array(params.flatten())
    documento = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'spec': params.spec.to_dict(),
        'seed': int(seed),
        'bundle': bundle or {},
        'parameters': encoded,
        'sha256': _digest(encoded),
        'training': training or {},
    }
    return json.dumps(documento, sort_keys=True, indent=1) + '\n'


def parameters_digest(params):
    """SHA-256 del bloque de parámetros tal como se escribe en el checkpoint"""
    return _digest(encode_array(params.flatten()))


def save(params, path, seed=0, bundle=None, training=None):
    """Escritura atómica: archivo temporal en el mismo directorio y luego rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    texto = checkpoint_text(params, seed=seed, bundle=bundle, training=training)
    fd, tmp = tempfile.mkstemp(prefix=path.name, suffix='.tmp', dir=path.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8') as fh:
            fh.write(texto)
        os.replace(tmp, path)
    except OSError as e:
        logger.error(f'Error escribiendo checkpoint {path}: {e}')
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load(path):
    """Lee y valida un checkpoint; cualquier defecto levanta CheckpointError"""
    path = Path(path)
    try:
        texto = path.read_text(encoding='utf-8')
    except OSError as e:
        raise CheckpointError(f'No se pudo leer el checkpoint {path}: {e}') from e
    try:
        documento = json.loads(texto)
    except json.JSONDecodeError as e:
        raise CheckpointError(f'Checkpoint malformado o truncado ({path}): {e}') from e
    if not isinstance(documento, dict) or documento.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointError(f'{path} no es un checkpoint de odebundle')
    if documento.get('version') != CHECKPOINT_VERSION:
        raise CheckpointError(f'Versión de checkpoint no soportada: {documento.get("version")}')
    try:
        spec = NetworkSpec.from_dict(documento['spec'])
        encoded = list(documento['parameters'])
        if _digest(encoded) != documento['sha256']:
            raise CheckpointError(f'Suma de verificación inválida en {path}')
        flat = decode_array(encoded)
        params = NetworkParams.from_flat(spec, flat)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f'Checkpoint inconsistente con su especificación ({path}): {e}') from e
    if not params.is_finite():
        raise CheckpointError(f'El checkpoint {path} contiene parámetros no finitos')
    return Checkpoint(
        params=params,
        seed=int(documento.get('seed', 0)),
        bundle=documento.get('bundle') or {},
        training=documento.get('training') or {},
    )
