"""
Objetos de prueba compartidos por los tests de bundles
"""
import json
import math
from pathlib import Path

from ..bundle import Bundle, BundleConfig
from .. import network

TWO_PI = 2.0 * math.pi


def sho_config(**kwargs):
    """Bundle SHO con k libre sobre [0.5, 2] y ventana de un período"""
    datos = dict(
        system='sho',
        time_window=(0.0, TWO_PI),
        x0_box=((-1.0, 1.0), (-1.0, 1.0)),
        theta_box=((0.5, 2.0),),
    )
    datos.update(kwargs)
    return BundleConfig(**datos)


def pendulum_config(**kwargs):
    datos = dict(
        system='rebound_pendulum',
        time_window=(0.0, 5.0),
        x0_box=((-0.5, 0.5), (-1.0, 1.0)),
        theta_box=((1.0, 5.0), (0.1, 1.0)),
    )
    datos.update(kwargs)
    return BundleConfig(**datos)


def fhn_config(**kwargs):
    datos = dict(
        system='fitzhugh_nagumo',
        time_window=(0.0, 5.0),
        x0_box=((-2.0, 2.0), (-1.0, 1.0)),
        theta_box=((0.5, 1.0),),
        fixed_params={'a': 0.7, 'b': 0.8, 'tau': 12.5},
    )
    datos.update(kwargs)
    return BundleConfig(**datos)


def crtbp_config(**kwargs):
    datos = dict(
        system='crtbp',
        time_window=(0.0, 1.0),
        x0_box=((0.4, 0.6), (0.2, 0.4), (-0.1, 0.1), (-0.1, 0.1)),
    )
    datos.update(kwargs)
    return BundleConfig(**datos)


def spec_for(config, hidden=(8, 8), skip_connections=False):
    return network.NetworkSpec(
        input_dim=config.input_dim,
        hidden=tuple(hidden),
        output_dim=config.system.n,
        skip_connections=skip_connections,
    )


def random_bundle(config, hidden=(8, 8), seed=0, skip_connections=False):
    """Bundle con pesos Glorot (sin entrenar)"""
    return Bundle(config, network.init(spec_for(config, hidden, skip_connections), seed))


def zero_bundle(config, hidden=(8,)):
    return Bundle(config, network.zeros(spec_for(config, hidden)))


def write_config(directory, document, name='config.json'):
    """Escribe una configuración JSON en `directory` y devuelve su ruta"""
    path = Path(directory) / name
    path.write_text(json.dumps(document, indent=2), encoding='utf-8')
    return path


def sho_document(output_dir, **sections):
    """Documento de configuración SHO mínimo; las secciones extra se agregan tal cual"""
    documento = {
        'config_version': 1,
        'system': 'sho',
        'seed': 0,
        'output_dir': str(output_dir),
        'bundle': {
            'time_window': [0.0, TWO_PI],
            'x0_box': [[-1.0, 1.0], [-1.0, 1.0]],
            'theta_box': [[0.5, 2.0]],
            'train_time_margin': 0.01,
        },
    }
    documento.update(sections)
    return documento
