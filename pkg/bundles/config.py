"""
Carga y resolución de configuraciones de corrida (JSON versionado).

Cada sección se valida con su formulario; los errores se acumulan como
'seccion.campo' y se reportan juntos en un ConfigError.
"""
from dataclasses import dataclass, field
import json
import logging
from pathlib import Path

from django.conf import settings

from . import forms
from .bundle import BundleConfig
from .exceptions import ConfigError
from .network import NetworkSpec
from .odezoo import get_system
from .training import CurriculumSchedule, OptimizerConfig, PlateauConfig, TrainingConfig
from .utils import is_manifest

logger = logging.getLogger(__name__)

SECTION_FORMS = {
    'eval': forms.EvalForm,
    'propagate': forms.PropagateForm,
    'infer': forms.InferForm,
    'bench': forms.BenchForm,
}


@dataclass
class RunConfig:
    """Configuración validada y resuelta"""
    system: object
    seed: int
    output_dir: Path
    network: NetworkSpec = None
    bundle: BundleConfig = None
    training: TrainingConfig = None
    sections: dict = field(default_factory=dict)
    resolved: dict = field(default_factory=dict)
    source: Path = None
    command: str = None


def _errores(form, seccion):
    errores = {}
    for campo, mensajes in form.errors.items():
        clave = seccion if campo == '__all__' else f'{seccion}.{campo}'
        errores[clave] = [str(m) for m in mensajes]
    return errores


def read_document(path):
    """Lee un JSON de configuración o de manifiesto; devuelve (configuración, comando)"""
    path = Path(path)
    try:
        documento = json.loads(path.read_text(encoding='utf-8'))
    except OSError as e:
        raise ConfigError(f'No se pudo leer la configuración {path}: {e}') from e
    except json.JSONDecodeError as e:
        raise ConfigError(f'Configuración con JSON inválido ({path})', {'config': [str(e)]}) from e
    if is_manifest(documento):
        logger.info(f'{path} es un manifiesto; se reutiliza su configuración resuelta')
        return documento.get('config') or {}, documento.get('command')
    if not isinstance(documento, dict):
        raise ConfigError('La configuración debe ser un objeto JSON', {'config': ['se esperaba un objeto']})
    return documento, documento.get('command')


def resolve(document, seed=None, output_dir=None, sections=()):
    """
    Valida el documento y construye los objetos de dominio. `seed` y
    `output_dir` (opciones de línea de comandos) tienen prioridad.
    """
    errores = {}
    cabecera = forms.RunForm(data=document)
    if not cabecera.is_valid():
        raise ConfigError('Configuración inválida', _errores(cabecera, 'config'))
    sistema = get_system(cabecera.cleaned_data['system'])
    semilla = int(seed) if seed is not None else cabecera.cleaned_data['seed']
    salida = output_dir or cabecera.cleaned_data['output_dir'] or str(
        Path(settings.ODEBUNDLE_OUTPUT_ROOT) / sistema.name
    )
    resuelto = {
        'config_version': forms.CONFIG_VERSION,
        'system': sistema.name,
        'seed': semilla,
        'output_dir': str(salida),
    }
    config = RunConfig(system=sistema, seed=semilla, output_dir=Path(salida), resolved=resuelto)

    if 'bundle' in document:
        form = forms.BundleForm(data=document['bundle'] or {}, system=sistema)
        if form.is_valid():
            config.bundle = form.bundle_config
            resuelto['bundle'] = config.bundle.to_dict()
        else:
            errores.update(_errores(form, 'bundle'))

    if 'network' in document:
        form = forms.NetworkForm(data=document['network'] or {})
        if form.is_valid() and config.bundle is not None:
            config.network = NetworkSpec(
                input_dim=config.bundle.input_dim,
                hidden=tuple(form.cleaned_data['hidden']),
                output_dim=sistema.n,
                skip_connections=form.cleaned_data['skip_connections'],
            )
            resuelto['network'] = {'hidden': list(config.network.hidden), 'skip_connections': config.network.skip_connections}
        elif not form.is_valid():
            errores.update(_errores(form, 'network'))

    if 'training' in document:
        form = forms.TrainingForm(data=document['training'] or {})
        if form.is_valid():
            datos = form.cleaned_data
            ventana = datos['smoothing_window'] or settings.ODEBUNDLE_SMOOTHING_WINDOW
            plateau = PlateauConfig(**datos['plateau']) if datos['plateau'] else None
            try:
                config.training = TrainingConfig(
                    optimizer=OptimizerConfig(
                        lr=datos['lr'], plateau=plateau, batch_size=datos['batch_size'],
                        total_batches=datos['total_batches'], seed=semilla,
                        lr_overrides=tuple(tuple(p) for p in datos['lr_overrides']),
                    ),
                    curriculum=CurriculumSchedule(
                        enabled=datos['curriculum'], total_batches=datos['total_batches'],
                        decay=datos['decay'], lam=datos['weight_lambda'],
                    ),
                    checkpoint_every=datos['checkpoint_every'],
                    log_every=datos['log_every'],
                    smoothing_window=ventana,
                )
                resuelto['training'] = {
                    'lr': datos['lr'], 'batch_size': datos['batch_size'], 'total_batches': datos['total_batches'],
                    'curriculum': datos['curriculum'], 'decay': datos['decay'],
                    'weight_lambda': datos['weight_lambda'], 'plateau': datos['plateau'],
                    'lr_overrides': datos['lr_overrides'], 'checkpoint_every': datos['checkpoint_every'],
                    'log_every': datos['log_every'], 'smoothing_window': ventana,
                }
            except ValueError as e:
                errores['training'] = [str(e)]
        else:
            errores.update(_errores(form, 'training'))

    for seccion in sections:
        if seccion not in document:
            errores[seccion] = [f'Falta la sección "{seccion}"']
    for seccion, form_class in SECTION_FORMS.items():
        if seccion not in document:
            continue
        form = form_class(data=document[seccion] or {})
        if form.is_valid():
            config.sections[seccion] = form.cleaned_data
            resuelto[seccion] = form.cleaned_data
        else:
            errores.update(_errores(form, seccion))

    if errores:
        raise ConfigError('Configuración inválida', errores)
    return config


def load(path, seed=None, output_dir=None, sections=()):
    documento, comando = read_document(path)
    config = resolve(documento, seed=seed, output_dir=output_dir, sections=sections)
    config.source = Path(path)
    config.command = comando
    return config
