"""
Base común de las management commands de odebundle: opciones compartidas,
carga de la configuración, mapeo de errores a códigos de salida y manifiesto.
"""
import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from .. import config as run_config
from .. import network
from ..bundle import Bundle, BundleConfig
from ..exceptions import (
    CheckpointError, ConfigError, DataError, DomainError, NumericalFailure, ParameterError,
)
from ..reference import ExactShoSolution, OracleSolution
from ..utils import write_manifest

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4
RESOLVED_NAME = 'config.resolved'


class OdeBundleCommand(BaseCommand):
    """
    Las subclases definen `command_name`, `sections` (secciones opcionales que
    exigen) y `run(config, options)`, que devuelve la lista de archivos escritos.
    """
    command_name = None
    sections = ()
    config_required = True
    writes_manifest = True

    def add_arguments(self, parser):
        parser.add_argument('--config', required=self.config_required, help='Configuración JSON o manifiesto')
        parser.add_argument('--seed', type=int, default=None, help='Reemplaza la semilla de la configuración')
        parser.add_argument('--threads', type=int, default=None, help='Máximo de hilos de trabajo')
        parser.add_argument('--resume', action='store_true', help='Continúa desde el último checkpoint')
        parser.add_argument('--output-dir', default=None, help='Reemplaza el directorio de salida')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def threads(self, options):
        valor = options.get('threads')
        if valor is None:
            valor = settings.ODEBUNDLE_THREADS
        if valor < 1:
            raise CommandError('--threads debe ser >= 1', returncode=EXIT_CONFIG)
        return valor

    def load_config(self, options):
        return run_config.load(
            options['config'], seed=options.get('seed'), output_dir=options.get('output_dir'),
            sections=self.sections,
        )

    def handle(self, *args, **options):
        try:
            config = self.load_config(options) if options.get('config') else None
            salidas = self.run(config, options) or []
            if self.writes_manifest and config is not None:
                resolved = write_resolved(config)
                manifiesto = write_manifest(
                    config.output_dir, self.command_name, config.resolved, config.seed, [*salidas, resolved],
                )
                self.stdout.write(self.style.SUCCESS(f'Listo. Manifiesto: {manifiesto}'))
        except CommandError:
            raise
        except (ConfigError, DataError) as e:
            logger.error(f'Error de configuración: {e}')
            raise CommandError(str(e), returncode=EXIT_CONFIG)
        except (NumericalFailure, DomainError, ParameterError, FloatingPointError) as e:
            logger.error(f'Falla numérica: {e}')
            raise CommandError(str(e), returncode=EXIT_NUMERICAL)
        except (CheckpointError, OSError) as e:
            logger.error(f'Error de E/S: {e}')
            raise CommandError(str(e), returncode=EXIT_IO)

    def run(self, config, options):
        raise NotImplementedError


def write_resolved(config):
    path = Path(config.output_dir) / RESOLVED_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.resolved, sort_keys=True, indent=2) + '\n', encoding='utf-8')
    return path


def checkpoint_path(config, section):
    ruta = section.get('checkpoint') if section else ''
    return Path(ruta) if ruta else Path(config.output_dir) / 'checkpoint.ckpt'


def build_solution(kind, config, section):
    """Bundle entrenado, solución exacta (SHO) u oráculo RK4"""
    if kind == 'bundle':
        ckpt = network.load(checkpoint_path(config, section))
        bundle_config = BundleConfig.from_dict(ckpt.bundle)
        if bundle_config.system.name != config.system.name:
            raise ConfigError(
                'El checkpoint no corresponde al sistema configurado',
                {'config.system': [f'checkpoint: {bundle_config.system.name}, configuración: {config.system.name}']},
            )
        try:
            return Bundle(bundle_config, ckpt.params)
        except ValueError as e:
            raise CheckpointError(f'Checkpoint incompatible con su bundle: {e}') from e
    if config.bundle is None:
        raise ConfigError('Falta la sección bundle', {'bundle': [f'La solución "{kind}" necesita los dominios del bundle']})
    if kind == 'exact':
        try:
            return ExactShoSolution(config.bundle)
        except ValueError as e:
            raise ConfigError(str(e), {'solution': [str(e)]}) from e
    return OracleSolution(config.bundle)
