"""
Resumen de un checkpoint o de una configuración:
`odebundle inspect --checkpoint runs/sho/checkpoint.ckpt` o `--config configs/sho_desk.json`
"""
import json
import logging

from django.core.management.base import CommandError
from django.conf import settings

from ... import network
from ...bench import FlopModel, flop_count_bundle
from ..base import EXIT_CONFIG, OdeBundleCommand

logger = logging.getLogger(__name__)


def checkpoint_summary(ckpt, model=None):
    spec = ckpt.params.spec
    a_kind = ckpt.bundle.get('a_kind', 'exp')
    meta = ckpt.training or {}
    return {
        'spec': spec.to_dict(),
        'parameters': ckpt.params.count,
        'flops': flop_count_bundle(spec, a_kind, model),
        'seed': ckpt.seed,
        'bundle': ckpt.bundle,
        'training': {
            clave: meta.get(clave)
            for clave in ('batch', 'total_batches', 'loss', 'smoothed_loss', 'lr', 'parent')
            if clave in meta
        },
    }


def config_summary(config, model=None):
    resumen = {
        'system': config.system.name,
        'n': config.system.n,
        'seed': config.seed,
        'output_dir': str(config.output_dir),
        'sections': sorted(k for k in config.resolved if k not in ('config_version', 'system', 'seed', 'output_dir')),
    }
    if config.bundle is not None:
        resumen['bundle'] = config.bundle.to_dict()
    if config.network is not None:
        resumen['network'] = config.network.to_dict()
        resumen['parameters'] = network.parameter_count(config.network)
        resumen['flops'] = flop_count_bundle(config.network, config.bundle.a_kind, model)
    if config.training is not None:
        resumen['training'] = config.resolved['training']
    return resumen


class Command(OdeBundleCommand):
    help = 'Muestra la arquitectura, conteos y metadatos de un checkpoint o una configuración'
    command_name = 'inspect'
    config_required = False
    writes_manifest = False

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', default=None, help='Ruta a un checkpoint.ckpt')

    def run(self, config, options):
        modelo = FlopModel(transcendental=settings.ODEBUNDLE_FLOP_TRANSCENDENTAL)
        if options.get('checkpoint'):
            resumen = checkpoint_summary(network.load(options['checkpoint']), modelo)
        elif config is not None:
            resumen = config_summary(config, modelo)
        else:
            raise CommandError('Indique --checkpoint o --config', returncode=EXIT_CONFIG)
        self.stdout.write(json.dumps(resumen, sort_keys=True, indent=2))
        return []
