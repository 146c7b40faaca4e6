"""
Estudio de eficiencia SHO: `odebundle bench --config configs/sho_bench.json`
"""
import logging

from django.conf import settings

from ...bench import FlopModel, run_bench
from ...exceptions import ConfigError
from ..base import OdeBundleCommand

logger = logging.getLogger(__name__)


class Command(OdeBundleCommand):
    help = 'Compara red, RK4, Euler y tablas de consulta; escribe flops_report.csv y memory_report.csv'
    command_name = 'bench'
    sections = ('bench',)

    def run(self, config, options):
        seccion = config.sections['bench']
        modelo = FlopModel(transcendental=settings.ODEBUNDLE_FLOP_TRANSCENDENTAL)
        config.resolved['flop_model'] = modelo.version
        try:
            rutas = run_bench(
                config.output_dir,
                checkpoints=seccion['checkpoints'],
                rk4_steps=seccion['rk4_steps'],
                euler_steps=seccion['euler_steps'],
                table_divisions=seccion['table_divisions'],
                table_mode=seccion['table_mode'],
                samples=seccion['samples'],
                seed=config.seed,
                model=modelo,
                table_h=seccion['table_h'],
                threads=self.threads(options),
            )
        except ValueError as e:
            raise ConfigError(str(e), {'bench': [str(e)]}) from e
        for ruta in rutas:
            self.stdout.write(f'Reporte: {ruta}')
        return list(rutas)
