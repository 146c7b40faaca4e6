"""
Propagación de incertidumbre: `odebundle propagate --config configs/sho_propagate.json`

Por cada tiempo escribe propagate_t<i>.csv (histograma ponderado) y al final
propagate_summary.json con la masa total, la masa fuera de rango y la media.
"""
import logging
from pathlib import Path

from django.conf import settings

from ...exceptions import ConfigError
from ...forms import DensityForm
from ...uq import GaussianMeasurement, asteroid_distribution, gaussian_density, propagate, uniform_density
from ...utils import write_csv, write_json
from ..base import OdeBundleCommand, build_solution

logger = logging.getLogger(__name__)


def density_from(section, box):
    form = DensityForm(data=section or {'kind': 'uniform'})
    if not form.is_valid():
        raise ConfigError('Densidad inicial inválida', {
            f'propagate.density.{campo}': [str(m) for m in mensajes] for campo, mensajes in form.errors.items()
        })
    datos = form.cleaned_data
    if datos['kind'] == 'uniform':
        return uniform_density(box)
    if len(datos['mean']) != len(box) or len(datos['sigma']) != len(box):
        raise ConfigError('Densidad inicial inválida', {
            'propagate.density': [f'mean y sigma deben tener {len(box)} componentes'],
        })
    return gaussian_density(datos['mean'], datos['sigma'])


def measurements_from(section):
    try:
        return GaussianMeasurement.from_dict(section['r0']), GaussianMeasurement.from_dict(section['r1'])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError('Mediciones del asteroide inválidas', {'propagate.asteroid': [f'se esperan r0 y r1 con t, mean, sigma, components ({e})']}) from e


class Command(OdeBundleCommand):
    help = 'Propaga una distribución de condiciones iniciales con el bundle y escribe histogramas'
    command_name = 'propagate'
    sections = ('propagate',)

    def run(self, config, options):
        seccion = config.sections['propagate']
        solucion = build_solution(seccion['solution'], config, seccion)
        bundle_config = solucion.config
        theta = list(seccion['theta'] or [])
        if len(theta) != len(bundle_config.free_params):
            raise ConfigError('θ incompleto', {
                'propagate.theta': [f'se esperan valores para {list(bundle_config.free_params)}'],
            })
        resolucion = seccion.get('resolution') or settings.ODEBUNDLE_GRID_RESOLUTION
        threads = self.threads(options)
        chunk = settings.ODEBUNDLE_CHUNK_SIZE

        if seccion.get('asteroid'):
            r0, r1 = measurements_from(seccion['asteroid'])
            componentes = tuple(seccion.get('components') or (0, 1))
        else:
            densidad = density_from(seccion.get('density'), bundle_config.x0_box)
            componentes = tuple(seccion.get('components') or range(bundle_config.system.n))
        if any(c < 0 or c >= bundle_config.system.n for c in componentes):
            raise ConfigError('Componentes inválidas', {'propagate.components': [f'índices en [0, {bundle_config.system.n})']})
        bins = seccion.get('bins')
        if bins is not None and len(bins) != len(componentes):
            raise ConfigError('Bins inválidos', {'propagate.bins': ['se espera una especificación por componente']})

        salidas = []
        resumen = []
        for i, t in enumerate(seccion['times']):
            if seccion.get('asteroid'):
                hist = asteroid_distribution(solucion, r0, r1, t, resolution=resolucion, bins=bins, theta=theta,
                                             components=componentes, chunk_size=chunk, threads=threads)
            else:
                hist = propagate(solucion, densidad, t, resolution=resolucion, bins=bins, components=componentes,
                                 theta=theta, chunk_size=chunk, threads=threads)
            ruta = write_csv(Path(config.output_dir) / f'propagate_t{i}.csv', hist.header(), hist.to_rows())
            salidas.append(ruta)
            resumen.append({
                't': t,
                'file': ruta.name,
                'components': list(componentes),
                'total_weight': hist.total_weight,
                'outside_mass': hist.outside_mass,
                'all_outside': hist.all_outside,
                'mean': hist.mean().tolist() if float(hist.weights.sum()) > 0 else None,
            })
            if hist.all_outside:
                self.stdout.write(self.style.WARNING(f't={t}: toda la masa cayó fuera del rango de bins'))
        resumen_path = write_json(Path(config.output_dir) / 'propagate_summary.json', {
            'solution': seccion['solution'], 'resolution': resolucion, 'times': resumen,
        })
        self.stdout.write(f'{len(salidas)} histogramas escritos en {config.output_dir}')
        return [*salidas, resumen_path]
