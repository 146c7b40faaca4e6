"""
Inferencia bayesiana con el bundle como modelo directo:
`odebundle infer --config configs/sho_infer.json`

Salidas: data.csv con los datos usados, posterior_<eje>.csv con cada marginal,
posterior_summary.json (argmax y, si hay verosimilitud de comparación, la
discrepancia normalizada en el argmax) y, con sección map, map_report.json
y map_fit.csv.
"""
import logging
from pathlib import Path

from django.conf import settings
import numpy as np

from ...exceptions import ConfigError, DataError
from ...uq import GaussianMeasurement, bayes_posterior, map_estimate, synthetic_dataset
from ...utils import write_csv, write_json
from ..base import OdeBundleCommand, build_solution

logger = logging.getLogger(__name__)


def _times(spec):
    if isinstance(spec, dict):
        return np.linspace(float(spec['lo']), float(spec['hi']), int(spec['count']))
    return np.asarray(spec, dtype=float)


def dataset_from(section, config, seed):
    """Datos explícitos o generados a partir de la sección synthetic"""
    if section.get('data'):
        try:
            return [GaussianMeasurement.from_dict(d) for d in section['data']]
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError('Datos inválidos', {'infer.data': [f'cada dato requiere t, mean, sigma, components ({e})']}) from e
    sintetico = section['synthetic']
    try:
        generador = build_solution(sintetico.get('generator', 'oracle'), config, section)
        return synthetic_dataset(
            generador,
            np.asarray(sintetico['x0'], dtype=float),
            np.asarray(sintetico.get('theta', []), dtype=float),
            _times(sintetico['times']),
            sintetico['sigma'],
            sintetico.get('components', list(range(config.system.n))),
            seed=int(sintetico.get('seed', seed)),
        )
    except (KeyError, TypeError) as e:
        raise ConfigError('Sección synthetic inválida', {'infer.synthetic': [f'se requieren x0, theta, times y sigma ({e})']}) from e
    except ValueError as e:
        raise ConfigError('Sección synthetic inválida', {'infer.synthetic': [str(e)]}) from e


def data_rows(data):
    for d in data:
        for c, m, s in zip(d.components, d.mean, d.sigma):
            yield [d.t, c, m, s]


def normalized_discrepancy(reference, other):
    """|(ℓ_ref − max ℓ_ref) − (ℓ − max ℓ)| en el argmax de la referencia"""
    idx = reference.argmax_index()
    a = reference.log_density - np.max(reference.log_density)
    b = other.log_density - np.max(other.log_density)
    return float(abs(a[idx] - b[idx]))


class Command(OdeBundleCommand):
    help = 'Posterior en grilla y estimación MAP de condiciones iniciales y parámetros'
    command_name = 'infer'
    sections = ('infer',)

    def run(self, config, options):
        seccion = config.sections['infer']
        if not seccion['grid'] and not seccion.get('map'):
            raise ConfigError('Nada que inferir', {'infer': ['se necesita grid, map o ambos']})
        solucion = build_solution(seccion['solution'], config, seccion)
        datos = dataset_from(seccion, config, config.seed)
        if not datos:
            raise DataError('El conjunto de datos está vacío')
        salida = Path(config.output_dir)
        threads = self.threads(options)
        chunk = settings.ODEBUNDLE_CHUNK_SIZE
        salidas = [write_csv(salida / 'data.csv', ['t', 'component', 'value', 'sigma'], data_rows(datos))]
        resumen = {'solution': seccion['solution'], 'data_points': len(datos)}

        if seccion['grid']:
            posterior = bayes_posterior(solucion, datos, seccion['grid'], fixed=seccion['fixed'],
                                        chunk_size=chunk, threads=threads)
            for nombre in posterior.names:
                salidas.append(write_csv(salida / f'posterior_{nombre}.csv', [nombre, 'probability'],
                                         posterior.marginal_rows(nombre)))
            resumen['argmax'] = posterior.argmax()
            resumen['axes'] = {n: len(a) for n, a in zip(posterior.names, posterior.axes)}
            self.stdout.write(f'Argmax de la posterior: {resumen["argmax"]}')
            if seccion.get('likelihood') and seccion['likelihood'] != seccion['solution']:
                referencia = build_solution(seccion['likelihood'], config, seccion)
                comparada = bayes_posterior(referencia, datos, seccion['grid'], fixed=seccion['fixed'],
                                            chunk_size=chunk, threads=threads)
                resumen['comparison'] = {
                    'likelihood': seccion['likelihood'],
                    'argmax': comparada.argmax(),
                    'normalized_discrepancy': normalized_discrepancy(comparada, posterior),
                }

        if seccion.get('map'):
            resumen['map'] = self.run_map(solucion, datos, seccion, salida, salidas)

        salidas.append(write_json(salida / 'posterior_summary.json', resumen))
        return salidas

    def run_map(self, solucion, datos, seccion, salida, salidas):
        opciones = seccion['map']
        if seccion['solution'] == 'oracle':
            raise ConfigError('MAP no disponible', {'infer.map': ['el MAP necesita una solución diferenciable (bundle o exact)']})
        try:
            resultado = map_estimate(
                solucion, datos, opciones['init'], free=opciones.get('free'),
                max_iter=int(opciones.get('max_iter', 500)), tol=float(opciones.get('tol', 1e-6)),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError('Sección map inválida', {'infer.map': [f'se requiere init con un valor por eje ({e})']}) from e
        salidas.append(write_json(salida / 'map_report.json', resultado.report()))
        etiquetas = solucion.config.system.state_labels
        salidas.append(write_csv(salida / 'map_fit.csv', ['t', *etiquetas], (
            [t, *x] for t, x in zip(resultado.fit_times, resultado.fit_states)
        )))
        self.stdout.write(
            f'MAP: {resultado.values} (log-posterior {resultado.log_posterior:.4f}, '
            f'{resultado.iterations} iteraciones, convergió={resultado.converged})'
        )
        return resultado.report()
