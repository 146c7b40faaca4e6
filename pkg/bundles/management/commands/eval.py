"""
Evalúa un bundle entrenado en puntos de consulta: `odebundle eval --config ...`

Las consultas salen de un CSV (`t,x0…,theta…`), de la lista `points` de la
sección eval o de flags `--point t,x0…,theta…`. Escribe eval.csv.
"""
import logging
from pathlib import Path

from django.conf import settings
import numpy as np

from ...exceptions import DataError
from ...utils import chunked_map, read_csv, write_csv
from ..base import OdeBundleCommand, build_solution

logger = logging.getLogger(__name__)


def eval_header(config):
    labels = config.system.state_labels
    return [
        't',
        *[f'x0_{l}' for l in labels],
        *[f'theta_{p}' for p in config.free_params],
        *[f'xhat_{l}' for l in labels],
        'residual_norm',
        'extrapolated',
    ]


def parse_queries(rows, width):
    """Arreglo (N, width) de consultas; DataError si alguna fila no encaja"""
    consultas = []
    for i, fila in enumerate(rows):
        if isinstance(fila, str):
            fila = fila.split(',')
        if len(fila) != width:
            raise DataError(f'La consulta {i + 1} tiene {len(fila)} valores; se esperaban {width} (t, x₀, θ libres)')
        try:
            consultas.append([float(v) for v in fila])
        except (TypeError, ValueError):
            raise DataError(f'Valores no numéricos en la consulta {i + 1}: {fila}')
    if not consultas:
        raise DataError('No hay puntos de consulta')
    return np.array(consultas)


def evaluate_queries(bundle, queries, chunk_size, threads=1):
    """(x̂, ‖ε‖, extrapolado) por consulta, en tramos"""
    n = bundle.system.n

    def tramo(s):
        q = queries[s]
        t, x0, theta = q[:, 0], q[:, 1:1 + n], q[:, 1 + n:]
        estado, fuera = bundle.evaluate_flagged(t, x0, theta)
        residuo = np.linalg.norm(bundle.residual(t, x0, theta), axis=-1)
        return estado, residuo, fuera

    partes = chunked_map(tramo, len(queries), chunk_size, threads)
    return (
        np.concatenate([p[0] for p in partes]),
        np.concatenate([p[1] for p in partes]),
        np.concatenate([p[2] for p in partes]),
    )


class Command(OdeBundleCommand):
    help = 'Evalúa x̂ y el residuo de un bundle entrenado; escribe eval.csv'
    command_name = 'eval'

    def add_command_arguments(self, parser):
        parser.add_argument('--queries', default=None, help='CSV con columnas t,x0…,theta…')
        parser.add_argument('--point', action='append', default=[], help='Consulta t,x0…,theta… (repetible)')

    def run(self, config, options):
        seccion = config.sections.get('eval', {})
        bundle = build_solution('bundle', config, seccion)
        ancho = bundle.config.input_dim
        ruta = options.get('queries') or seccion.get('queries')
        if options.get('point'):
            filas = options['point']
        elif ruta:
            try:
                _, filas = read_csv(ruta)
            except OSError as e:
                raise DataError(f'No se pudo leer el archivo de consultas {ruta}: {e}') from e
        else:
            filas = seccion.get('points') or []
        consultas = parse_queries(filas, ancho)
        # el manifiesto debe bastar para repetir la evaluación
        resuelto = config.resolved.setdefault('eval', {})
        if options.get('point'):
            resuelto.update(points=consultas.tolist(), queries='')
        elif ruta:
            resuelto['queries'] = str(ruta)

        estados, residuos, fuera = evaluate_queries(
            bundle, consultas, settings.ODEBUNDLE_CHUNK_SIZE, self.threads(options),
        )
        salida = Path(config.output_dir) / 'eval.csv'
        write_csv(salida, eval_header(bundle.config), (
            [*q, *x, r, bool(f)] for q, x, r, f in zip(consultas, estados, residuos, fuera)
        ))
        if np.any(fuera):
            self.stdout.write(self.style.WARNING(f'{int(np.sum(fuera))} consultas fuera del dominio entrenado'))
        self.stdout.write(f'{len(consultas)} consultas evaluadas -> {salida}')
        return [salida]
