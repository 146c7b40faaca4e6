"""
Estudio de eficiencia sobre el oscilador armónico: precisión contra FLOPs
(red, RK4, Euler) y precisión contra memoria (red, tablas de consulta).
"""
from dataclasses import dataclass
import logging
import math

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import network
from .bundle import Bundle, BundleConfig
from .exceptions import DomainError
from .odezoo import get_system
from .reference import EULER_COMBINATION_FLOPS, RK4_COMBINATION_FLOPS, absolute_error, integrate
from .utils import chunked_map, write_csv

logger = logging.getLogger(__name__)

FLOP_MODEL_VERSION = 'flopmodel-1'
REPORT_COLUMNS = ('contender', 'flops', 'bytes', 'mean_abs_err', 'p5', 'p95')
BYTES_PER_FLOAT = 8
# (x₀, v₀, k, t)
BENCH_DOMAIN = ((-1.0, 1.0), (-1.0, 1.0), (0.5, 2.0), (0.0, 2.0 * math.pi))
TABLE_MODES = ('nearest', 'multilinear')


@dataclass(frozen=True)
class FlopModel:
    """Costo por operación elemental; las trascendentes (exp, tanh, sin, cos, sqrt) son configurables"""
    add: int = 1
    mul: int = 1
    div: int = 1
    transcendental: int = 4

    def __post_init__(self):
        if min(self.add, self.mul, self.div, self.transcendental) < 1:
            raise ValueError('Todos los costos del modelo de FLOPs deben ser >= 1')

    @property
    def version(self):
        return f'{FLOP_MODEL_VERSION}(trans={self.transcendental})'

    def dense_layer(self, fan_in, fan_out, activation=True):
        costo = 2 * fan_in * fan_out + fan_out
        if activation:
            costo += fan_out * self.transcendental
        return costo

    def rk4_step(self, rhs_cost, n):
        return 4 * rhs_cost + RK4_COMBINATION_FLOPS * n

    def euler_step(self, rhs_cost, n):
        return rhs_cost + EULER_COMBINATION_FLOPS * n


def flop_count_network(spec, model=None):
    """Suma de los costos por capa: ocultas con tanh, salida lineal"""
    model = model or FlopModel()
    capas = spec.layer_shapes()
    return sum(
        model.dense_layer(inp, out, activation=i < len(capas) - 1)
        for i, (out, inp) in enumerate(capas)
    )


def flop_count_bundle(spec, a_kind='exp', model=None):
    """Red + a(t) + composición x₀ + a·N"""
    model = model or FlopModel()
    costo_a = 3 * model.add + model.transcendental if a_kind == 'exp' else model.add
    return flop_count_network(spec, model) + costo_a + 2 * spec.output_dim


def exact_sho(t, x0, k):
    w = np.sqrt(k)
    c, s = np.cos(w * t), np.sin(w * t)
    return np.stack([x0[..., 0] * c + x0[..., 1] / w * s, -x0[..., 0] * w * s + x0[..., 1] * c], axis=-1)


def sample_points(samples, seed=0, domain=BENCH_DOMAIN):
    """Puntos uniformes (x₀, v₀, k, t) del dominio de comparación"""
    rng = np.random.default_rng(seed)
    dominio = np.asarray(domain, dtype=float)
    puntos = rng.uniform(dominio[:, 0], dominio[:, 1], size=(samples, 4))
    return puntos[:, :2], puntos[:, 2], puntos[:, 3]


# ==================== TABLAS ====================

@dataclass
class LookupTable:
    """Tabla uniforme sobre (x₀, v₀, k, t) con el estado (x, v) en cada centro de celda"""
    lo: np.ndarray
    hi: np.ndarray
    divisions: int
    values: np.ndarray
    mode: str = 'nearest'

    @property
    def spacing(self):
        return (self.hi - self.lo) / self.divisions

    def centers(self, axis):
        return self.lo[axis] + (np.arange(self.divisions) + 0.5) * self.spacing[axis]

    @property
    def memory_bytes(self):
        return int(self.values.size * BYTES_PER_FLOAT)

    def _check(self, q):
        fuera = np.any((q < self.lo) | (q > self.hi), axis=-1)
        if np.any(fuera):
            raise DomainError(f'{int(np.sum(fuera))} consultas fuera del rango de la tabla')

    def query(self, x0, v0, k, t):
        q = np.stack(np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x0, v0, k, t))), axis=-1)
        self._check(q)
        if self.mode == 'multilinear':
            interp = RegularGridInterpolator(
                tuple(self.centers(a) for a in range(4)), self.values,
                method='linear', bounds_error=False, fill_value=None,
            )
            return interp(q)
        # ceil(u) − 1 deja los empates en el índice inferior
        idx = np.ceil((q - self.lo) / self.spacing).astype(int) - 1
        idx = np.clip(idx, 0, self.divisions - 1)
        return self.values[idx[..., 0], idx[..., 1], idx[..., 2], idx[..., 3]]


def build_table(divisions, h=1e-2, mode='nearest', domain=BENCH_DOMAIN, chunk_size=65536, threads=1):
    """Valores de celda con RK4 en los centros; memoria = d⁴·2·8 bytes"""
    if divisions < 2:
        raise ValueError('La tabla necesita al menos 2 divisiones por eje')
    if mode not in TABLE_MODES:
        raise ValueError(f'Modo de tabla desconocido: {mode}')
    dominio = np.asarray(domain, dtype=float)
    tabla = LookupTable(dominio[:, 0], dominio[:, 1], int(divisions), None, mode)
    mallas = np.meshgrid(*(tabla.centers(a) for a in range(4)), indexing='ij')
    puntos = np.stack([m.ravel() for m in mallas], axis=-1)
    sistema = get_system('sho')
    pasos = max(1, int(math.ceil(dominio[3, 1] / h)))

    def tramo(s):
        p = puntos[s]
        return integrate(sistema, p[:, :2], p[:, 2:3], 0.0, p[:, 3], pasos, 'rk4')

    valores = np.concatenate(chunked_map(tramo, len(puntos), chunk_size, threads), axis=0)
    tabla.values = valores.reshape((divisions,) * 4 + (2,))
    logger.info(f'Tabla d={divisions} construida ({tabla.memory_bytes} bytes)')
    return tabla


# ==================== CONTENDIENTES ====================

@dataclass
class Contender:
    name: str
    kind: str
    evaluate: object
    flops: int = None
    bytes: int = None


def exact_contender():
    return Contender('exact', 'exact', lambda t, x0, k: exact_sho(t, x0, k), flops=None, bytes=None)


def integrator_contender(method, steps, model=None):
    model = model or FlopModel()
    sistema = get_system('sho')
    por_paso = model.rk4_step(sistema.rhs_cost, sistema.n) if method == 'rk4' else model.euler_step(sistema.rhs_cost, sistema.n)

    def evaluar(t, x0, k):
        return integrate(sistema, x0, k[:, None], 0.0, t, steps, method)
    return Contender(f'{method}:{steps}', method, evaluar, flops=steps * por_paso)


def table_contender(divisions, mode='nearest', h=1e-2, threads=1):
    tabla = build_table(divisions, h=h, mode=mode, threads=threads)
    nombre = f'table:{divisions}' if mode == 'nearest' else f'table:{divisions}:{mode}'
    return Contender(nombre, 'table', lambda t, x0, k: tabla.query(x0[:, 0], x0[:, 1], k, t),
                     bytes=tabla.memory_bytes)


def network_contender(checkpoint_path, name=None, model=None):
    """Bundle SHO entrenado, cargado desde un checkpoint"""
    ckpt = network.load(checkpoint_path)
    config = BundleConfig.from_dict(ckpt.bundle)
    if config.system.name != 'sho' or config.free_params != ('k',):
        raise ValueError(f'{checkpoint_path}: el estudio requiere un bundle SHO con k libre')
    bundle = Bundle(config, ckpt.params)
    anchos = 'x'.join(str(w) for w in ckpt.params.spec.hidden)
    return Contender(
        name or f'network:{anchos}', 'network',
        lambda t, x0, k: bundle.evaluate(t, x0, k[:, None]),
        flops=flop_count_bundle(ckpt.params.spec, config.a_kind, model),
        bytes=ckpt.params.count * BYTES_PER_FLOAT,
    )


def parse_contender(text, model=None, table_h=1e-2, threads=1):
    """'exact', 'rk4:<pasos>', 'euler:<pasos>', 'table:<d>[:multilinear]' o 'network:<ruta>'"""
    tipo, _, resto = text.partition(':')
    if tipo == 'exact':
        return exact_contender()
    if tipo in ('rk4', 'euler'):
        return integrator_contender(tipo, int(resto), model)
    if tipo == 'table':
        d, _, modo = resto.partition(':')
        return table_contender(int(d), modo or 'nearest', h=table_h, threads=threads)
    if tipo == 'network':
        return network_contender(resto, model=model)
    raise ValueError(f'Contendiente desconocido: {text!r}')


# ==================== BARRIDO ====================

@dataclass
class SweepRow:
    contender: str
    flops: int
    bytes: int
    mean_abs_err: float
    p5: float
    p95: float

    def as_row(self):
        return [self.contender, self.flops, self.bytes, self.mean_abs_err, self.p5, self.p95]


def accuracy_sweep(contenders, samples=10000, seed=0):
    """Error absoluto medio y banda 5–95 % contra la solución exacta"""
    x0, k, t = sample_points(samples, seed)
    exacto = exact_sho(t, x0, k)
    filas = []
    for c in contenders:
        errores = absolute_error(c.evaluate(t, x0, k), exacto)
        p5, p95 = np.percentile(errores, [5, 95])
        filas.append(SweepRow(c.name, c.flops, c.bytes, float(np.mean(errores)), float(p5), float(p95)))
        logger.info(f'{c.name}: error medio {filas[-1].mean_abs_err:.3e}')
    return filas


def write_report(path, rows):
    return write_csv(path, REPORT_COLUMNS, [r.as_row() for r in rows])


def run_bench(output_dir, checkpoints=(), rk4_steps=(), euler_steps=(), table_divisions=(), table_mode='nearest',
              samples=10000, seed=0, model=None, table_h=1e-2, threads=1):
    """Arma los contendientes y escribe flops_report.csv y memory_report.csv"""
    model = model or FlopModel()
    redes = [network_contender(p, model=model) for p in checkpoints]
    integradores = [integrator_contender('rk4', s, model) for s in rk4_steps]
    integradores += [integrator_contender('euler', s, model) for s in euler_steps]
    tablas = [table_contender(d, table_mode, h=table_h, threads=threads) for d in table_divisions]

    filas_redes = accuracy_sweep(redes, samples, seed)
    filas_flops = filas_redes + accuracy_sweep([exact_contender(), *integradores], samples, seed)
    filas_memoria = filas_redes + accuracy_sweep(tablas, samples, seed)
    flops_path = write_report(f'{output_dir}/flops_report.csv', filas_flops)
    memory_path = write_report(f'{output_dir}/memory_report.csv', filas_memoria)
    logger.info(f'Reportes de eficiencia escritos ({model.version})')
    return flops_path, memory_path
