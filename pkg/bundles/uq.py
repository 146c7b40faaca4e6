"""
Cuantificación de incertidumbre con el bundle: propagación de distribuciones
por histogramas ponderados, pullback de densidades con el jacobiano, posterior
del asteroide e inferencia bayesiana en grilla con estimación MAP.
"""
from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from . import diffcore as dc
from .exceptions import DataError
from .utils import chunked_map

logger = logging.getLogger(__name__)

DEFAULT_CHUNK = 65536
ARMIJO = 1e-4
MAX_HALVINGS = 60


# ==================== GRILLAS ====================

def cell_centers(lo, hi, count):
    """Centros de `count` celdas uniformes sobre [lo, hi]"""
    if count < 1:
        raise DataError(f'Una grilla necesita al menos una celda por eje (llegó {count})')
    ancho = (hi - lo) / count
    return lo + (np.arange(count) + 0.5) * ancho


def cell_grid(box, resolution):
    """(centros por eje, puntos (N, d), volumen de celda) de una grilla uniforme sobre la caja"""
    box = [(float(lo), float(hi)) for lo, hi in box]
    if isinstance(resolution, int):
        resolution = [resolution] * len(box)
    if len(resolution) != len(box):
        raise DataError('La resolución debe tener un valor por eje')
    centros = [cell_centers(lo, hi, int(r)) for (lo, hi), r in zip(box, resolution)]
    mallas = np.meshgrid(*centros, indexing='ij')
    puntos = np.stack([m.ravel() for m in mallas], axis=-1)
    volumen = float(np.prod([(hi - lo) / r for (lo, hi), r in zip(box, resolution)]))
    return centros, puntos, volumen


def _evaluate_chunked(solution, t, x0, theta, chunk_size, threads):
    x0 = np.asarray(x0, dtype=float)
    theta = np.asarray(theta, dtype=float)

    def tramo(s):
        th = theta[s] if theta.ndim == 2 else theta
        return solution.evaluate(t, x0[s], th)

    partes = chunked_map(tramo, len(x0), chunk_size, threads)
    return np.concatenate(partes, axis=0) if partes else np.zeros((0, solution.config.system.n))


# ==================== HISTOGRAMAS ====================

@dataclass
class WeightedHistogram:
    edges: tuple
    weights: np.ndarray
    components: tuple
    total_weight: float
    outside_mass: float = 0.0
    normalized: bool = False

    @property
    def all_outside(self):
        return self.total_weight > 0 and float(np.sum(self.weights)) == 0.0

    def centers(self):
        return [0.5 * (e[:-1] + e[1:]) for e in self.edges]

    def normalize(self):
        suma = float(np.sum(self.weights))
        if suma <= 0:
            raise DataError('No se puede normalizar un histograma sin masa')
        return WeightedHistogram(self.edges, self.weights / suma, self.components, self.total_weight,
                                 self.outside_mass, normalized=True)

    def mean(self):
        """Media ponderada por eje usando los centros de bin"""
        suma = float(np.sum(self.weights))
        if suma <= 0:
            raise DataError('Histograma vacío')
        medias = []
        for eje, c in enumerate(self.centers()):
            otros = tuple(i for i in range(self.weights.ndim) if i != eje)
            marginal = self.weights.sum(axis=otros) if otros else self.weights
            medias.append(float(np.dot(marginal, c) / suma))
        return np.array(medias)

    def to_rows(self):
        mallas = np.meshgrid(*self.centers(), indexing='ij')
        columnas = [m.ravel() for m in mallas]
        return [[*(c[i] for c in columnas), w] for i, w in enumerate(self.weights.ravel())]

    def header(self):
        return [f'bin_center_{i + 1}' for i in range(len(self.edges))] + ['weight']


def _edges(bins, states):
    """Bordes por eje a partir de (lo, hi, count), arreglos o un entero"""
    bordes = []
    for eje, b in enumerate(bins):
        if isinstance(b, int):
            lo, hi = float(np.min(states[:, eje])), float(np.max(states[:, eje]))
            if hi <= lo:
                lo, hi = lo - 0.5, hi + 0.5
            bordes.append(np.linspace(lo, hi, b + 1))
        elif len(b) == 3 and not isinstance(b, np.ndarray):
            lo, hi, n = b
            bordes.append(np.linspace(float(lo), float(hi), int(n) + 1))
        else:
            bordes.append(np.asarray(b, dtype=float))
    return bordes


def histogram_states(states, weights, bins, components):
    """Histograma ponderado de las componentes elegidas; el resto se marginaliza"""
    components = tuple(int(c) for c in components)
    muestra = np.asarray(states, dtype=float)[:, components]
    weights = np.asarray(weights, dtype=float)
    bordes = _edges(bins, muestra)
    pesos, bordes = np.histogramdd(muestra, bins=bordes, weights=weights)
    total = float(np.sum(weights))
    dentro = float(np.sum(pesos))
    hist = WeightedHistogram(tuple(bordes), pesos, components, total, max(total - dentro, 0.0))
    if hist.all_outside:
        logger.warning('Toda la masa propagada cayó fuera del rango de bins')
    elif hist.outside_mass > 1e-12 * max(total, 1.0):
        logger.info(f'Masa fuera del rango de bins: {hist.outside_mass:.3g} de {total:.3g}')
    return hist


def gaussian_density(mean, sigma):
    """Densidad gaussiana independiente por componente"""
    mean = np.asarray(mean, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise DataError('Las desviaciones estándar deben ser > 0')

    def densidad(points):
        return np.exp(np.sum(norm.logpdf(np.asarray(points, dtype=float), mean, sigma), axis=-1))
    return densidad


def uniform_density(box):
    """Densidad uniforme sobre una caja"""
    box = np.asarray(box, dtype=float)
    volumen = float(np.prod(box[:, 1] - box[:, 0]))

    def densidad(points):
        points = np.asarray(points, dtype=float)
        dentro = np.all((points >= box[:, 0]) & (points <= box[:, 1]), axis=-1)
        return dentro / volumen
    return densidad


def propagate(solution, density, t, resolution=50, bins=None, components=None, theta=(),
              chunk_size=DEFAULT_CHUNK, threads=1):
    """
    Empuja p₀ sobre una grilla de X₀ hasta el tiempo t: cada celda aporta
    p₀(x₀)·volumen al bin que contiene x̂(t; x₀, θ).
    """
    config = solution.config
    t0, tf = config.training_window
    if not t0 <= t <= tf:
        logger.warning(f't={t} fuera de la ventana [{t0}, {tf}]; el resultado es una extrapolación')
    components = tuple(range(config.system.n)) if components is None else tuple(components)
    _, puntos, volumen = cell_grid(config.x0_box, resolution)
    pesos = np.asarray(density(puntos), dtype=float) * volumen
    estados = _evaluate_chunked(solution, t, puntos, theta, chunk_size, threads)
    bins = bins if bins is not None else [50] * len(components)
    return histogram_states(estados, pesos, bins, components)


def density_pullback(solution, p_t, t, x0, theta=()):
    """p₀(x₀) = p_t(x̂(t; x₀))·|det ∂x̂/∂x₀|"""
    estado = solution.evaluate(t, x0, theta)
    jac = solution.jacobian_x0(t, x0, theta)
    return np.asarray(p_t(estado), dtype=float) * np.abs(np.linalg.det(jac))


# ==================== MEDICIONES Y POSTERIORES ====================

@dataclass(frozen=True)
class GaussianMeasurement:
    """Observación gaussiana independiente de algunas componentes del estado en t"""
    t: float
    mean: tuple
    sigma: tuple
    components: tuple

    def __post_init__(self):
        object.__setattr__(self, 'mean', tuple(float(v) for v in np.atleast_1d(self.mean)))
        object.__setattr__(self, 'components', tuple(int(c) for c in np.atleast_1d(self.components)))
        sigma = np.broadcast_to(np.atleast_1d(np.asarray(self.sigma, dtype=float)), (len(self.mean),))
        object.__setattr__(self, 'sigma', tuple(float(s) for s in sigma))
        if len(self.components) != len(self.mean):
            raise DataError('La medición debe indicar una componente por valor observado')
        if any(s <= 0 for s in self.sigma):
            raise DataError('Las desviaciones estándar deben ser > 0')

    def logpdf(self, states):
        observado = np.asarray(states, dtype=float)[..., list(self.components)]
        return np.sum(norm.logpdf(observado, np.array(self.mean), np.array(self.sigma)), axis=-1)

    def to_dict(self):
        return {'t': self.t, 'mean': list(self.mean), 'sigma': list(self.sigma), 'components': list(self.components)}

    @classmethod
    def from_dict(cls, data):
        return cls(float(data['t']), data['mean'], data['sigma'], data['components'])


def asteroid_posterior_weight(solution, x0, r0, r1, theta=(), log=False):
    """
    Peso no normalizado de un candidato x₀ con prior uniforme: producto de las
    densidades de r₀ contra x̂(t₀) y de r₁ contra x̂(t₁).
    """
    logw = r0.logpdf(solution.evaluate(r0.t, x0, theta)) + r1.logpdf(solution.evaluate(r1.t, x0, theta))
    return logw if log else np.exp(logw)


def asteroid_distribution(solution, r0, r1, t, resolution=50, bins=None, theta=(), components=(0, 1),
                          chunk_size=DEFAULT_CHUNK, threads=1):
    """Histograma de posiciones en t pesando cada celda de X₀ con la posterior de las dos mediciones"""
    config = solution.config
    _, puntos, volumen = cell_grid(config.x0_box, resolution)

    def tramo(s):
        return asteroid_posterior_weight(solution, puntos[s], r0, r1, theta, log=True)

    logw = np.concatenate(chunked_map(tramo, len(puntos), chunk_size, threads))
    pesos = np.exp(logw - np.max(logw)) * volumen
    estados = _evaluate_chunked(solution, t, puntos, theta, chunk_size, threads)
    bins = bins if bins is not None else [50] * len(components)
    return histogram_states(estados, pesos, bins, components)


@dataclass
class PosteriorGrid:
    """Log-densidad no normalizada sobre una grilla de (x₀, θ)"""
    names: tuple
    axes: tuple
    log_density: np.ndarray

    def probabilities(self):
        return np.exp(self.log_density - logsumexp(self.log_density))

    def marginal(self, name):
        eje = self.names.index(name)
        otros = tuple(i for i in range(len(self.names)) if i != eje)
        p = self.probabilities()
        return p.sum(axis=otros) if otros else p

    def marginals(self):
        return {name: self.marginal(name) for name in self.names}

    def argmax_index(self):
        return np.unravel_index(int(np.argmax(self.log_density)), self.log_density.shape)

    def argmax(self):
        idx = self.argmax_index()
        return {name: float(axis[i]) for name, axis, i in zip(self.names, self.axes, idx)}

    def marginal_rows(self, name):
        return [[c, p] for c, p in zip(self.axes[self.names.index(name)], self.marginal(name))]


def _labels(config):
    return tuple(config.system.state_labels) + tuple(config.free_params)


def _check_data(config, data):
    lo, hi = config.training_window
    for d in data:
        if not lo <= d.t <= hi:
            raise DataError(f'Dato en t={d.t} fuera de la ventana [{lo}, {hi}]')
        if any(c < 0 or c >= config.system.n for c in d.components):
            raise DataError(f'Componente observada inválida en t={d.t}: {d.components}')


def _split(config, puntos):
    n = config.system.n
    return puntos[..., :n], puntos[..., n:]


def bayes_posterior(solution, data, grid, fixed=None, log_prior=None, chunk_size=DEFAULT_CHUNK, threads=1):
    """
    Posterior en grilla: Σᵢ log N(observadoᵢ | x̂(tᵢ; x₀, θ)) + log prior.

    `grid` mapea nombre de eje (etiqueta de estado o parámetro libre) a
    (lo, hi, celdas); `fixed` da el valor de las coordenadas que no se barren.
    """
    config = solution.config
    etiquetas = _labels(config)
    fixed = dict(fixed or {})
    if not grid:
        raise DataError('La grilla de la posterior está vacía')
    desconocidos = (set(grid) | set(fixed)) - set(etiquetas)
    if desconocidos:
        raise DataError(f'Ejes desconocidos para {config.system.name}: {sorted(desconocidos)}')
    faltantes = [e for e in etiquetas if e not in grid and e not in fixed]
    if faltantes:
        raise DataError(f'Faltan valores fijos para {faltantes}')
    data = list(data)
    _check_data(config, data)

    nombres = tuple(e for e in etiquetas if e in grid)
    ejes = tuple(cell_centers(float(grid[e][0]), float(grid[e][1]), int(grid[e][2])) for e in nombres)
    mallas = np.meshgrid(*ejes, indexing='ij')
    forma = mallas[0].shape
    total = mallas[0].size
    puntos = np.empty((total, len(etiquetas)))
    for j, e in enumerate(etiquetas):
        puntos[:, j] = mallas[nombres.index(e)].ravel() if e in grid else float(fixed[e])
    x0, theta = _split(config, puntos)

    log_density = np.zeros(total)
    for d in data:
        estados = _evaluate_chunked(solution, d.t, x0, theta, chunk_size, threads)
        log_density += d.logpdf(estados)
    if log_prior is not None:
        log_density += np.asarray(log_prior(x0, theta), dtype=float)
    logger.info(f'Posterior en grilla: {total} celdas, {len(data)} datos')
    return PosteriorGrid(nombres, ejes, log_density.reshape(forma))


@dataclass
class MapResult:
    values: dict
    x0: np.ndarray
    theta: np.ndarray
    log_posterior: float
    iterations: int
    converged: bool
    gradient_norm: float
    fit_times: np.ndarray = None
    fit_states: np.ndarray = None
    history: list = field(default_factory=list)

    def report(self):
        return {
            'values': self.values,
            'log_posterior': self.log_posterior,
            'iterations': self.iterations,
            'converged': self.converged,
            'gradient_norm': self.gradient_norm,
        }


def _lane_arrays(data, n):
    """Medias, sigmas y máscaras (carriles = datos) por componente"""
    medias = np.zeros((len(data), n))
    sigmas = np.ones((len(data), n))
    mascaras = np.zeros((len(data), n))
    for i, d in enumerate(data):
        for c, m, s in zip(d.components, d.mean, d.sigma):
            medias[i, c] = m
            sigmas[i, c] = s
            mascaras[i, c] = 1.0
    return medias, sigmas, mascaras


def log_posterior_and_gradient(solution, data, point):
    """
    log-posterior (prior uniforme) y su gradiente respecto de (x₀, θ),
    grabando la solución en la cinta con un carril por dato.
    """
    config = solution.config
    n = config.system.n
    data = list(data)
    point = np.asarray(point, dtype=float)
    if not data:
        return 0.0, np.zeros(len(point))
    medias, sigmas, mascaras = _lane_arrays(data, n)
    constante = float(-np.sum(mascaras * (np.log(sigmas) + 0.5 * math.log(2.0 * math.pi))))
    tape = dc.Tape()
    variables = [tape.leaf(v, index=i) for i, v in enumerate(point)]
    tiempos = tape.leaf(np.array([d.t for d in data]))
    xhat = solution.record(tape, tiempos, variables[:n], variables[n:])
    suma = None
    for c in range(n):
        if not np.any(mascaras[:, c]):
            continue
        r = (xhat[c] - medias[:, c]) * (1.0 / sigmas[:, c])
        termino = r * r * mascaras[:, c]
        suma = termino if suma is None else suma + termino
    if suma is None:
        return constante, np.zeros(len(point))
    valor = -0.5 * float(np.sum(suma.primal)) + constante
    gradiente = dc.reverse_gradient(tape, suma, seed=-0.5)
    return valor, np.asarray(gradiente, dtype=float)


def map_estimate(solution, data, init, free=None, max_iter=500, tol=1e-6, fit_times=None):
    """
    Ascenso de gradiente proyectado sobre la caja X₀ × Θ con búsqueda de línea
    (paso inicial 1, se divide por 2, constante de Armijo 1e-4).
    """
    config = solution.config
    etiquetas = _labels(config)
    data = list(data)
    _check_data(config, data)
    faltantes = [e for e in etiquetas if e not in init]
    if faltantes:
        raise DataError(f'Falta el punto inicial para {faltantes}')
    libres = etiquetas if free is None else tuple(free)
    mascara = np.array([1.0 if e in libres else 0.0 for e in etiquetas])
    caja = np.array(list(config.x0_box) + list(config.theta_box), dtype=float)
    z = np.clip(np.array([float(init[e]) for e in etiquetas]), caja[:, 0], caja[:, 1])

    f, g = log_posterior_and_gradient(solution, data, z)
    historia = [f]
    convergio = False
    norma = math.inf
    iteracion = 0
    for iteracion in range(1, max_iter + 1):
        g = g * mascara
        norma = float(np.linalg.norm(np.clip(z + g, caja[:, 0], caja[:, 1]) - z))
        if norma < tol:
            convergio = True
            iteracion -= 1
            break
        paso = 1.0
        aceptado = False
        for _ in range(MAX_HALVINGS):
            candidato = np.clip(z + paso * g, caja[:, 0], caja[:, 1])
            f_c, g_c = log_posterior_and_gradient(solution, data, candidato)
            if math.isfinite(f_c) and f_c >= f + ARMIJO * float(np.dot(g, candidato - z)):
                aceptado = True
                break
            paso *= 0.5
        if not aceptado:
            logger.warning(f'MAP: la búsqueda de línea no encontró ascenso en la iteración {iteracion}')
            break
        z, f, g = candidato, f_c, g_c
        historia.append(f)
    else:
        g = g * mascara
        norma = float(np.linalg.norm(np.clip(z + g, caja[:, 0], caja[:, 1]) - z))
        convergio = norma < tol
    if not convergio:
        logger.warning(f'MAP sin convergencia tras {iteracion} iteraciones (|∇|={norma:.3g})')

    n = config.system.n
    x0, theta = z[:n], z[n:]
    if fit_times is None:
        fit_times = np.linspace(config.t0, config.tf, 200)
    fit_times = np.asarray(fit_times, dtype=float)
    ajuste = solution.evaluate(fit_times, x0, theta)
    return MapResult(
        values={e: float(v) for e, v in zip(etiquetas, z)},
        x0=x0, theta=theta, log_posterior=f, iterations=iteracion, converged=convergio,
        gradient_norm=norma, fit_times=fit_times, fit_states=ajuste, history=historia,
    )


def synthetic_dataset(solution, x0, theta, times, sigma, components, seed=0):
    """Datos con ruido gaussiano generados por `solution` en (x₀, θ) verdaderos"""
    rng = np.random.default_rng(seed)
    components = tuple(int(c) for c in np.atleast_1d(components))
    times = np.asarray(times, dtype=float)
    estados = solution.evaluate(times, x0, theta)
    sigma = np.broadcast_to(np.atleast_1d(np.asarray(sigma, dtype=float)), (len(components),))
    datos = []
    for t, estado in zip(times, estados):
        ruido = rng.normal(0.0, sigma)
        datos.append(GaussianMeasurement(float(t), estado[list(components)] + ruido, sigma, components))
    return datos
