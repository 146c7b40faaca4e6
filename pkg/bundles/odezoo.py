"""
Registro de sistemas de EDOs: residuo G(x, ẋ, t; θ) = ẋ − f(t, x; θ) y lado
derecho f para integración de referencia.

Los campos usan las funciones de diffcore, así que la misma definición sirve
para arrays numpy (integradores) y para variables de la cinta (entrenamiento).
"""
from dataclasses import dataclass, field
import logging
from typing import Callable, Optional

import numpy as np

from . import diffcore as dc
from .exceptions import ParameterError, SingularityError

logger = logging.getLogger(__name__)

SINGULARITY_RADIUS = 1e-9


# ==================== CAMPOS VECTORIALES ====================

def crtbp_rhs(t, state, mu):
    """
    Problema restringido circular de tres cuerpos, plano y adimensional, en el
    marco co-rotante: Tierra (1−μ) en el origen y Luna (μ) en (1, 0).
    """
    x, y, u, v = state
    r1_sq = x * x + y * y
    r2_sq = (x - 1.0) * (x - 1.0) + y * y
    if np.any(dc.primal(r1_sq) < SINGULARITY_RADIUS ** 2) or np.any(dc.primal(r2_sq) < SINGULARITY_RADIUS ** 2):
        raise SingularityError('Estado a menos de 1e-9 de uno de los cuerpos primarios')
    r1_cubed = r1_sq * dc.sqrt(r1_sq)
    r2_cubed = r2_sq * dc.sqrt(r2_sq)
    du = x - mu + 2.0 * v - (mu * (x - 1.0) / r2_cubed + (1.0 - mu) * x / r1_cubed)
    dv = y - 2.0 * u - (mu * y / r2_cubed + (1.0 - mu) * y / r1_cubed)
    return [u, v, du, dv]


def pendulum_rhs(t, state, params):
    """Péndulo con resorte amortiguado que solo empuja para ángulos negativos (g = ℓ = m = 1)"""
    theta, omega = state
    k, c = params
    # H(0) = 0: el resorte está apagado en el punto de contacto
    spring = dc.heaviside(-theta) * dc.relu(-k * theta - c * omega)
    return [omega, -dc.sin(theta) + spring]


def fhn_rhs(t, state, params):
    """Oscilador de relajación de FitzHugh–Nagumo"""
    v, w = state
    a, b, tau, current = params
    if np.any(dc.primal(tau) <= 0):
        raise ParameterError('FitzHugh–Nagumo requiere τ > 0')
    dv = v - v * v * v / 3.0 - w + current
    dw = (v + a - b * w) / tau
    return [dv, dw]


def sho_rhs(t, state, k):
    """Oscilador armónico simple con m = 1"""
    x, v = state
    if isinstance(k, (list, tuple)):
        (k,) = k
    if np.any(dc.primal(k) <= 0):
        raise ParameterError('El oscilador armónico requiere k > 0')
    return [v, -k * x]


def fhn_nullclines(v, a, b, current):
    """w sobre la nulclina cúbica (v̇ = 0) y sobre la lineal (ẇ = 0)"""
    return v - v ** 3 / 3.0 + current, (v + a) / b


# ==================== REGISTRO ====================

@dataclass(frozen=True)
class OdeSystem:
    """Sistema de EDO con nombre, etiquetas y campo f(t, x; θ)"""
    name: str
    state_labels: tuple
    param_labels: tuple
    field_fn: Callable
    defaults: dict = field(default_factory=dict)
    rhs_cost: int = 1
    lipschitz_fn: Optional[Callable] = None
    description: str = ''

    @property
    def n(self):
        return len(self.state_labels)

    @property
    def p(self):
        return len(self.param_labels)

    def rhs(self, t, x, theta):
        """f(t, x; θ) como lista de componentes (numpy o Var)"""
        x = list(x)
        theta = list(theta)
        if len(x) != self.n:
            raise ValueError(f'{self.name}: el estado tiene {len(x)} componentes, se esperan {self.n}')
        if len(theta) != self.p:
            raise ValueError(f'{self.name}: se pasaron {len(theta)} parámetros, se esperan {self.p}')
        return self.field_fn(t, x, theta)

    def residual(self, x, xdot, t, theta):
        """Forma canónica ẋ − f(t, x; θ)"""
        f = self.rhs(t, x, theta)
        return [xd - fi for xd, fi in zip(xdot, f)]

    def rhs_array(self, t, states, theta):
        """Versión vectorizada: estados (..., n), θ (..., p) -> (..., n)"""
        states = np.asarray(states, dtype=float)
        theta = np.asarray(theta, dtype=float)
        comps = [states[..., i] for i in range(self.n)]
        params = [theta[..., j] for j in range(self.p)]
        out = self.rhs(t, comps, params)
        shape = np.broadcast_shapes(states.shape[:-1], theta.shape[:-1] if theta.ndim else ())
        return np.stack([np.broadcast_to(np.asarray(o, dtype=float), shape) for o in out], axis=-1)

    def lipschitz(self, theta_box):
        """L_f analítico sobre la caja de parámetros, o None si no hay fórmula"""
        if self.lipschitz_fn is None:
            return None
        return self.lipschitz_fn(theta_box)


def _crtbp_field(t, x, theta):
    return crtbp_rhs(t, x, theta[0])


def _pendulum_field(t, x, theta):
    return pendulum_rhs(t, x, theta)


def _fhn_field(t, x, theta):
    return fhn_rhs(t, x, theta)


def _sho_field(t, x, theta):
    return sho_rhs(t, x, theta[0])


def _sho_lipschitz(theta_box):
    # norma de operador de [[0, 1], [−k, 0]] = max(1, k)
    k_max = max(hi for lo, hi in theta_box[:1]) if theta_box else 1.0
    return max(1.0, float(k_max))


SYSTEMS = {
    'crtbp': OdeSystem(
        name='crtbp',
        state_labels=('x', 'y', 'u', 'v'),
        param_labels=('mu',),
        field_fn=_crtbp_field,
        defaults={'mu': 0.01},
        rhs_cost=38,
        description='Problema restringido circular de tres cuerpos (plano)',
    ),
    'rebound_pendulum': OdeSystem(
        name='rebound_pendulum',
        state_labels=('theta', 'omega'),
        param_labels=('k', 'c'),
        field_fn=_pendulum_field,
        rhs_cost=12,
        description='Péndulo con rebote contra resorte amortiguado',
    ),
    'fitzhugh_nagumo': OdeSystem(
        name='fitzhugh_nagumo',
        state_labels=('v', 'w'),
        param_labels=('a', 'b', 'tau', 'I'),
        field_fn=_fhn_field,
        rhs_cost=10,
        description='Modelo de neurona de FitzHugh–Nagumo',
    ),
    'sho': OdeSystem(
        name='sho',
        state_labels=('x', 'v'),
        param_labels=('k',),
        field_fn=_sho_field,
        rhs_cost=2,
        lipschitz_fn=_sho_lipschitz,
        description='Oscilador armónico simple',
    ),
}


def get_system(name):
    """Busca un sistema por nombre en el registro"""
    try:
        return SYSTEMS[name]
    except KeyError:
        raise KeyError(f'Sistema desconocido: {name!r}. Disponibles: {", ".join(sorted(SYSTEMS))}') from None


def residual(system, x, xdot_candidate, t, theta):
    """ẋ_candidato − f(t, x; θ) componente a componente"""
    return system.residual(x, xdot_candidate, t, theta)


def jacobian_of_field(system, t, x, theta):
    """∂f/∂x por n pasadas forward; con carriles devuelve (L, n, n)"""
    n = system.n
    x_comps = [np.asarray(v, dtype=float) for v in np.moveaxis(np.asarray(x, dtype=float), -1, 0)]
    th_comps = [np.asarray(v, dtype=float) for v in np.moveaxis(np.asarray(theta, dtype=float), -1, 0)] \
        if np.size(theta) else []

    def fn(tape, variables):
        return system.rhs(variables[0], variables[1:1 + n], variables[1 + n:])

    return dc.forward_jacobian(fn, [np.asarray(t, dtype=float), *x_comps, *th_comps], list(range(1, 1 + n)))


def estimate_lipschitz(system, x_box, theta_box, samples=1000, rng=None, t=0.0, safety=1.1):
    """
    Estima L_f muestreando ‖∂f/∂x‖₂ sobre la caja; devuelve el máximo por `safety`.
    `theta_box` debe cubrir todos los parámetros del sistema (intervalos degenerados
    para los fijos).
    """
    analitico = system.lipschitz(theta_box)
    if analitico is not None:
        return analitico
    rng = rng if rng is not None else np.random.default_rng(0)
    x_box = np.asarray(x_box, dtype=float)
    theta_box = np.asarray(theta_box, dtype=float).reshape(-1, 2)
    xs = rng.uniform(x_box[:, 0], x_box[:, 1], size=(samples, len(x_box)))
    thetas = rng.uniform(theta_box[:, 0], theta_box[:, 1], size=(samples, len(theta_box)))
    jac = jacobian_of_field(system, t, xs, thetas)
    normas = np.linalg.norm(jac, ord=2, axis=(-2, -1))
    estimado = float(np.max(normas)) * safety
    logger.debug(f'L_f estimado para {system.name}: {estimado:.6g} ({samples} muestras)')
    return estimado
