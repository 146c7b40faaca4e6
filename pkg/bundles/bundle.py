"""
Solución de prueba restringida x̂(t; x₀, θ) = x₀ + a(t)·N(t; x₀, θ; w).
"""
from dataclasses import dataclass, field
import logging

import numpy as np

from . import diffcore as dc
from . import network
from .odezoo import get_system

logger = logging.getLogger(__name__)

A_KINDS = ('exp', 'linear')
DEFAULT_MARGIN_FRACTION = 0.002


def a_value(a_kind, t, t0):
    """a(t) con a(t₀) = 0; acepta numpy o variables de la cinta"""
    if a_kind == 'linear':
        return t - t0
    if a_kind == 'exp':
        return 1.0 - dc.exp(-(t - t0))
    raise ValueError(f'a_kind desconocido: {a_kind}')


def a_derivative(a_kind, t, t0):
    """a′(t) analítica"""
    if a_kind == 'linear':
        return np.ones_like(np.asarray(t, dtype=float))
    if a_kind == 'exp':
        return np.exp(-(np.asarray(t, dtype=float) - t0))
    raise ValueError(f'a_kind desconocido: {a_kind}')


def _intervals(box):
    return tuple((float(lo), float(hi)) for lo, hi in box)


@dataclass(frozen=True)
class BundleConfig:
    """Sistema, dominios y forma de a(t) que definen x̂"""
    system: object
    time_window: tuple
    x0_box: tuple
    theta_box: tuple = ()
    fixed_params: dict = field(default_factory=dict)
    a_kind: str = 'exp'
    train_time_margin: float = None
    normalize_inputs: bool = False

    def __post_init__(self):
        if isinstance(self.system, str):
            object.__setattr__(self, 'system', get_system(self.system))
        object.__setattr__(self, 'time_window', tuple(float(v) for v in self.time_window))
        object.__setattr__(self, 'x0_box', _intervals(self.x0_box))
        object.__setattr__(self, 'theta_box', _intervals(self.theta_box))
        fijos = {k: float(v) for k, v in (self.fixed_params or {}).items()}
        desconocidos = set(fijos) - set(self.system.param_labels)
        if desconocidos:
            raise ValueError(f'{self.system.name}: parámetros fijos desconocidos {sorted(desconocidos)}')
        restantes = [p for p in self.system.param_labels if p not in fijos]
        # sin caja propia, los parámetros con valor por defecto quedan fijos
        if len(self.theta_box) < len(restantes):
            for k, v in self.system.defaults.items():
                fijos.setdefault(k, float(v))
        object.__setattr__(self, 'fixed_params', fijos)
        if self.train_time_margin is None:
            t0, tf = self.time_window
            object.__setattr__(self, 'train_time_margin', DEFAULT_MARGIN_FRACTION * (tf - t0))
        self.validate()

    def validate(self):
        t0, tf = self.time_window
        if not t0 < tf:
            raise ValueError(f'Ventana temporal inválida: t₀={t0} debe ser menor que t_f={tf}')
        if self.a_kind not in A_KINDS:
            raise ValueError(f'a_kind debe ser uno de {A_KINDS}')
        if self.train_time_margin < 0:
            raise ValueError('El margen previo a t₀ debe ser >= 0')
        if len(self.x0_box) != self.system.n:
            raise ValueError(f'{self.system.name}: X₀ tiene {len(self.x0_box)} intervalos, el estado tiene dimensión {self.system.n}')
        if len(self.theta_box) != len(self.free_params):
            raise ValueError(
                f'{self.system.name}: Θ tiene {len(self.theta_box)} intervalos para los parámetros libres {self.free_params}'
            )
        for nombre, (lo, hi) in zip(self.system.state_labels + self.free_params, self.x0_box + self.theta_box):
            if not lo < hi:
                raise ValueError(f'Intervalo degenerado para {nombre}: [{lo}, {hi}]')

    @property
    def free_params(self):
        return tuple(p for p in self.system.param_labels if p not in self.fixed_params)

    @property
    def t0(self):
        return self.time_window[0]

    @property
    def tf(self):
        return self.time_window[1]

    @property
    def input_dim(self):
        return 1 + self.system.n + len(self.free_params)

    @property
    def training_window(self):
        return self.t0 - self.train_time_margin, self.tf

    def full_theta(self, free_values):
        """Parámetros libres + fijos en el orden de param_labels del sistema"""
        free_values = list(free_values)
        if len(free_values) != len(self.free_params):
            raise ValueError(f'Se esperaban {len(self.free_params)} parámetros libres, llegaron {len(free_values)}')
        libres = dict(zip(self.free_params, free_values))
        return [libres[p] if p in libres else self.fixed_params[p] for p in self.system.param_labels]

    def full_theta_array(self, theta):
        """Versión vectorizada: (..., p_libres) -> (..., p)"""
        theta = np.asarray(theta, dtype=float)
        comps = self.full_theta([theta[..., j] for j in range(len(self.free_params))])
        shape = theta.shape[:-1] if theta.ndim else ()
        return np.stack([np.broadcast_to(np.asarray(c, dtype=float), shape) for c in comps], axis=-1)

    def input_intervals(self):
        return (self.training_window, *self.x0_box, *self.theta_box)

    def to_dict(self):
        return {
            'system': self.system.name,
            'time_window': list(self.time_window),
            'x0_box': [list(i) for i in self.x0_box],
            'theta_box': [list(i) for i in self.theta_box],
            'fixed_params': dict(sorted(self.fixed_params.items())),
            'a_kind': self.a_kind,
            'train_time_margin': self.train_time_margin,
            'normalize_inputs': self.normalize_inputs,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            system=data['system'],
            time_window=data['time_window'],
            x0_box=data['x0_box'],
            theta_box=data.get('theta_box', ()),
            fixed_params=data.get('fixed_params', {}),
            a_kind=data.get('a_kind', 'exp'),
            train_time_margin=data.get('train_time_margin'),
            normalize_inputs=bool(data.get('normalize_inputs', False)),
        )


def stack_inputs(config, t, x0, theta):
    """Arma el arreglo (..., 1+n+p_libres) con broadcasting entre t, x₀ y θ"""
    n = config.system.n
    pf = len(config.free_params)
    t = np.asarray(t, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0:
        theta = theta.reshape(1)
    if theta.shape[-1] != pf:
        raise ValueError(f'Se esperaban {pf} parámetros libres, llegaron {theta.shape[-1]}')
    if x0.ndim == 0 or x0.shape[-1] != n:
        raise ValueError(f'x₀ debe tener {n} componentes')
    lead = np.broadcast_shapes(t.shape, x0.shape[:-1], theta.shape[:-1])
    return np.concatenate([
        np.broadcast_to(t, lead)[..., None],
        np.broadcast_to(x0, lead + (n,)),
        np.broadcast_to(theta, lead + (pf,)),
    ], axis=-1)


class Bundle:
    """Solution bundle entrenable: configuración + parámetros de la red"""

    def __init__(self, config, params):
        if params.spec.input_dim != config.input_dim:
            raise ValueError(f'La red espera {params.spec.input_dim} entradas, el bundle provee {config.input_dim}')
        if params.spec.output_dim != config.system.n:
            raise ValueError(f'La red produce {params.spec.output_dim} salidas, el estado tiene dimensión {config.system.n}')
        self.config = config
        self.params = params
        centros = []
        escalas = []
        for lo, hi in config.input_intervals():
            centros.append(0.5 * (lo + hi))
            escalas.append(0.5 * (hi - lo))
        self._centros = np.array(centros)
        self._escalas = np.array(escalas)

    @property
    def system(self):
        return self.config.system

    def with_params(self, params):
        return Bundle(self.config, params)

    # ---------- evaluación numpy ----------

    def _normalize(self, inputs):
        if not self.config.normalize_inputs:
            return inputs
        return (inputs - self._centros) / self._escalas

    def network_output(self, t, x0, theta):
        inputs = stack_inputs(self.config, t, x0, theta)
        return network.forward(self.params, self._normalize(inputs))

    def evaluate(self, t, x0, theta):
        """x̂(t; x₀, θ) con broadcasting; forma (..., n)"""
        inputs = stack_inputs(self.config, t, x0, theta)
        n = self.system.n
        salida = network.forward(self.params, self._normalize(inputs))
        a = a_value(self.config.a_kind, inputs[..., 0], self.config.t0)
        return inputs[..., 1:1 + n] + a[..., None] * salida

    evaluate_batch = evaluate

    def extrapolated(self, t, x0, theta):
        """True donde (t, x₀, θ) cae fuera de los dominios de entrenamiento"""
        inputs = stack_inputs(self.config, t, x0, theta)
        fuera = np.zeros(inputs.shape[:-1], dtype=bool)
        for j, (lo, hi) in enumerate(self.config.input_intervals()):
            fuera |= (inputs[..., j] < lo) | (inputs[..., j] > hi)
        return fuera

    def evaluate_flagged(self, t, x0, theta):
        """Evalúa y marca extrapolaciones en lugar de fallar"""
        fuera = self.extrapolated(t, x0, theta)
        if np.any(fuera):
            logger.warning(f'{int(np.sum(fuera))} evaluaciones fuera del dominio entrenado (extrapolación)')
        return self.evaluate(t, x0, theta), fuera

    # ---------- cinta ----------

    def record(self, tape, t, x0, theta, leaves=None):
        """Graba x̂ en la cinta; x0/theta pueden ser Var o valores"""
        x0 = list(x0)
        theta = list(theta)
        inputs = [t, *x0, *theta]
        if self.config.normalize_inputs:
            inputs = [(u - c) * (1.0 / s) for u, c, s in zip(inputs, self._centros, self._escalas)]
        salida = network.record_forward(self.params, tape, inputs, leaves)
        a = a_value(self.config.a_kind, t, self.config.t0)
        return [xi + a * ni for xi, ni in zip(x0, salida)]

    def record_residual(self, tape, t, x0, theta, leaves=None):
        """
        Graba ε = ∂x̂/∂t − f(t, x̂; θ). `t` debe ser la hoja sembrada con tangente 1.
        Devuelve (x̂, ε) como listas de Var.
        """
        xhat = self.record(tape, t, x0, theta, leaves)
        xdot = [dc.tangent_of(xi) for xi in xhat]
        return xhat, self.system.residual(xhat, xdot, t, self.config.full_theta(theta))

    def _components(self, t, x0, theta):
        inputs = stack_inputs(self.config, t, x0, theta)
        n = self.system.n
        t_c = inputs[..., 0]
        x_c = [inputs[..., 1 + i] for i in range(n)]
        th_c = [inputs[..., 1 + n + j] for j in range(len(self.config.free_params))]
        return t_c, x_c, th_c

    def evaluate_with_time_derivative(self, t, x0, theta):
        """(x̂, ∂x̂/∂t) por modo forward sembrado en t"""
        t_c, x_c, th_c = self._components(t, x0, theta)
        tape = dc.Tape()
        t_var = tape.leaf(t_c, tangent=1.0)
        xhat = self.record(tape, t_var, x_c, th_c)
        shape = t_c.shape
        valores = np.stack([np.broadcast_to(v.primal, shape) for v in xhat], axis=-1)
        derivadas = np.stack([np.broadcast_to(v.tangent, shape) for v in xhat], axis=-1)
        return valores, derivadas

    def residual(self, t, x0, theta):
        """ε(t; x₀, θ) componente a componente, forma (..., n)"""
        t_c, x_c, th_c = self._components(t, x0, theta)
        xhat, xdot = self.evaluate_with_time_derivative(t, x0, theta)
        n = self.system.n
        full = self.config.full_theta(th_c)
        res = self.system.residual([xhat[..., i] for i in range(n)], [xdot[..., i] for i in range(n)], t_c, full)
        return np.stack([np.broadcast_to(np.asarray(r, dtype=float), t_c.shape) for r in res], axis=-1)

    def jacobian_x0(self, t, x0, theta):
        """∂x̂/∂x₀ vía diffcore (n pasadas forward)"""
        t_c, x_c, th_c = self._components(t, x0, theta)
        return dc.input_jacobian(self, t_c, np.stack(x_c, axis=-1), np.stack(th_c, axis=-1) if th_c else np.zeros(0))


def evaluate(params, config, t, x0, theta):
    return Bundle(config, params).evaluate(t, x0, theta)


def evaluate_with_time_derivative(params, config, t, x0, theta):
    return Bundle(config, params).evaluate_with_time_derivative(t, x0, theta)
