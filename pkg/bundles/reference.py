"""
Integradores clásicos de paso fijo (RK4, Euler) como oráculo independiente,
métricas de error y la cota de error global de tipo Grönwall.
"""
from dataclasses import dataclass
import logging
import math

import numpy as np

from . import diffcore as dc
from .bundle import stack_inputs
from .exceptions import SingularityError
from .utils import write_csv

logger = logging.getLogger(__name__)

METHODS = ('rk4', 'euler')
RK4_COMBINATION_FLOPS = 34
EULER_COMBINATION_FLOPS = 2


def rk4_step(system, t, x, theta, h):
    """Un paso clásico de Runge-Kutta de orden 4; h puede variar por carril"""
    h = np.asarray(h, dtype=float)[..., None]
    k1 = system.rhs_array(t, x, theta)
    k2 = system.rhs_array(t + 0.5 * h[..., 0], x + 0.5 * h * k1, theta)
    k3 = system.rhs_array(t + 0.5 * h[..., 0], x + 0.5 * h * k2, theta)
    k4 = system.rhs_array(t + h[..., 0], x + h * k3, theta)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def euler_step(system, t, x, theta, h):
    h = np.asarray(h, dtype=float)[..., None]
    return x + h * system.rhs_array(t, x, theta)


STEPPERS = {'rk4': rk4_step, 'euler': euler_step}


def _stepper(method):
    try:
        return STEPPERS[method]
    except KeyError:
        raise ValueError(f'Método desconocido: {method!r} (use {", ".join(METHODS)})') from None


def integrate(system, x0, theta, t0, t_end, steps, method='rk4'):
    """
    Integra `steps` pasos iguales desde t₀ hasta t_end (por carril).
    x0 (..., n), theta (..., p) con p = parámetros completos del sistema.
    """
    if steps < 0:
        raise ValueError('steps debe ser >= 0')
    paso = _stepper(method)
    x = np.array(x0, dtype=float)
    theta = np.asarray(theta, dtype=float)
    t_end = np.asarray(t_end, dtype=float)
    lead = np.broadcast_shapes(x.shape[:-1], t_end.shape, theta.shape[:-1] if theta.ndim else ())
    x = np.broadcast_to(x, lead + x.shape[-1:]).copy()
    h = np.broadcast_to((t_end - t0) / max(steps, 1), lead)
    t = np.full(lead, float(t0))
    for k in range(steps):
        try:
            x = paso(system, t, x, theta, h)
        except SingularityError as e:
            raise e.at(float(np.min(t))) from e
        t = t0 + (k + 1) * h
    return x


@dataclass
class Trajectory:
    """Estados en una grilla uniforme (más un paso final parcial si hace falta)"""
    times: np.ndarray
    states: np.ndarray
    h: float
    method: str
    system: object = None
    theta: np.ndarray = None

    def state_at(self, t):
        """Modo con caché: parte del punto de grilla anterior y da un paso parcial"""
        t = float(t)
        if t < self.times[0] or t > self.times[-1]:
            raise ValueError(f't={t} fuera de la trayectoria [{self.times[0]}, {self.times[-1]}]')
        k = int(np.searchsorted(self.times, t, side='right')) - 1
        k = min(max(k, 0), len(self.times) - 1)
        dt = t - self.times[k]
        if dt == 0.0:
            return self.states[k].copy()
        return _stepper(self.method)(self.system, self.times[k], self.states[k], self.theta, dt)

    def to_rows(self):
        return [[t, *x] for t, x in zip(self.times, self.states)]

    def to_csv(self, path, labels=None):
        n = self.states.shape[-1]
        columnas = list(labels) if labels else [f'x{i + 1}' for i in range(n)]
        return write_csv(path, ['t', *columnas], self.to_rows())


def _solve(system, x0, theta, t0, t_end, h, method):
    if h <= 0:
        raise ValueError('El paso h debe ser > 0')
    if t_end < t0:
        raise ValueError('t_end debe ser >= t₀')
    paso = _stepper(method)
    theta = np.asarray(theta, dtype=float)
    completos = int(math.floor((t_end - t0) / h + 1e-9))
    times = [float(t0)]
    states = [np.asarray(x0, dtype=float)]
    x = states[0]
    for k in range(completos):
        t = t0 + k * h
        try:
            x = paso(system, t, x, theta, h)
        except SingularityError as e:
            raise e.at(t) from e
        times.append(t0 + (k + 1) * h)
        states.append(x)
    resto = t_end - times[-1]
    if resto > 1e-12 * h:
        try:
            x = paso(system, times[-1], x, theta, resto)
        except SingularityError as e:
            raise e.at(times[-1]) from e
        times.append(float(t_end))
        states.append(x)
    return Trajectory(np.array(times), np.array(states), h, method, system, theta)


def rk4_solve(system, x0, theta, t0, t_end, h):
    return _solve(system, x0, theta, t0, t_end, h, 'rk4')


def euler_solve(system, x0, theta, t0, t_end, h):
    return _solve(system, x0, theta, t0, t_end, h, 'euler')


def dense_state(system, x0, theta, t0, t, h, method='rk4'):
    """
    Consulta sin estado: integra desde t₀ hasta el paso que encierra a t y da un
    paso parcial. Admite t < t₀ (integración hacia atrás).
    """
    if h <= 0:
        raise ValueError('El paso h debe ser > 0')
    signo = 1.0 if t >= t0 else -1.0
    completos = int(math.floor(abs(t - t0) / h + 1e-9))
    x = integrate(system, x0, theta, t0, t0 + signo * completos * h, completos, method)
    resto = t - (t0 + signo * completos * h)
    if resto != 0.0:
        t_k = t0 + signo * completos * h
        try:
            x = _stepper(method)(system, t_k, x, theta, resto)
        except SingularityError as e:
            raise e.at(t_k) from e
    return x


# ==================== ERRORES ====================

def absolute_error(estimate, exact):
    """Media de los errores absolutos por componente, (|x̂ − x| + |v̂ − v|)/2 en 2D"""
    return np.mean(np.abs(np.asarray(estimate, dtype=float) - np.asarray(exact, dtype=float)), axis=-1)


def global_error_bound(eps_max, lipschitz, t, t0):
    """(ε_max/L)(e^{L(t−t₀)} − 1)"""
    if lipschitz <= 0:
        raise ValueError('La constante de Lipschitz debe ser > 0')
    eps_max = np.asarray(eps_max, dtype=float)
    if np.any(eps_max < 0):
        raise ValueError('ε_max debe ser >= 0')
    return eps_max / lipschitz * np.expm1(lipschitz * (np.asarray(t, dtype=float) - t0))


def error_bound_profile(times, residual_norms, lipschitz, t0):
    """Cota en cada t usando el máximo de |ε| sobre [t₀, t]"""
    times = np.asarray(times, dtype=float)
    norms = np.asarray(residual_norms, dtype=float)
    orden = np.argsort(times, kind='stable')
    acumulado = np.empty_like(norms)
    acumulado[orden] = np.maximum.accumulate(norms[orden])
    return global_error_bound(acumulado, lipschitz, times, t0)


def residual_scan(solution, x0, theta, times, componentwise=False):
    """|ε(t)| sobre una grilla de tiempos para un (x₀, θ) fijo"""
    times = np.asarray(times, dtype=float)
    res = solution.residual(times, x0, theta)
    if componentwise:
        return np.abs(res)
    return np.linalg.norm(res, axis=-1)


def empirical_order(errors, step_sizes):
    """Pendiente de mínimos cuadrados de log(error) contra log(h)"""
    errors = np.asarray(errors, dtype=float)
    step_sizes = np.asarray(step_sizes, dtype=float)
    if errors.shape != step_sizes.shape or errors.size < 2:
        raise ValueError('Se necesitan al menos dos pares (h, error)')
    pendiente, _ = np.polyfit(np.log(step_sizes), np.log(errors), 1)
    return float(pendiente)


def convergence_study(system, x0, theta, t0, t_end, exact, step_sizes, method='rk4'):
    """Error global en t_end para cada h de la lista"""
    errores = []
    for h in step_sizes:
        x = dense_state(system, x0, theta, t0, t_end, h, method)
        errores.append(float(np.max(np.abs(x - np.asarray(exact, dtype=float)))))
    return np.array(errores)


# ==================== SOLUCIONES DE REFERENCIA ====================

class ExactShoSolution:
    """
    Solución analítica del oscilador armónico:
    x = x₀cos(ωτ) + (v₀/ω)sin(ωτ), v = −x₀ω sin(ωτ) + v₀cos(ωτ), ω = √k, τ = t − t₀.
    """

    def __init__(self, config):
        if config.system.name != 'sho':
            raise ValueError('ExactShoSolution solo aplica al oscilador armónico')
        self.config = config

    def _parts(self, t, x0, theta):
        full = stack_inputs(self.config, t, x0, theta)
        tau = full[..., 0] - self.config.t0
        k = self.config.full_theta_array(full[..., 3:])[..., 0]
        return tau, full[..., 1], full[..., 2], np.sqrt(k)

    def evaluate(self, t, x0, theta):
        tau, x, v, w = self._parts(t, x0, theta)
        c, s = np.cos(w * tau), np.sin(w * tau)
        return np.stack([x * c + v / w * s, -x * w * s + v * c], axis=-1)

    evaluate_batch = evaluate

    def evaluate_with_time_derivative(self, t, x0, theta):
        estado = self.evaluate(t, x0, theta)
        _, _, _, w = self._parts(t, x0, theta)
        return estado, np.stack([estado[..., 1], -w * w * estado[..., 0]], axis=-1)

    def residual(self, t, x0, theta):
        estado, derivada = self.evaluate_with_time_derivative(t, x0, theta)
        _, _, _, w = self._parts(t, x0, theta)
        return derivada - np.stack([estado[..., 1], -w * w * estado[..., 0]], axis=-1)

    def record(self, tape, t, x0, theta, leaves=None):
        x, v = list(x0)
        (k,) = self.config.full_theta(list(theta))
        w = dc.sqrt(k)
        fase = w * (t - self.config.t0)
        c, s = dc.cos(fase), dc.sin(fase)
        return [x * c + v / w * s, -(x * w) * s + v * c]

    def jacobian_x0(self, t, x0, theta):
        tau, _, _, w = self._parts(t, x0, theta)
        c, s = np.cos(w * tau), np.sin(w * tau)
        jac = np.empty(tau.shape + (2, 2))
        jac[..., 0, 0] = c
        jac[..., 0, 1] = s / w
        jac[..., 1, 0] = -w * s
        jac[..., 1, 1] = c
        return jac


class OracleSolution:
    """
    Solución numérica con RK4 (o Euler) desde t₀ en cada consulta. La derivada
    temporal y el jacobiano salen por diferencias centradas del propio oráculo.
    """

    def __init__(self, config, h=1e-3, method='rk4', fd_step=1e-4, jacobian_step=1e-6):
        _stepper(method)
        self.config = config
        self.h = float(h)
        self.method = method
        self.fd_step = float(fd_step)
        self.jacobian_step = float(jacobian_step)

    def evaluate(self, t, x0, theta):
        full = stack_inputs(self.config, t, x0, theta)
        n = self.config.system.n
        t = full[..., 0]
        alcance = float(np.max(np.abs(t - self.config.t0))) if t.size else 0.0
        pasos = max(1, int(math.ceil(alcance / self.h - 1e-9)))
        theta_full = self.config.full_theta_array(full[..., 1 + n:])
        return integrate(self.config.system, full[..., 1:1 + n], theta_full, self.config.t0, t, pasos, self.method)

    evaluate_batch = evaluate

    def evaluate_with_time_derivative(self, t, x0, theta):
        t = np.asarray(t, dtype=float)
        d = self.fd_step
        derivada = (self.evaluate(t + d, x0, theta) - self.evaluate(t - d, x0, theta)) / (2.0 * d)
        return self.evaluate(t, x0, theta), derivada

    def residual(self, t, x0, theta):
        full = stack_inputs(self.config, t, x0, theta)
        n = self.config.system.n
        estado, derivada = self.evaluate_with_time_derivative(full[..., 0], full[..., 1:1 + n], full[..., 1 + n:])
        f = self.config.system.rhs_array(full[..., 0], estado, self.config.full_theta_array(full[..., 1 + n:]))
        return derivada - f

    def jacobian_x0(self, t, x0, theta):
        full = stack_inputs(self.config, t, x0, theta)
        n = self.config.system.n
        base = full[..., 1:1 + n]
        d = self.jacobian_step
        jac = np.empty(full.shape[:-1] + (n, n))
        for j in range(n):
            delta = np.zeros(n)
            delta[j] = d
            arriba = self.evaluate(full[..., 0], base + delta, full[..., 1 + n:])
            abajo = self.evaluate(full[..., 0], base - delta, full[..., 1 + n:])
            jac[..., :, j] = (arriba - abajo) / (2.0 * d)
        return jac

    def record(self, tape, t, x0, theta, leaves=None):
        raise NotImplementedError('El oráculo numérico no se puede grabar en la cinta')
