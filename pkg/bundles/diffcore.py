"""
Diferenciación automática escalar sobre una cinta grabada.

Cada nodo lleva dos canales: el valor primal y la tangente respecto de una
única dirección sembrada (normalmente el tiempo). La acumulación reversa recorre
la misma cinta y propaga adjuntos de ambos canales, de modo que el gradiente de
una pérdida que contiene ∂x̂/∂t respecto de los pesos sale de una sola pasada
(forward-over-reverse).

Los valores pueden ser escalares o vectores de "carriles" (lanes): cada carril es
un punto independiente del batch, equivalente a una cinta por punto. Las hojas
constantes entre carriles (los pesos de la red) acumulan la suma ordenada de los
adjuntos de todos los carriles.
"""
from dataclasses import dataclass
import logging

import numpy as np

from .exceptions import DomainError

logger = logging.getLogger(__name__)

SUPPORTED_OPS = frozenset({
    'add', 'sub', 'neg', 'mul', 'div', 'pow', 'powv', 'exp', 'tanh', 'sin', 'cos',
    'sqrt', 'max', 'abs', 'heaviside', 'dot', 'tangent',
})


@dataclass(frozen=True)
class DualValue:
    """Par (primal, tangente) de un nodo"""
    primal: object
    tangent: object


@dataclass(frozen=True)
class GradientVector:
    """Gradiente en el orden canónico de parámetros (ver NetworkParams)"""
    entries: np.ndarray

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, k):
        return self.entries[k]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


class Node:
    """Nodo de la cinta: operación, operandos, canales y derivadas locales"""
    __slots__ = ('op', 'args', 'primal', 'tangent', 'local', 'param')

    def __init__(self, op, args, primal, tangent, local=None, param=None):
        self.op = op
        self.args = args
        self.primal = primal
        self.tangent = tangent
        self.local = local
        self.param = param


# ==================== REGLAS POR OPERACIÓN ====================
# apply(args, param) -> (primal, tangente, derivadas locales)
# backward(node, args, gp, gd) -> [(adjunto primal, adjunto tangente) por operando]
# Un adjunto None equivale a cero.

def _mul(g, c):
    return None if g is None else g * c


def _plus(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _apply_add(args, param):
    a, b = args
    return a.primal + b.primal, a.tangent + b.tangent, None


def _back_add(node, args, gp, gd):
    return [(gp, gd), (gp, gd)]


def _apply_sub(args, param):
    a, b = args
    return a.primal - b.primal, a.tangent - b.tangent, None


def _back_sub(node, args, gp, gd):
    return [(gp, gd), (_mul(gp, -1.0), _mul(gd, -1.0))]


def _apply_neg(args, param):
    (a,) = args
    return -a.primal, -a.tangent, None


def _back_neg(node, args, gp, gd):
    return [(_mul(gp, -1.0), _mul(gd, -1.0))]


def _apply_mul(args, param):
    a, b = args
    return a.primal * b.primal, a.tangent * b.primal + a.primal * b.tangent, None


def _back_mul(node, args, gp, gd):
    a, b = args
    adj_a = _plus(_mul(gp, b.primal), _mul(gd, b.tangent))
    adj_b = _plus(_mul(gp, a.primal), _mul(gd, a.tangent))
    return [(adj_a, _mul(gd, b.primal)), (adj_b, _mul(gd, a.primal))]


def _apply_div(args, param):
    a, b = args
    if np.any(np.asarray(b.primal) == 0):
        raise DomainError('división por cero')
    y = a.primal / b.primal
    return y, (a.tangent - y * b.tangent) / b.primal, None


def _back_div(node, args, gp, gd):
    a, b = args
    y = node.primal
    inv = 1.0 / b.primal
    adj_a = _plus(_mul(gp, inv), _mul(gd, -b.tangent * inv * inv))
    # ∂²y/∂a∂b = -1/b², ∂²y/∂b² = 2y/b²
    curv_b = (-a.tangent + 2.0 * y * b.tangent) * inv * inv
    adj_b = _plus(_mul(gp, -y * inv), _mul(gd, curv_b))
    return [(adj_a, _mul(gd, inv)), (adj_b, _mul(gd, -y * inv))]


def _apply_unary(fn):
    def apply(args, param):
        (a,) = args
        y, jac, hess = fn(a.primal, param)
        return y, jac * a.tangent, (jac, hess)
    return apply


def _back_unary(node, args, gp, gd):
    (a,) = args
    jac, hess = node.local
    adj_p = _plus(_mul(gp, jac), _mul(gd, hess * a.tangent))
    return [(adj_p, _mul(gd, jac))]


def _rule_exp(u, param):
    y = np.exp(u)
    return y, y, y


def _rule_tanh(u, param):
    y = np.tanh(u)
    jac = 1.0 - y * y
    return y, jac, -2.0 * y * jac


def _rule_sin(u, param):
    s = np.sin(u)
    c = np.cos(u)
    return s, c, -s


def _rule_cos(u, param):
    s = np.sin(u)
    c = np.cos(u)
    return c, -s, -c


def _rule_sqrt(u, param):
    if np.any(np.asarray(u) < 0):
        raise DomainError('raíz cuadrada de un número negativo')
    y = np.sqrt(u)
    with np.errstate(divide='ignore'):
        jac = 0.5 / y
        hess = -0.25 / (y * y * y)
    return y, jac, hess


def _rule_abs(u, param):
    s = np.sign(u)
    return np.abs(u), s, 0.0 * s


def _rule_pow(u, c):
    u_arr = np.asarray(u)
    entero = float(c).is_integer()
    if not entero and np.any(u_arr < 0):
        raise DomainError(f'potencia no entera ({c}) de base negativa')
    if c < 0 and np.any(u_arr == 0):
        raise DomainError(f'potencia negativa ({c}) de cero')
    y = u ** c
    if c == 0:
        return y, 0.0 * u_arr, 0.0 * u_arr
    if c == 1:
        return y, 1.0 + 0.0 * u_arr, 0.0 * u_arr
    with np.errstate(divide='ignore', invalid='ignore'):
        jac = c * u ** (c - 1)
        hess = c * (c - 1) * u ** (c - 2) if c != 2 else 2.0 + 0.0 * u_arr
    return y, jac, hess


def _apply_powv(args, param):
    a, b = args
    if np.any(np.asarray(a.primal) <= 0):
        raise DomainError('potencia con exponente variable requiere base positiva')
    ln = np.log(a.primal)
    y = a.primal ** b.primal
    ja = b.primal * a.primal ** (b.primal - 1.0)
    jb = y * ln
    return y, ja * a.tangent + jb * b.tangent, (ja, jb, ln)


def _back_powv(node, args, gp, gd):
    a, b = args
    ja, jb, ln = node.local
    y = node.primal
    u, v = a.primal, b.primal
    haa = v * (v - 1.0) * u ** (v - 2.0)
    hab = u ** (v - 1.0) * (1.0 + v * ln)
    hbb = y * ln * ln
    adj_a = _plus(_mul(gp, ja), _mul(gd, haa * a.tangent + hab * b.tangent))
    adj_b = _plus(_mul(gp, jb), _mul(gd, hab * a.tangent + hbb * b.tangent))
    return [(adj_a, _mul(gd, ja)), (adj_b, _mul(gd, jb))]


def _apply_max(args, param):
    a, b = args
    # empate: el subgradiente va al primer operando
    mask = (np.asarray(a.primal) >= np.asarray(b.primal)).astype(float)
    y = mask * a.primal + (1.0 - mask) * b.primal
    return y, mask * a.tangent + (1.0 - mask) * b.tangent, mask


def _back_max(node, args, gp, gd):
    mask = node.local
    rest = 1.0 - mask
    return [(_mul(gp, mask), _mul(gd, mask)), (_mul(gp, rest), _mul(gd, rest))]


def _apply_heaviside(args, param):
    (a,) = args
    y = (np.asarray(a.primal) > 0).astype(float)
    return y, 0.0 * y, None


def _back_zero(node, args, gp, gd):
    return [(None, None) for _ in args]


def _apply_tangent(args, param):
    (a,) = args
    y = np.asarray(a.tangent, dtype=float) + 0.0 * np.asarray(a.primal)
    return y, 0.0 * y, None


def _back_tangent(node, args, gp, gd):
    # el adjunto primal de este nodo alimenta el canal tangente del operando
    return [(None, gp)]


def _apply_dot(args, k):
    xs, ws, bias = args[:k], args[k:2 * k], args[2 * k]
    y = bias.primal
    yt = bias.tangent
    for x, w in zip(xs, ws):
        y = y + w.primal * x.primal
        yt = yt + w.tangent * x.primal + w.primal * x.tangent
    return y, yt, None


def _back_dot(node, args, gp, gd):
    k = node.param
    xs, ws = args[:k], args[k:2 * k]
    out_x = []
    out_w = []
    for x, w in zip(xs, ws):
        out_x.append((_plus(_mul(gp, w.primal), _mul(gd, w.tangent)), _mul(gd, w.primal)))
        out_w.append((_plus(_mul(gp, x.primal), _mul(gd, x.tangent)), _mul(gd, x.primal)))
    return out_x + out_w + [(gp, gd)]


_RULES = {
    'add': (_apply_add, _back_add),
    'sub': (_apply_sub, _back_sub),
    'neg': (_apply_neg, _back_neg),
    'mul': (_apply_mul, _back_mul),
    'div': (_apply_div, _back_div),
    'pow': (_apply_unary(_rule_pow), _back_unary),
    'powv': (_apply_powv, _back_powv),
    'exp': (_apply_unary(_rule_exp), _back_unary),
    'tanh': (_apply_unary(_rule_tanh), _back_unary),
    'sin': (_apply_unary(_rule_sin), _back_unary),
    'cos': (_apply_unary(_rule_cos), _back_unary),
    'sqrt': (_apply_unary(_rule_sqrt), _back_unary),
    'abs': (_apply_unary(_rule_abs), _back_unary),
    'max': (_apply_max, _back_max),
    'heaviside': (_apply_heaviside, _back_zero),
    'tangent': (_apply_tangent, _back_tangent),
    'dot': (_apply_dot, _back_dot),
}


# ==================== CINTA ====================

class Tape:
    """
    Grafo grabado en orden topológico.

    `leaves` mapea índice de parámetro -> índice de nodo; solo las hojas
    registradas con índice aparecen en el GradientVector.
    """

    def __init__(self):
        self.nodes = []
        self.leaves = {}

    def __len__(self):
        return len(self.nodes)

    def _push(self, node):
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value, tangent=0.0, index=None):
        """Hoja de entrada; `tangent` es su componente en la dirección sembrada"""
        if index is not None:
            if index in self.leaves:
                raise ValueError(f'El parámetro {index} ya tiene hoja en la cinta')
            self.leaves[index] = len(self.nodes)
        return self._push(Node('leaf', (), np.asarray(value, dtype=float), tangent))

    def constant(self, value):
        return self._push(Node('const', (), np.asarray(value, dtype=float), 0.0))

    def record(self, op, operands, param=None):
        args = tuple(self.lift(v).index for v in operands)
        apply, _ = _RULES[op]
        primal, tangent, local = apply([self.nodes[j] for j in args], param)
        return self._push(Node(op, args, primal, tangent, local, param))

    def lift(self, value):
        """Convierte constantes en nodos; rechaza variables de otra cinta"""
        if isinstance(value, Var):
            if value.tape is not self:
                raise ValueError('No se pueden mezclar variables de cintas distintas')
            return value
        return self.constant(value)

    def replay(self):
        """Recalcula todos los canales desde las hojas; devuelve los primales"""
        fresh = []
        for node in self.nodes:
            if not node.args:
                fresh.append(node)
                continue
            apply, _ = _RULES[node.op]
            primal, tangent, local = apply([fresh[j] for j in node.args], node.param)
            fresh.append(Node(node.op, node.args, primal, tangent, local, node.param))
        return [n.primal for n in fresh]

    def adjoints(self, output, seed=1.0):
        """
        Acumulación reversa desde `output`.
        Devuelve (adjuntos primales, adjuntos tangentes) por nodo; None = cero.
        """
        out = output.index
        nodes = self.nodes
        gp = [None] * (out + 1)
        gd = [None] * (out + 1)
        gp[out] = np.ones_like(np.asarray(nodes[out].primal, dtype=float)) * seed
        for i in range(out, -1, -1):
            p, d = gp[i], gd[i]
            if p is None and d is None:
                continue
            node = nodes[i]
            if not node.args:
                continue
            _, backward = _RULES[node.op]
            contribuciones = backward(node, [nodes[j] for j in node.args], p, d)
            for j, (cp, cd) in zip(node.args, contribuciones):
                if cp is not None:
                    gp[j] = cp if gp[j] is None else gp[j] + cp
                if cd is not None:
                    gd[j] = cd if gd[j] is None else gd[j] + cd
        return gp, gd


class Var:
    """Referencia a un nodo de la cinta con sobrecarga de operadores"""
    __slots__ = ('tape', 'index')
    # ndarray op Var delega en los métodos reflejados de Var
    __array_ufunc__ = None

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def node(self):
        return self.tape.nodes[self.index]

    @property
    def primal(self):
        return self.node.primal

    @property
    def tangent(self):
        return self.node.tangent

    def dual(self):
        return DualValue(self.primal, self.tangent)

    def __repr__(self):
        return f'Var({self.node.op}#{self.index}, primal={self.primal!r})'

    def __add__(self, other):
        return self.tape.record('add', (self, other))

    def __radd__(self, other):
        return self.tape.record('add', (other, self))

    def __sub__(self, other):
        return self.tape.record('sub', (self, other))

    def __rsub__(self, other):
        return self.tape.record('sub', (other, self))

    def __mul__(self, other):
        return self.tape.record('mul', (self, other))

    def __rmul__(self, other):
        return self.tape.record('mul', (other, self))

    def __truediv__(self, other):
        return self.tape.record('div', (self, other))

    def __rtruediv__(self, other):
        return self.tape.record('div', (other, self))

    def __neg__(self):
        return self.tape.record('neg', (self,))

    def __pow__(self, exponent):
        if isinstance(exponent, Var):
            return self.tape.record('powv', (self, exponent))
        return self.tape.record('pow', (self,), param=float(exponent))

    def __rpow__(self, base):
        return self.tape.record('powv', (base, self))


# ==================== FUNCIONES ELEMENTALES ====================
# Aceptan Var (se graban en la cinta) o valores numpy (se evalúan directo),
# así los campos de odezoo se escriben una sola vez para ambos usos.

def _find_tape(*values):
    for v in values:
        if isinstance(v, Var):
            return v.tape
    return None


def _unary(op, numpy_fn):
    def fn(x):
        if isinstance(x, Var):
            return x.tape.record(op, (x,))
        return numpy_fn(x)
    fn.__name__ = op
    return fn


exp = _unary('exp', np.exp)
tanh = _unary('tanh', np.tanh)
sin = _unary('sin', np.sin)
cos = _unary('cos', np.cos)
sqrt = _unary('sqrt', np.sqrt)
absolute = _unary('abs', np.abs)
heaviside = _unary('heaviside', lambda x: (np.asarray(x) > 0).astype(float))


def maximum(a, b):
    tape = _find_tape(a, b)
    if tape is None:
        return np.maximum(a, b)
    return tape.record('max', (a, b))


def relu(x):
    return maximum(x, 0.0)


def tangent_of(x):
    """Nodo cuyo primal es la tangente de `x` (∂x/∂dirección sembrada)"""
    if not isinstance(x, Var):
        return 0.0 * np.asarray(x, dtype=float)
    return x.tape.record('tangent', (x,))


def dot(weights, inputs, bias):
    """Σ wᵢ·xᵢ + b como un solo nodo"""
    weights = list(weights)
    inputs = list(inputs)
    if len(weights) != len(inputs):
        raise ValueError(f'dot: {len(weights)} pesos para {len(inputs)} entradas')
    tape = _find_tape(bias, *weights, *inputs)
    if tape is None:
        total = bias
        for w, x in zip(weights, inputs):
            total = total + w * x
        return total
    return tape.record('dot', (*inputs, *weights, bias), param=len(weights))


def primal(x):
    """Valor primal de un Var o del valor numérico tal cual"""
    return x.primal if isinstance(x, Var) else np.asarray(x, dtype=float)


# ==================== OPERACIONES ====================

def eval_dual(expr, leaves, tangent_seed):
    """
    Evalúa `expr(*vars)` sembrando la tangente en la hoja `tangent_seed`.
    Devuelve DualValue(f, ∂f/∂hoja).
    """
    leaves = list(leaves)
    if not 0 <= tangent_seed < len(leaves):
        raise ValueError(f'tangent_seed={tangent_seed} no identifica una hoja (hay {len(leaves)})')
    tape = Tape()
    variables = [
        tape.leaf(value, tangent=1.0 if i == tangent_seed else 0.0, index=i)
        for i, value in enumerate(leaves)
    ]
    out = expr(*variables)
    if not isinstance(out, Var):
        return DualValue(np.asarray(out, dtype=float), 0.0)
    return out.dual()


def reverse_gradient(tape, output, seed=1.0):
    """
    ∂output/∂hoja para cada hoja registrada, en orden de índice de parámetro.
    Con carriles, cada entrada es la suma ordenada sobre los carriles.
    """
    gp, _ = tape.adjoints(output, seed=seed)
    size = len(tape.leaves)
    entries = np.zeros(size)
    for k in range(size):
        try:
            node_index = tape.leaves[k]
        except KeyError:
            raise ValueError(f'Los índices de parámetro no son contiguos: falta {k}') from None
        adj = gp[node_index] if node_index < len(gp) else None
        if adj is not None:
            entries[k] = float(np.sum(adj))
    return GradientVector(entries)


def forward_jacobian(fn, inputs, wrt):
    """
    Jacobiano de `fn(tape, vars) -> [salidas]` respecto de las entradas `wrt`,
    una pasada forward por columna. Con carriles devuelve forma (L, m, len(wrt)).
    """
    columnas = []
    for j in wrt:
        tape = Tape()
        variables = [tape.leaf(v, tangent=1.0 if i == j else 0.0) for i, v in enumerate(inputs)]
        outs = fn(tape, variables)
        columnas.append([np.asarray(o.tangent if isinstance(o, Var) else 0.0, dtype=float) for o in outs])
    m = len(columnas[0]) if columnas else 0
    lanes = np.broadcast_shapes(*(np.shape(np.asarray(v)) for v in inputs), *(c.shape for col in columnas for c in col))
    jac = np.zeros(lanes + (m, len(wrt)))
    for col, valores in enumerate(columnas):
        for row, valor in enumerate(valores):
            jac[..., row, col] = valor
    return jac


def input_jacobian(solution, t, x0, theta):
    """
    ∂x̂/∂x₀ (n×n) de una solución que sabe grabarse en la cinta
    (`solution.record(tape, t, x0_vars, theta_vars)`), n pasadas forward.
    """
    x0 = [np.asarray(v, dtype=float) for v in np.moveaxis(np.asarray(x0, dtype=float), -1, 0)]
    theta = [np.asarray(v, dtype=float) for v in np.moveaxis(np.atleast_1d(np.asarray(theta, dtype=float)), -1, 0)] \
        if np.size(theta) else []
    n = len(x0)
    inputs = [np.asarray(t, dtype=float), *x0, *theta]

    def fn(tape, variables):
        return solution.record(tape, variables[0], variables[1:1 + n], variables[1 + n:])

    return forward_jacobian(fn, inputs, list(range(1, 1 + n)))
