"""
Entrenamiento del bundle: muestreo de batches, pérdida ponderada del residuo,
currículum sobre el horizonte temporal, Adam con reducción en meseta y el
ciclo completo con checkpoints y registro de pérdidas.
"""
from collections import deque
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, field, replace
import logging
import math
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import network
from . import reference
from .bundle import Bundle
from .exceptions import CheckpointError, NumericalFailure

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ('batch', 'raw_loss', 'smoothed_loss', 'lr', 't_horizon', 'lambda')
DEFAULT_SMOOTHING_WINDOW = 10000
LN_11 = math.log(11.0)
LN_100 = math.log(100.0)

WEIGHTING_KINDS = ('constant', 'exp_decay')
DECAY_KINDS = ('constant', 'fixed', 'curriculum', 'anneal')


# ==================== CONFIGURACIÓN ====================

@dataclass(frozen=True)
class WeightingFn:
    """b(t): constante o exp(−λ(t − t₀))"""
    kind: str = 'exp_decay'
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in WEIGHTING_KINDS:
            raise ValueError(f'Tipo de ponderación desconocido: {self.kind}')
        if self.lam < 0:
            raise ValueError('λ debe ser >= 0')

    def __call__(self, t, t0):
        t = np.asarray(t, dtype=float)
        if self.kind == 'constant':
            return np.ones_like(t)
        return np.exp(-self.lam * (t - t0))


@dataclass(frozen=True)
class CurriculumSchedule:
    """
    Horizonte de muestreo y decaimiento de b(t) en función del batch m.

    decay: 'constant' (b ≡ 1), 'fixed' (λ de la configuración), 'curriculum'
    (λ_m = 4/(t_m + 5)) o 'anneal' (λ_m = exp(−ln(100)·m/M)).
    """
    enabled: bool = False
    total_batches: int = 1
    decay: str = 'fixed'
    lam: float = 0.0

    def __post_init__(self):
        if self.decay not in DECAY_KINDS:
            raise ValueError(f'Tipo de decaimiento desconocido: {self.decay}')
        if self.total_batches < 1:
            raise ValueError('total_batches debe ser >= 1')

    def to_dict(self):
        return {'enabled': self.enabled, 'total_batches': self.total_batches, 'decay': self.decay, 'lambda': self.lam}


def curriculum_horizon(m, total_batches, t0, tf):
    """t_m = t₀ + (t_f − t₀)/ln 11 · ln(10·m/M + 1); llega a t_f en m = M"""
    m = min(max(int(m), 0), total_batches)
    if m == total_batches:
        return float(tf)
    return t0 + (tf - t0) / LN_11 * math.log(10.0 * m / total_batches + 1.0)


def horizon_for_batch(schedule, m, t0, tf):
    if not schedule.enabled:
        return float(tf)
    return curriculum_horizon(m, schedule.total_batches, t0, tf)


def lambda_for_batch(schedule, m, t0, tf):
    """λ vigente en el batch m según el tipo de decaimiento"""
    if schedule.decay == 'constant':
        return 0.0
    if schedule.decay == 'fixed':
        return float(schedule.lam)
    if schedule.decay == 'curriculum':
        return 4.0 / (horizon_for_batch(schedule, m, t0, tf) - t0 + 5.0)
    m = min(max(int(m), 0), schedule.total_batches)
    return math.exp(-LN_100 * m / schedule.total_batches)


def weighting_for_batch(schedule, m, t0, tf):
    if schedule.decay == 'constant':
        return WeightingFn('constant')
    return WeightingFn('exp_decay', lambda_for_batch(schedule, m, t0, tf))


@dataclass(frozen=True)
class PlateauConfig:
    """Reducción de η en meseta, medida sobre la pérdida suavizada"""
    factor: float = 0.5
    patience: int = 200000
    threshold: float = 1e-4
    threshold_mode: str = 'rel'
    cooldown: int = 0
    min_lr: float = 0.0
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError('El factor de reducción debe estar en (0, 1)')
        if self.threshold_mode not in ('rel', 'abs'):
            raise ValueError("threshold_mode debe ser 'rel' o 'abs'")
        if self.patience < 0 or self.cooldown < 0 or self.min_lr < 0:
            raise ValueError('patience, cooldown y min_lr deben ser >= 0')

    def to_dict(self):
        return {
            'factor': self.factor, 'patience': self.patience, 'threshold': self.threshold,
            'threshold_mode': self.threshold_mode, 'cooldown': self.cooldown,
            'min_lr': self.min_lr, 'eps': self.eps,
        }


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau: PlateauConfig = None
    batch_size: int = 1024
    total_batches: int = 1000
    seed: int = 0
    lr_overrides: tuple = ()

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError('La tasa de aprendizaje debe ser > 0')
        if self.batch_size < 1 or self.total_batches < 1:
            raise ValueError('batch_size y total_batches deben ser >= 1')
        overrides = tuple(sorted((int(b), float(lr)) for b, lr in self.lr_overrides))
        if any(lr <= 0 for _, lr in overrides):
            raise ValueError('Los cambios manuales de η deben ser > 0')
        object.__setattr__(self, 'lr_overrides', overrides)

    def to_dict(self):
        return {
            'lr': self.lr, 'beta1': self.beta1, 'beta2': self.beta2, 'eps': self.eps,
            'plateau': self.plateau.to_dict() if self.plateau else None,
            'batch_size': self.batch_size, 'total_batches': self.total_batches,
            'seed': self.seed, 'lr_overrides': [list(o) for o in self.lr_overrides],
        }


@dataclass(frozen=True)
class TrainingConfig:
    optimizer: OptimizerConfig
    curriculum: CurriculumSchedule
    checkpoint_every: int = 1000
    log_every: int = 100
    smoothing_window: int = DEFAULT_SMOOTHING_WINDOW

    def to_dict(self):
        return {
            'optimizer': self.optimizer.to_dict(),
            'curriculum': self.curriculum.to_dict(),
            'checkpoint_every': self.checkpoint_every,
            'log_every': self.log_every,
            'smoothing_window': self.smoothing_window,
        }


# ==================== MUESTREO Y PÉRDIDA ====================

@dataclass
class BatchSample:
    """Batch en forma de carriles: t (B,), x₀ (B, n), θ (B, p_libres)"""
    t: np.ndarray
    x0: np.ndarray
    theta: np.ndarray

    def __len__(self):
        return len(self.t)

    def points(self):
        return [(self.t[i], self.x0[i], self.theta[i]) for i in range(len(self))]

    def subset(self, index):
        return BatchSample(self.t[index], self.x0[index], self.theta[index])


def sample_batch(config, m, rng, batch_size, schedule=None):
    """Muestra uniforme sobre [t₀ − δ, t_m] × X₀ × Θ; siempre puntos nuevos"""
    t_lo = config.t0 - config.train_time_margin
    t_hi = horizon_for_batch(schedule, m, config.t0, config.tf) if schedule else config.tf
    x0_box = np.asarray(config.x0_box, dtype=float)
    theta_box = np.asarray(config.theta_box, dtype=float).reshape(-1, 2)
    t = rng.uniform(t_lo, t_hi, size=batch_size)
    x0 = rng.uniform(x0_box[:, 0], x0_box[:, 1], size=(batch_size, len(x0_box)))
    theta = rng.uniform(theta_box[:, 0], theta_box[:, 1], size=(batch_size, len(theta_box)))
    return BatchSample(t, x0, theta)


def _record_loss(bundle, batch, weighting, with_gradient):
    """Graba Σ_carriles b(t)|ε|² en una cinta; devuelve (cinta, nodo por carril)"""
    tape = dc.Tape()
    leaves = network.register_parameters(bundle.params, tape) if with_gradient else None
    n = bundle.system.n
    t = tape.leaf(batch.t, tangent=1.0)
    x0 = [batch.x0[:, i] for i in range(n)]
    theta = [batch.theta[:, j] for j in range(batch.theta.shape[1])]
    _, residuo = bundle.record_residual(tape, t, x0, theta, leaves)
    cuadrado = residuo[0] * residuo[0]
    for r in residuo[1:]:
        cuadrado = cuadrado + r * r
    return tape, cuadrado * weighting(batch.t, bundle.config.t0)


def _chunk_loss(bundle, batch, weighting):
    tape, por_carril = _record_loss(bundle, batch, weighting, with_gradient=True)
    total = float(np.sum(por_carril.primal))
    gradiente = dc.reverse_gradient(tape, por_carril)
    return total, np.asarray(gradiente, dtype=float)


def loss(params, batch, weighting, bundle):
    """L = (1/|B|) Σ b(tᵢ)|G(x̂, ∂x̂/∂t, tᵢ; θᵢ)|²"""
    bundle = bundle.with_params(params)
    _, por_carril = _record_loss(bundle, batch, weighting, with_gradient=False)
    return float(np.sum(por_carril.primal)) / len(batch)


def loss_and_gradient(params, batch, weighting, bundle, threads=1):
    """
    Pérdida y gradiente por acumulación reversa. Con threads > 1 el batch se
    parte en tramos contiguos y las sumas se reducen en orden de tramo.
    """
    bundle = bundle.with_params(params)
    tramos = [idx for idx in np.array_split(np.arange(len(batch)), max(1, int(threads))) if len(idx)]
    if len(tramos) == 1:
        resultados = [_chunk_loss(bundle, batch, weighting)]
    else:
        with ThreadPoolExecutor(max_workers=len(tramos)) as pool:
            resultados = list(pool.map(lambda idx: _chunk_loss(bundle, batch.subset(idx), weighting), tramos))
    total = 0.0
    gradiente = np.zeros(params.count)
    for valor, grad in resultados:
        total += valor
        gradiente += grad
    escala = 1.0 / len(batch)
    return total * escala, dc.GradientVector(gradiente * escala)


# ==================== OPTIMIZADOR ====================

@dataclass
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, size):
        return cls(0, np.zeros(size), np.zeros(size))

    def to_dict(self):
        return {'step': self.step, 'm': network.encode_array(self.m), 'v': network.encode_array(self.v)}

    @classmethod
    def from_dict(cls, data):
        return cls(int(data['step']), network.decode_array(data['m']), network.decode_array(data['v']))


def adam_update(flat, gradient, state, lr, config):
    """Un paso de Adam con momentos corregidos por sesgo"""
    g = np.asarray(gradient, dtype=float)
    step = state.step + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * g
    v = config.beta2 * state.v + (1.0 - config.beta2) * g * g
    m_hat = m / (1.0 - config.beta1 ** step)
    v_hat = v / (1.0 - config.beta2 ** step)
    nuevo = np.asarray(flat, dtype=float) - lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return nuevo, AdamState(step, m, v)


class PlateauScheduler:
    """
    Reduce η cuando la métrica no mejora durante `patience` batches.

    Mejora (modo rel): métrica < mejor·(1 − threshold); (modo abs): métrica < mejor − threshold.
    Tras `patience` batches consecutivos sin mejora, η ← max(η·factor, min_lr),
    salvo que el cambio sea menor que `eps`. Luego corre `cooldown` batches sin contar.
    """

    def __init__(self, config, lr):
        self.config = config
        self.lr = float(lr)
        self.best = math.inf
        self.num_bad = 0
        self.cooldown_counter = 0
        self.reductions = 0

    def is_better(self, metric):
        if self.config.threshold_mode == 'rel':
            return metric < self.best * (1.0 - self.config.threshold)
        return metric < self.best - self.config.threshold

    def step(self, metric):
        metric = float(metric)
        if self.is_better(metric):
            self.best = metric
            self.num_bad = 0
        else:
            self.num_bad += 1
        if self.cooldown_counter > 0:
            self.cooldown_counter -= 1
            self.num_bad = 0
        if self.num_bad >= self.config.patience and self.num_bad > 0:
            nuevo = max(self.lr * self.config.factor, self.config.min_lr)
            if self.lr - nuevo > self.config.eps:
                logger.info(f'Meseta detectada: η {self.lr:.3g} -> {nuevo:.3g}')
                self.lr = nuevo
                self.reductions += 1
            self.cooldown_counter = self.config.cooldown
            self.num_bad = 0
        return self.lr

    def reset(self, lr):
        self.lr = float(lr)
        self.best = math.inf
        self.num_bad = 0
        self.cooldown_counter = 0

    def state(self):
        return {
            'lr': network.encode_array([self.lr])[0],
            'best': 'inf' if math.isinf(self.best) else network.encode_array([self.best])[0],
            'num_bad': self.num_bad,
            'cooldown_counter': self.cooldown_counter,
            'reductions': self.reductions,
        }

    @classmethod
    def from_state(cls, config, data):
        sched = cls(config, float(data['lr']))
        sched.best = float(data['best'])
        sched.num_bad = int(data['num_bad'])
        sched.cooldown_counter = int(data['cooldown_counter'])
        sched.reductions = int(data.get('reductions', 0))
        return sched


class MovingAverage:
    """Media móvil de ventana fija con suma acumulada"""

    def __init__(self, window, values=(), total=None):
        if window < 1:
            raise ValueError('La ventana debe ser >= 1')
        self.window = int(window)
        self.values = deque((float(v) for v in values), maxlen=self.window)
        self.total = float(total) if total is not None else float(sum(self.values))

    def push(self, value):
        value = float(value)
        if len(self.values) == self.window:
            self.total -= self.values[0]
        self.values.append(value)
        self.total += value
        return self.value

    @property
    def value(self):
        return self.total / len(self.values) if self.values else math.nan

    def state(self):
        return {
            'window': self.window,
            'values': network.encode_array(list(self.values)),
            'total': network.encode_array([self.total])[0],
        }

    @classmethod
    def from_state(cls, data):
        return cls(int(data['window']), network.decode_array(data['values']), float(data['total']))


# ==================== PASO Y CICLO ====================

@dataclass
class TrainState:
    params: network.NetworkParams
    adam: AdamState
    lr: float
    batch: int = 0
    loss: float = math.nan


def _assert_finite(valor, gradiente, batch):
    if not math.isfinite(valor):
        raise NumericalFailure(
            f'Pérdida no finita en el batch {batch}', batch=batch, diagnostic={'loss': valor}
        )
    g = np.asarray(gradiente, dtype=float)
    malos = np.flatnonzero(~np.isfinite(g))
    if malos.size:
        raise NumericalFailure(
            f'Gradiente no finito en el batch {batch} ({malos.size} componentes)',
            batch=batch, diagnostic={'loss': valor, 'first_bad_index': int(malos[0])},
        )


def train_step(state, batch, bundle, weighting, config, threads=1):
    """Un paso de Adam sobre la pérdida del batch; devuelve el nuevo estado"""
    if not state.params.is_finite():
        raise NumericalFailure('Parámetros no finitos antes del paso', batch=state.batch)
    valor, gradiente = loss_and_gradient(state.params, batch, weighting, bundle, threads=threads)
    _assert_finite(valor, gradiente, state.batch + 1)
    flat, adam = adam_update(state.params.flatten(), gradiente, state.adam, state.lr, config)
    params = network.NetworkParams.from_flat(state.params.spec, flat)
    return TrainState(params=params, adam=adam, lr=state.lr, batch=state.batch + 1, loss=valor)


@dataclass
class TrainingResult:
    checkpoint_path: Path
    loss_log_path: Path
    batches: int
    final_loss: float
    smoothed_loss: float
    lr: float
    interrupted: bool = False
    checkpoints: list = field(default_factory=list)


class LossLog:
    """CSV `batch,raw_loss,smoothed_loss,lr,t_horizon,lambda`"""

    def __init__(self, path, resume_batch=None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if resume_batch is not None and self.path.exists():
            self._truncate(resume_batch)
            self._fh = open(self.path, 'a', newline='', encoding='utf-8')
            self._writer = csv.writer(self._fh)
        else:
            self._fh = open(self.path, 'w', newline='', encoding='utf-8')
            self._writer = csv.writer(self._fh)
            self._writer.writerow(LOSS_COLUMNS)

    def _truncate(self, batch):
        # filas posteriores al checkpoint se reescriben al reanudar
        with open(self.path, newline='', encoding='utf-8') as fh:
            filas = list(csv.reader(fh))
        cuerpo = [f for f in filas[1:] if f and int(f[0]) <= batch]
        with open(self.path, 'w', newline='', encoding='utf-8') as fh:
            writer = csv.writer(fh)
            writer.writerow(LOSS_COLUMNS)
            writer.writerows(cuerpo)

    def write(self, batch, raw, smoothed, lr, horizon, lam):
        self._writer.writerow([batch, f'{raw:.12g}', f'{smoothed:.12g}', f'{lr:.12g}', f'{horizon:.12g}', f'{lam:.12g}'])

    def flush(self):
        self._fh.flush()

    def close(self):
        self._fh.close()


def _rng_for(seed):
    # flujo de muestreo independiente del de inicialización
    return np.random.default_rng([int(seed), 1])


def _training_metadata(state, smoothed, rng, average, scheduler, config, parent):
    return {
        'batch': state.batch,
        'total_batches': config.optimizer.total_batches,
        'loss': network.encode_array([state.loss])[0] if math.isfinite(state.loss) else 'nan',
        'smoothed_loss': network.encode_array([smoothed])[0] if math.isfinite(smoothed) else 'nan',
        'lr': network.encode_array([state.lr])[0],
        'adam': state.adam.to_dict(),
        'rng_state': rng.bit_generator.state,
        'recent_losses': average.state(),
        'plateau': scheduler.state() if scheduler else None,
        'parent': parent,
        'config': config.to_dict(),
    }


def run_training(bundle_config, network_spec, config, output_dir, resume=False, threads=1, on_checkpoint=None):
    """
    Ciclo completo. Escribe `checkpoint.ckpt` cada `checkpoint_every` batches y al
    final, y `loss.csv` con una fila por batch. Con resume=True continúa desde el
    checkpoint existente con el mismo estado de RNG, momentos y media móvil.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = output_dir / 'checkpoint.ckpt'
    log_path = output_dir / 'loss.csv'
    opt = config.optimizer
    schedule = replace(config.curriculum, total_batches=opt.total_batches)
    t0, tf = bundle_config.time_window

    parent = None
    if resume and ckpt_path.exists():
        ckpt = network.load(ckpt_path)
        if ckpt.params.spec != network_spec:
            raise CheckpointError(f'El checkpoint {ckpt_path} no corresponde a la arquitectura configurada')
        meta = ckpt.training
        try:
            params = ckpt.params
            adam = AdamState.from_dict(meta['adam'])
            rng = np.random.default_rng()
            rng.bit_generator.state = meta['rng_state']
            average = MovingAverage.from_state(meta['recent_losses'])
            state = TrainState(params, adam, float(meta['lr']), int(meta['batch']), float(meta['loss']))
            scheduler = PlateauScheduler.from_state(opt.plateau, meta['plateau']) if opt.plateau and meta.get('plateau') else None
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f'Metadatos de entrenamiento incompletos en {ckpt_path}: {e}') from e
        parent = {'batch': state.batch, 'sha256': network.parameters_digest(params)}
        logger.info(f'Reanudando entrenamiento desde el batch {state.batch}')
        log = LossLog(log_path, resume_batch=state.batch)
    else:
        params = network.init(network_spec, opt.seed)
        state = TrainState(params, AdamState.zeros(params.count), opt.lr)
        rng = _rng_for(opt.seed)
        average = MovingAverage(config.smoothing_window)
        scheduler = PlateauScheduler(opt.plateau, opt.lr) if opt.plateau else None
        log = LossLog(log_path)
    if scheduler is None and opt.plateau:
        scheduler = PlateauScheduler(opt.plateau, state.lr)

    bundle = Bundle(bundle_config, state.params)
    overrides = dict(opt.lr_overrides)
    guardados = []

    def guardar():
        nonlocal parent
        meta = _training_metadata(state, average.value, rng, average, scheduler, config, parent)
        network.save(state.params, ckpt_path, seed=opt.seed, bundle=bundle_config.to_dict(), training=meta)
        log.flush()
        parent = {'batch': state.batch, 'sha256': network.parameters_digest(state.params)}
        guardados.append(state.batch)
        logger.debug(f'Checkpoint guardado en el batch {state.batch}: {ckpt_path}')
        if on_checkpoint is not None:
            on_checkpoint(state.batch, ckpt_path, state.loss, state.lr)

    interrumpido = False
    punto = None
    try:
        while state.batch < opt.total_batches:
            # estado previo al muestreo; se restaura si el batch no llega a completarse
            punto = (
                replace(state), rng.bit_generator.state,
                (list(average.values), average.total), scheduler.state() if scheduler else None,
            )
            m = state.batch
            if m in overrides:
                state.lr = overrides[m]
                if scheduler is not None:
                    scheduler.reset(state.lr)
                logger.info(f'Cambio manual de η en el batch {m}: {state.lr:.3g}')
            horizonte = horizon_for_batch(schedule, m, t0, tf)
            weighting = weighting_for_batch(schedule, m, t0, tf)
            batch = sample_batch(bundle_config, m, rng, opt.batch_size, schedule)
            state = train_step(state, batch, bundle, weighting, opt, threads=threads)
            suavizada = average.push(state.loss)
            if scheduler is not None:
                state.lr = scheduler.step(suavizada)
            log.write(state.batch, state.loss, suavizada, state.lr, horizonte, weighting.lam)
            punto = None
            if config.log_every and state.batch % config.log_every == 0:
                logger.info(
                    f'batch {state.batch}/{opt.total_batches} pérdida={state.loss:.4e} '
                    f'suavizada={suavizada:.4e} η={state.lr:.2e} t_m={horizonte:.4g} λ={weighting.lam:.4g}'
                )
            if config.checkpoint_every and state.batch % config.checkpoint_every == 0:
                guardar()
        if not guardados or guardados[-1] != state.batch:
            guardar()
    except KeyboardInterrupt:
        interrumpido = True
        if punto is not None:
            state, rng_state, media, plateau = punto
            rng.bit_generator.state = rng_state
            average = MovingAverage(average.window, *media)
            if plateau is not None:
                scheduler = PlateauScheduler.from_state(opt.plateau, plateau)
        logger.warning(f'Entrenamiento interrumpido en el batch {state.batch}; guardando checkpoint')
        if not guardados or guardados[-1] != state.batch:
            guardar()
        raise
    except NumericalFailure as e:
        logger.error(f'{e} (se conserva el último checkpoint válido)')
        raise
    finally:
        log.close()

    return TrainingResult(
        checkpoint_path=ckpt_path,
        loss_log_path=log_path,
        batches=state.batch,
        final_loss=state.loss,
        smoothed_loss=average.value,
        lr=state.lr,
        interrupted=interrumpido,
        checkpoints=guardados,
    )


# ==================== DIAGNÓSTICO ====================

def _late_window_samples(config, samples, rng, theta=None):
    t0, tf = config.time_window
    t = rng.uniform(t0 + 0.5 * (tf - t0), tf, size=samples)
    x0_box = np.asarray(config.x0_box, dtype=float)
    x0 = rng.uniform(x0_box[:, 0], x0_box[:, 1], size=(samples, len(x0_box)))
    if theta is None:
        theta_box = np.asarray(config.theta_box, dtype=float).reshape(-1, 2)
        theta = rng.uniform(theta_box[:, 0], theta_box[:, 1], size=(samples, len(theta_box)))
    else:
        theta = np.broadcast_to(np.asarray(theta, dtype=float), (samples, len(config.free_params)))
    return t, x0, theta


def late_window_residual(solution, samples=1000, seed=0, theta=None):
    """Media de |ε| en la segunda mitad de la ventana"""
    rng = np.random.default_rng(seed)
    t, x0, theta = _late_window_samples(solution.config, samples, rng, theta)
    res = solution.residual(t, x0, theta)
    return float(np.mean(np.linalg.norm(res, axis=-1)))


def stuck_fraction(solution, samples=1000, seed=0, tol=1e-3, distance=0.5, theta=None, h=1e-2):
    """
    Fracción de puntos tardíos donde el residuo es pequeño (todas las
    componentes < tol) pero la solución está a más de `distance` del RK4.
    """
    config = solution.config
    rng = np.random.default_rng(seed)
    t, x0, theta = _late_window_samples(config, samples, rng, theta)
    res = solution.residual(t, x0, theta)
    estimado = solution.evaluate(t, x0, theta)
    pasos = int(math.ceil((config.tf - config.t0) / h))
    exacto = reference.integrate(config.system, x0, config.full_theta_array(theta), config.t0, t, pasos, 'rk4')
    quieto = np.all(np.abs(res) < tol, axis=-1)
    lejos = np.linalg.norm(estimado - exacto, axis=-1) > distance
    return float(np.mean(quieto & lejos))
