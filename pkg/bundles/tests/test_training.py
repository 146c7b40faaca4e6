import csv
import math
from pathlib import Path
import tempfile
from unittest import mock

from django.test import SimpleTestCase
import numpy as np

from .. import network
from .. import training
from ..exceptions import CheckpointError, NumericalFailure
from ..reference import ExactShoSolution
from ..training import (
    AdamState, BatchSample, CurriculumSchedule, MovingAverage, OptimizerConfig, PlateauConfig,
    PlateauScheduler, TrainingConfig, TrainState, WeightingFn, adam_update, curriculum_horizon,
    horizon_for_batch, lambda_for_batch, late_window_residual, loss, loss_and_gradient,
    run_training, sample_batch, stuck_fraction, train_step,
)
from .helpers import crtbp_config, fhn_config, pendulum_config, random_bundle, sho_config, spec_for, zero_bundle


def _leer_csv(path):
    with open(path, newline='', encoding='utf-8') as fh:
        return list(csv.DictReader(fh))


class LossGradientTest(SimpleTestCase):
    """Tests para la pérdida ponderada y su gradiente"""

    def test_gradiente_contra_diferencias(self):
        """Test: el gradiente forward-over-reverse coincide con diferencias centradas en los 4 sistemas"""
        configs = [
            sho_config(),
            pendulum_config(),
            fhn_config(normalize_inputs=True),
            crtbp_config(time_window=(0.0, 0.2)),
        ]
        weighting = WeightingFn('exp_decay', 0.3)
        for config in configs:
            bundle = random_bundle(config, hidden=(8, 8), seed=1)
            batch = sample_batch(config, 0, np.random.default_rng(0), 4)
            _, grad = loss_and_gradient(bundle.params, batch, weighting, bundle)
            grad = np.asarray(grad)
            flat = bundle.params.flatten()
            for i in np.linspace(0, flat.size - 1, 6).astype(int):
                h = 1e-5 * max(1.0, abs(flat[i]))
                arriba = flat.copy()
                abajo = flat.copy()
                arriba[i] += h
                abajo[i] -= h
                fd = (
                    loss(network.NetworkParams.from_flat(bundle.params.spec, arriba), batch, weighting, bundle)
                    - loss(network.NetworkParams.from_flat(bundle.params.spec, abajo), batch, weighting, bundle)
                ) / (2.0 * h)
                np.testing.assert_allclose(grad[i], fd, rtol=1e-4, atol=1e-6, err_msg=f'{config.system.name}[{i}]')

    def test_hilos_no_cambian_el_resultado(self):
        """Test: partir el batch entre hilos da la misma pérdida y gradiente"""
        config = sho_config()
        bundle = random_bundle(config, seed=2)
        batch = sample_batch(config, 0, np.random.default_rng(3), 16)
        weighting = WeightingFn('constant')
        valor_1, grad_1 = loss_and_gradient(bundle.params, batch, weighting, bundle, threads=1)
        valor_2, grad_2 = loss_and_gradient(bundle.params, batch, weighting, bundle, threads=2)
        self.assertAlmostEqual(valor_1, valor_2, places=12)
        np.testing.assert_allclose(np.asarray(grad_1), np.asarray(grad_2), rtol=1e-12, atol=1e-15)

    def test_parametros_cero_ponderacion_constante(self):
        """Test: con la red en cero, x₀=(3,4), k=1, t=1 la pérdida es 25"""
        bundle = zero_bundle(sho_config())
        batch = BatchSample(np.array([1.0]), np.array([[3.0, 4.0]]), np.array([[1.0]]))
        self.assertAlmostEqual(loss(bundle.params, batch, WeightingFn('constant'), bundle), 25.0, places=12)

    def test_parametros_cero_ponderacion_exponencial(self):
        """Test: con la red en cero, x₀=(0,1), λ=2, t=1 la pérdida es e⁻²"""
        bundle = zero_bundle(sho_config())
        batch = BatchSample(np.array([1.0]), np.array([[0.0, 1.0]]), np.array([[1.0]]))
        self.assertAlmostEqual(loss(bundle.params, batch, WeightingFn('exp_decay', 2.0), bundle), math.exp(-2.0), places=12)

    def test_ponderacion_invalida(self):
        """Test: tipos de ponderación desconocidos o λ negativo se rechazan"""
        with self.assertRaises(ValueError):
            WeightingFn('gaussiana')
        with self.assertRaises(ValueError):
            WeightingFn('exp_decay', -1.0)


class PlateauSchedulerTest(SimpleTestCase):
    """Tests para la reducción de η en meseta"""

    def test_sin_reduccion_con_perdida_decreciente(self):
        """Test: una pérdida estrictamente decreciente nunca reduce η"""
        sched = PlateauScheduler(PlateauConfig(patience=2), 1e-3)
        for i in range(50):
            sched.step(0.9 ** i)
        self.assertEqual(sched.lr, 1e-3)
        self.assertEqual(sched.reductions, 0)

    def test_reduccion_tras_paciencia(self):
        """Test: con pérdida constante y patience=2, η se reduce en el tercer paso"""
        sched = PlateauScheduler(PlateauConfig(patience=2, factor=0.5), 1.0)
        self.assertEqual([sched.step(1.0) for _ in range(3)], [1.0, 1.0, 0.5])
        self.assertEqual(sched.reductions, 1)

    def test_min_lr(self):
        """Test: η no baja de min_lr y sin cambio real no se cuenta reducción"""
        sched = PlateauScheduler(PlateauConfig(patience=1, factor=0.5, min_lr=1e-3), 1e-3)
        for _ in range(10):
            sched.step(1.0)
        self.assertEqual(sched.lr, 1e-3)
        self.assertEqual(sched.reductions, 0)

    def test_cooldown(self):
        """Test: tras una reducción se esperan `cooldown` pasos antes de volver a contar"""
        sched = PlateauScheduler(PlateauConfig(patience=1, factor=0.5, cooldown=2), 1.0)
        self.assertEqual([sched.step(1.0) for _ in range(5)], [1.0, 0.5, 0.5, 0.5, 0.25])

    def test_umbral_absoluto(self):
        """Test: en modo abs una mejora menor que el umbral no cuenta"""
        sched = PlateauScheduler(PlateauConfig(patience=1, threshold=0.1, threshold_mode='abs'), 1.0)
        sched.step(1.0)
        self.assertEqual(sched.step(0.95), 0.5)

    def test_estado_ida_y_vuelta(self):
        """Test: from_state reconstruye el planificador a mitad de camino"""
        config = PlateauConfig(patience=3, factor=0.5, cooldown=1)
        sched = PlateauScheduler(config, 1e-2)
        for valor in (1.0, 1.0, 1.0, 1.0, 0.5, 0.5):
            sched.step(valor)
        copia = PlateauScheduler.from_state(config, sched.state())
        for valor in (0.5, 0.5, 0.5, 0.5, 0.2):
            self.assertEqual(copia.step(valor), sched.step(valor))
        self.assertEqual(copia.reductions, sched.reductions)

    def test_configuracion_invalida(self):
        """Test: factor fuera de (0, 1) o modo desconocido se rechazan"""
        with self.assertRaises(ValueError):
            PlateauConfig(factor=1.0)
        with self.assertRaises(ValueError):
            PlateauConfig(threshold_mode='porcentaje')


class AdamTest(SimpleTestCase):
    """Tests para el paso de Adam"""

    def setUp(self):
        """Configuración inicial para los tests"""
        self.config = OptimizerConfig(lr=0.01)

    def test_primer_paso(self):
        """Test: el primer paso mueve cada parámetro ≈ η en contra del signo del gradiente"""
        nuevo, estado = adam_update(np.zeros(3), np.array([-1.0, 2.0, -0.001]), AdamState.zeros(3), 0.01, self.config)
        np.testing.assert_allclose(nuevo, [0.01, -0.01, 0.01], rtol=1e-4)
        self.assertEqual(estado.step, 1)

    def test_gradiente_cero(self):
        """Test: con gradiente cero los parámetros no cambian"""
        flat = np.array([0.3, -1.2])
        nuevo, _ = adam_update(flat, np.zeros(2), AdamState.zeros(2), 0.01, self.config)
        self.assertTrue(np.array_equal(nuevo, flat))

    def test_cuadratica(self):
        """Test: (w − 3)² converge cerca de w = 3"""
        w = np.zeros(1)
        estado = AdamState.zeros(1)
        for _ in range(10000):
            w, estado = adam_update(w, 2.0 * (w - 3.0), estado, 0.01, self.config)
        self.assertLess(abs(float(w[0]) - 3.0), 2e-2)

    def test_estado_ida_y_vuelta(self):
        """Test: los momentos sobreviven a to_dict/from_dict sin pérdida"""
        estado = AdamState(7, np.array([0.1, 1.0 / 3.0]), np.array([1e-9, 2.0]))
        copia = AdamState.from_dict(estado.to_dict())
        self.assertEqual(copia.step, 7)
        self.assertTrue(np.array_equal(copia.m, estado.m))
        self.assertTrue(np.array_equal(copia.v, estado.v))


class CurriculumTest(SimpleTestCase):
    """Tests para el horizonte del currículum y el decaimiento λ"""

    def test_extremos_del_horizonte(self):
        """Test: t_m arranca en t₀ y llega a t_f en m = M"""
        self.assertEqual(curriculum_horizon(0, 1000, 1.0, 6.0), 1.0)
        self.assertEqual(curriculum_horizon(1000, 1000, 1.0, 6.0), 6.0)
        self.assertEqual(curriculum_horizon(5000, 1000, 1.0, 6.0), 6.0)

    def test_punto_intermedio(self):
        """Test: en m = M/10 el horizonte es t₀ + (t_f − t₀)·ln 2/ln 11"""
        esperado = 1.0 + 5.0 * math.log(2.0) / math.log(11.0)
        self.assertAlmostEqual(curriculum_horizon(100, 1000, 1.0, 6.0), esperado, places=12)

    def test_monotono(self):
        """Test: el horizonte no decrece con m"""
        valores = [curriculum_horizon(m, 200, 0.0, 10.0) for m in range(201)]
        self.assertTrue(all(b >= a for a, b in zip(valores, valores[1:])))

    def test_sin_curriculum(self):
        """Test: deshabilitado, el horizonte es siempre t_f"""
        self.assertEqual(horizon_for_batch(CurriculumSchedule(enabled=False, total_batches=10), 0, 0.0, 5.0), 5.0)

    def test_lambdas(self):
        """Test: λ según decaimiento constante, fijo, currículum y recocido"""
        self.assertEqual(lambda_for_batch(CurriculumSchedule(decay='constant'), 3, 0.0, 5.0), 0.0)
        self.assertEqual(lambda_for_batch(CurriculumSchedule(decay='fixed', lam=0.7), 3, 0.0, 5.0), 0.7)
        curriculum = CurriculumSchedule(enabled=True, total_batches=100, decay='curriculum')
        self.assertAlmostEqual(lambda_for_batch(curriculum, 0, 0.0, 5.0), 0.8)
        self.assertAlmostEqual(lambda_for_batch(curriculum, 100, 0.0, 5.0), 0.4)
        recocido = CurriculumSchedule(total_batches=100, decay='anneal')
        self.assertAlmostEqual(lambda_for_batch(recocido, 0, 0.0, 5.0), 1.0)
        self.assertAlmostEqual(lambda_for_batch(recocido, 100, 0.0, 5.0), 0.01)

    def test_decaimiento_desconocido(self):
        """Test: un decaimiento desconocido se rechaza"""
        with self.assertRaises(ValueError):
            CurriculumSchedule(decay='lineal')


class SamplingTest(SimpleTestCase):
    """Tests para el muestreo de batches y la media móvil"""

    def test_muestras_dentro_de_los_dominios(self):
        """Test: t, x₀ y θ caen dentro de la ventana de entrenamiento y las cajas"""
        config = sho_config(train_time_margin=0.1)
        batch = sample_batch(config, 0, np.random.default_rng(0), 500)
        self.assertEqual(len(batch), 500)
        self.assertTrue(np.all((batch.t >= -0.1) & (batch.t <= config.tf)))
        self.assertTrue(np.all(np.abs(batch.x0) <= 1.0))
        self.assertTrue(np.all((batch.theta >= 0.5) & (batch.theta <= 2.0)))
        self.assertLess(float(np.min(batch.t)), 0.0)

    def test_curriculum_en_el_primer_batch(self):
        """Test: con currículum, en m = 0 ningún t supera t₀"""
        config = sho_config()
        schedule = CurriculumSchedule(enabled=True, total_batches=100)
        batch = sample_batch(config, 0, np.random.default_rng(1), 200, schedule)
        self.assertTrue(np.all(batch.t <= config.t0))

    def test_media_movil(self):
        """Test: ventana 3 con 1, 2, 3, 4 da 1, 1.5, 2, 3"""
        media = MovingAverage(3)
        self.assertEqual([media.push(v) for v in (1, 2, 3, 4)], [1.0, 1.5, 2.0, 3.0])
        copia = MovingAverage.from_state(media.state())
        self.assertEqual(copia.push(5), media.push(5))


class TrainingLoopTest(SimpleTestCase):
    """Tests para el ciclo de entrenamiento con checkpoints"""

    def setUp(self):
        """Configuración inicial para los tests"""
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.dir = Path(tmp.name)
        self.bundle_config = sho_config()
        self.spec = spec_for(self.bundle_config, hidden=(4,))

    def _config(self, total, **kwargs):
        opciones = dict(lr=1e-3, batch_size=8, total_batches=total, seed=0, plateau=PlateauConfig(patience=2))
        opciones.update(kwargs)
        return TrainingConfig(
            optimizer=OptimizerConfig(**opciones),
            curriculum=CurriculumSchedule(enabled=False, decay='fixed', lam=0.5),
            checkpoint_every=3,
            log_every=0,
            smoothing_window=2,
        )

    def test_reanudar_es_determinista(self):
        """Test: entrenar 6 batches de corrido o 3 + 3 reanudando da archivos idénticos"""
        corrido = self.dir / 'corrido'
        partido = self.dir / 'partido'
        resultado = run_training(self.bundle_config, self.spec, self._config(6), corrido)
        self.assertEqual(resultado.checkpoints, [3, 6])
        run_training(self.bundle_config, self.spec, self._config(3), partido)
        run_training(self.bundle_config, self.spec, self._config(6), partido, resume=True)
        self.assertEqual((corrido / 'checkpoint.ckpt').read_bytes(), (partido / 'checkpoint.ckpt').read_bytes())
        self.assertEqual((corrido / 'loss.csv').read_bytes(), (partido / 'loss.csv').read_bytes())

    def _interrumpir_en(self, llamada):
        original = training.train_step
        llamadas = []

        def paso(*args, **kwargs):
            llamadas.append(1)
            if len(llamadas) == llamada:
                raise KeyboardInterrupt
            return original(*args, **kwargs)

        return mock.patch.object(training, 'train_step', side_effect=paso)

    def test_interrupcion_a_mitad_de_batch(self):
        """Test: Ctrl-C dentro del paso 5 deja un checkpoint válido del batch 4 y reanudar reproduce la corrida"""
        corrido = self.dir / 'corrido'
        cortado = self.dir / 'cortado'
        run_training(self.bundle_config, self.spec, self._config(6), corrido)
        with self._interrumpir_en(5), self.assertLogs('bundles.training', level='WARNING'):
            with self.assertRaises(KeyboardInterrupt):
                run_training(self.bundle_config, self.spec, self._config(6), cortado)

        guardado = network.load(cortado / 'checkpoint.ckpt')
        self.assertEqual(guardado.training['batch'], 4)
        self.assertEqual([int(f['batch']) for f in _leer_csv(cortado / 'loss.csv')], [1, 2, 3, 4])

        run_training(self.bundle_config, self.spec, self._config(6), cortado, resume=True)
        a = network.load(corrido / 'checkpoint.ckpt')
        b = network.load(cortado / 'checkpoint.ckpt')
        np.testing.assert_array_equal(a.params.flatten(), b.params.flatten())
        # solo cambia el padre: el batch 4 en vez del 3
        self.assertEqual(b.training.pop('parent')['batch'], 4)
        self.assertEqual(a.training.pop('parent')['batch'], 3)
        self.assertEqual(a.training, b.training)
        self.assertEqual((corrido / 'loss.csv').read_bytes(), (cortado / 'loss.csv').read_bytes())

    def test_interrupcion_despues_de_un_checkpoint(self):
        """Test: Ctrl-C en el paso siguiente a un checkpoint no lo reescribe y reanudar da archivos idénticos"""
        corrido = self.dir / 'corrido'
        cortado = self.dir / 'cortado'
        run_training(self.bundle_config, self.spec, self._config(6), corrido)
        vistos = []
        with self._interrumpir_en(4), self.assertLogs('bundles.training', level='WARNING'):
            with self.assertRaises(KeyboardInterrupt):
                run_training(
                    self.bundle_config, self.spec, self._config(6), cortado,
                    on_checkpoint=lambda batch, path, perdida, lr: vistos.append(batch),
                )
        self.assertEqual(vistos, [3])
        self.assertEqual(network.load(cortado / 'checkpoint.ckpt').training['batch'], 3)

        run_training(self.bundle_config, self.spec, self._config(6), cortado, resume=True)
        self.assertEqual((corrido / 'checkpoint.ckpt').read_bytes(), (cortado / 'checkpoint.ckpt').read_bytes())
        self.assertEqual((corrido / 'loss.csv').read_bytes(), (cortado / 'loss.csv').read_bytes())

    def test_reanudar_con_otra_arquitectura(self):
        """Test: reanudar con una red distinta levanta CheckpointError"""
        run_training(self.bundle_config, self.spec, self._config(3), self.dir)
        with self.assertRaises(CheckpointError):
            run_training(self.bundle_config, spec_for(self.bundle_config, hidden=(5,)), self._config(6), self.dir, resume=True)

    def test_registro_de_perdidas(self):
        """Test: loss.csv tiene una fila por batch con las columnas esperadas"""
        run_training(self.bundle_config, self.spec, self._config(4), self.dir)
        filas = _leer_csv(self.dir / 'loss.csv')
        self.assertEqual([int(f['batch']) for f in filas], [1, 2, 3, 4])
        self.assertEqual(list(filas[0]), ['batch', 'raw_loss', 'smoothed_loss', 'lr', 't_horizon', 'lambda'])
        self.assertEqual(float(filas[0]['lambda']), 0.5)
        self.assertAlmostEqual(float(filas[0]['t_horizon']), self.bundle_config.tf)

    def test_cambio_manual_de_eta(self):
        """Test: un cambio manual en el batch 2 aparece en la fila del batch 3"""
        run_training(self.bundle_config, self.spec, self._config(4, plateau=None, lr_overrides=((2, 1e-4),)), self.dir)
        filas = {int(f['batch']): float(f['lr']) for f in _leer_csv(self.dir / 'loss.csv')}
        self.assertEqual(filas[2], 1e-3)
        self.assertEqual(filas[3], 1e-4)
        self.assertEqual(filas[4], 1e-4)

    def test_callback_por_checkpoint(self):
        """Test: on_checkpoint recibe cada checkpoint guardado"""
        vistos = []
        run_training(
            self.bundle_config, self.spec, self._config(4), self.dir,
            on_checkpoint=lambda batch, path, perdida, lr: vistos.append(batch),
        )
        self.assertEqual(vistos, [3, 4])

    def test_parametros_no_finitos(self):
        """Test: un parámetro NaN hace fallar el paso con NumericalFailure"""
        bundle = random_bundle(self.bundle_config, hidden=(4,))
        flat = bundle.params.flatten()
        flat[0] = math.nan
        params = network.NetworkParams.from_flat(self.spec, flat)
        estado = TrainState(params, AdamState.zeros(params.count), 1e-3)
        batch = sample_batch(self.bundle_config, 0, np.random.default_rng(0), 4)
        with self.assertRaises(NumericalFailure):
            train_step(estado, batch, bundle, WeightingFn('constant'), self._config(1).optimizer)


class DiagnosticsTest(SimpleTestCase):
    """Tests para el diagnóstico de la segunda mitad de la ventana"""

    def test_solucion_exacta(self):
        """Test: la solución exacta tiene residuo nulo y ninguna muestra atascada"""
        solucion = ExactShoSolution(sho_config())
        self.assertLess(late_window_residual(solucion, samples=200), 1e-10)
        self.assertEqual(stuck_fraction(solucion, samples=200), 0.0)

    def test_red_en_cero_no_esta_atascada(self):
        """Test: la red en cero tiene residuo grande, así que no cuenta como atascada"""
        bundle = zero_bundle(sho_config())
        self.assertGreater(late_window_residual(bundle, samples=200), 0.1)
        self.assertEqual(stuck_fraction(bundle, samples=200), 0.0)
