import math

from django.test import SimpleTestCase
import numpy as np

from .. import diffcore as dc
from .. import network
from ..bundle import Bundle, BundleConfig, a_derivative, a_value
from .helpers import crtbp_config, fhn_config, random_bundle, sho_config, spec_for, zero_bundle


class AValueTest(SimpleTestCase):
    """Tests para a(t)"""

    def test_ambas_formas_en_t0(self):
        """Test: a(t₀) = 0 para ambas formas"""
        for kind in ('exp', 'linear'):
            self.assertEqual(float(a_value(kind, 1.5, 1.5)), 0.0)

    def test_exp_en_ln2(self):
        """Test: la forma exponencial vale 1/2 en t₀ + ln 2"""
        self.assertAlmostEqual(float(a_value('exp', 1.0 + math.log(2.0), 1.0)), 0.5, places=14)

    def test_lineal(self):
        """Test: la forma lineal vale t − t₀"""
        self.assertAlmostEqual(float(a_value('linear', 3.5, 1.0)), 2.5)

    def test_exp_monotona_y_acotada(self):
        """Test: la forma exponencial crece y queda en [0, 1) para t ≥ t₀"""
        valores = a_value('exp', np.linspace(0.0, 20.0, 200), 0.0)
        self.assertTrue(np.all(np.diff(valores) > 0))
        self.assertTrue(np.all((valores >= 0.0) & (valores < 1.0)))

    def test_derivada_analitica(self):
        """Test: a′ es 1 (lineal) y e^−(t−t₀) (exp)"""
        np.testing.assert_allclose(a_derivative('linear', [0.0, 2.0], 0.0), [1.0, 1.0])
        self.assertAlmostEqual(float(a_derivative('exp', 2.0, 1.0)), math.exp(-1.0))

    def test_forma_desconocida(self):
        """Test: una forma desconocida es un error"""
        with self.assertRaises(ValueError):
            a_value('cuadratica', 1.0, 0.0)


class BundleConfigTest(SimpleTestCase):
    """Tests para la configuración del bundle"""

    def test_parametros_libres_y_dimension(self):
        """Test: la dimensión de entrada es 1 + n + parámetros libres"""
        config = sho_config()
        self.assertEqual(config.free_params, ('k',))
        self.assertEqual(config.input_dim, 4)
        self.assertEqual(fhn_config().free_params, ('I',))
        self.assertEqual(fhn_config().input_dim, 4)

    def test_mu_por_defecto(self):
        """Test: sin caja para μ el CRTBP usa el valor por defecto"""
        config = crtbp_config()
        self.assertEqual(config.fixed_params, {'mu': 0.01})
        self.assertEqual(config.free_params, ())
        self.assertEqual(config.input_dim, 5)
        self.assertEqual(config.full_theta([]), [0.01])

    def test_margen_por_defecto(self):
        """Test: el margen previo a t₀ por defecto es una fracción de la ventana"""
        config = sho_config()
        self.assertAlmostEqual(config.train_time_margin, 0.002 * 2.0 * math.pi)
        self.assertEqual(config.training_window[1], config.tf)

    def test_full_theta_ordena_los_parametros(self):
        """Test: full_theta intercala libres y fijos en el orden del sistema"""
        config = fhn_config()
        self.assertEqual(config.full_theta([0.9]), [0.7, 0.8, 12.5, 0.9])
        np.testing.assert_allclose(config.full_theta_array([[0.9], [0.6]]),
                                   [[0.7, 0.8, 12.5, 0.9], [0.7, 0.8, 12.5, 0.6]])

    def test_errores_de_dominio(self):
        """Test: ventanas, cajas y parámetros inconsistentes se rechazan"""
        with self.assertRaises(ValueError):
            sho_config(time_window=(1.0, 1.0))
        with self.assertRaises(ValueError):
            sho_config(x0_box=((-1.0, 1.0),))
        with self.assertRaises(ValueError):
            sho_config(x0_box=((-1.0, 1.0), (0.5, 0.5)))
        with self.assertRaises(ValueError):
            sho_config(fixed_params={'masa': 1.0})
        with self.assertRaises(ValueError):
            sho_config(a_kind='cuadratica')

    def test_dict_ida_y_vuelta(self):
        """Test: to_dict/from_dict reconstruye la misma configuración"""
        for config in (sho_config(normalize_inputs=True), fhn_config(a_kind='linear'), crtbp_config()):
            self.assertEqual(BundleConfig.from_dict(config.to_dict()), config)


class BundleEvaluateTest(SimpleTestCase):
    """Tests para la evaluación de x̂ = x₀ + a(t)·N"""

    def setUp(self):
        """Configuración inicial para los tests"""
        self.config = sho_config()
        self.bundle = random_bundle(self.config, hidden=(8, 8), seed=1)

    def test_condicion_inicial_exacta(self):
        """Test: x̂(t₀) = x₀ para cualquier parámetro"""
        rng = np.random.default_rng(0)
        for semilla in range(5):
            bundle = random_bundle(self.config, seed=semilla)
            x0 = rng.uniform(-1, 1, size=(50, 2))
            k = rng.uniform(0.5, 2.0, size=(50, 1))
            estado = bundle.evaluate(self.config.t0, x0, k)
            self.assertTrue(np.all(np.abs(estado - x0) <= 4 * np.finfo(float).eps * np.abs(x0)))

    def test_parametros_cero(self):
        """Test: con parámetros en cero x̂(t) = x₀ y ∂x̂/∂t = 0 para todo t"""
        bundle = zero_bundle(self.config)
        t = np.linspace(0.0, 6.0, 7)
        estado, derivada = bundle.evaluate_with_time_derivative(t, [0.3, -0.4], [1.1])
        np.testing.assert_allclose(estado, np.broadcast_to([0.3, -0.4], (7, 2)))
        self.assertTrue(np.all(derivada == 0.0))

    def test_parametros_cero_normalizados(self):
        """Test: la normalización de entradas no cambia x̂ con parámetros en cero"""
        bundle = zero_bundle(sho_config(normalize_inputs=True))
        np.testing.assert_allclose(bundle.evaluate(2.0, [0.3, -0.4], [1.1]), [0.3, -0.4])

    def test_derivada_en_t0(self):
        """Test: con a exponencial, ∂x̂/∂t(t₀) = N(t₀, ·)"""
        _, derivada = self.bundle.evaluate_with_time_derivative(0.0, [0.2, 0.1], [1.3])
        salida = self.bundle.network_output(0.0, [0.2, 0.1], [1.3])
        np.testing.assert_allclose(derivada, salida, rtol=1e-12, atol=1e-15)

    def test_derivada_temporal_contra_diferencias(self):
        """Test: ∂x̂/∂t coincide con diferencias centradas en t"""
        t = np.array([0.5, 1.7, 4.2])
        x0 = np.array([[0.2, 0.1], [-0.5, 0.9], [0.8, -0.3]])
        k = np.array([[1.3], [0.7], [1.9]])
        _, derivada = self.bundle.evaluate_with_time_derivative(t, x0, k)
        h = 1e-6
        fd = (self.bundle.evaluate(t + h, x0, k) - self.bundle.evaluate(t - h, x0, k)) / (2.0 * h)
        np.testing.assert_allclose(derivada, fd, rtol=1e-6, atol=1e-9)

    def test_grabado_coincide_con_numpy(self):
        """Test: record en la cinta coincide con evaluate"""
        bundle = random_bundle(sho_config(normalize_inputs=True), seed=4)
        tape = dc.Tape()
        t = tape.leaf(np.array([0.3, 2.0]))
        x0 = [np.array([0.1, -0.2]), np.array([0.5, 0.4])]
        salida = bundle.record(tape, t, x0, [np.array([1.0, 1.5])])
        grabado = np.stack([s.primal for s in salida], axis=-1)
        esperado = bundle.evaluate([0.3, 2.0], np.stack(x0, axis=-1), [[1.0], [1.5]])
        np.testing.assert_allclose(grabado, esperado, rtol=1e-12)

    def test_residuo_consistente(self):
        """Test: residual = ∂x̂/∂t − f(t, x̂; θ)"""
        t, x0, k = 1.2, [0.4, -0.6], [1.5]
        estado, derivada = self.bundle.evaluate_with_time_derivative(t, x0, k)
        esperado = derivada - np.array([estado[1], -1.5 * estado[0]])
        np.testing.assert_allclose(self.bundle.residual(t, x0, k), esperado, rtol=1e-12, atol=1e-14)

    def test_extrapolacion_marcada(self):
        """Test: las consultas fuera de los dominios de entrenamiento se marcan"""
        t = np.array([1.0, 7.0, 1.0, 1.0])
        x0 = np.array([[0.0, 0.0], [0.0, 0.0], [1.5, 0.0], [0.0, 0.0]])
        k = np.array([[1.0], [1.0], [1.0], [3.0]])
        estado, fuera = self.bundle.evaluate_flagged(t, x0, k)
        self.assertEqual(fuera.tolist(), [False, True, True, True])
        self.assertEqual(estado.shape, (4, 2))

    def test_red_incompatible(self):
        """Test: una red con otra dimensión de entrada se rechaza"""
        with self.assertRaises(ValueError):
            Bundle(self.config, network.zeros(network.NetworkSpec(5, (4,), 2)))
        with self.assertRaises(ValueError):
            Bundle(self.config, network.zeros(network.NetworkSpec(4, (4,), 3)))

    def test_theta_de_longitud_incorrecta(self):
        """Test: pasar más parámetros libres de los declarados es un error"""
        with self.assertRaises(ValueError):
            self.bundle.evaluate(1.0, [0.0, 0.0], [1.0, 2.0])


class JacobianX0Test(SimpleTestCase):
    """Tests para ∂x̂/∂x₀"""

    def setUp(self):
        """Configuración inicial para los tests"""
        self.config = sho_config()

    def test_identidad_en_t0(self):
        """Test: en t₀ el jacobiano es la identidad exacta"""
        bundle = random_bundle(self.config, seed=2)
        jac = bundle.jacobian_x0(0.0, [0.3, -0.2], [1.1])
        self.assertTrue(np.array_equal(jac, np.eye(2)))

    def test_identidad_con_parametros_cero(self):
        """Test: con la red en cero el jacobiano es la identidad para todo t"""
        bundle = zero_bundle(self.config)
        jac = bundle.jacobian_x0(np.array([0.5, 3.0]), [[0.3, -0.2], [0.1, 0.9]], [[1.1], [0.6]])
        np.testing.assert_allclose(jac, np.broadcast_to(np.eye(2), (2, 2, 2)))

    def test_contra_diferencias(self):
        """Test: el jacobiano por modo forward coincide con diferencias finitas"""
        bundle = random_bundle(self.config, seed=3)
        x0 = np.array([0.3, -0.2])
        jac = bundle.jacobian_x0(math.pi / 4, x0, [1.1])
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            columna = (bundle.evaluate(math.pi / 4, x0 + e, [1.1]) - bundle.evaluate(math.pi / 4, x0 - e, [1.1])) / (2 * h)
            np.testing.assert_allclose(jac[:, j], columna, rtol=1e-4, atol=1e-8)

    def test_crtbp_sin_parametros_libres(self):
        """Test: el jacobiano funciona sin parámetros libres (CRTBP con μ fijo)"""
        config = crtbp_config()
        bundle = Bundle(config, network.init(spec_for(config, hidden=(4,)), 0))
        jac = bundle.jacobian_x0(0.0, [0.5, 0.3, 0.0, 0.0], [])
        self.assertTrue(np.array_equal(jac, np.eye(4)))
