from pathlib import Path
import tempfile

from django.test import SimpleTestCase
import numpy as np

from .. import bench
from .. import network
from ..exceptions import DomainError
from ..utils import read_csv
from .helpers import fhn_config, sho_config, spec_for


class FlopModelTest(SimpleTestCase):
    """Tests para el conteo de FLOPs"""

    def test_red_3_4_4_2(self):
        """Test: la red 3→4→4→2 con tanh de costo 4 cuesta 114 FLOPs"""
        self.assertEqual(bench.flop_count_network(network.NetworkSpec(3, (4, 4), 2)), 114)

    def test_ensanchar_una_capa_cuesta_mas(self):
        """Test: ensanchar una capa oculta aumenta el conteo"""
        angosta = bench.flop_count_network(network.NetworkSpec(3, (4, 4), 2))
        ancha = bench.flop_count_network(network.NetworkSpec(3, (4, 8), 2))
        self.assertGreater(ancha, angosta)

    def test_bundle_sho_2x16(self):
        """Test: el bundle SHO 2×16 cuesta 877 FLOPs y tiene 386 parámetros"""
        spec = spec_for(sho_config(), hidden=(16, 16))
        self.assertEqual(bench.flop_count_bundle(spec, 'exp'), 877)
        self.assertEqual(network.parameter_count(spec), 386)
        self.assertEqual(bench.flop_count_bundle(spec, 'linear'), 877 - 6)

    def test_costo_de_trascendentes(self):
        """Test: el costo de tanh es configurable y el modelo rechaza costos < 1"""
        spec = network.NetworkSpec(3, (4, 4), 2)
        self.assertEqual(bench.flop_count_network(spec, bench.FlopModel(transcendental=1)), 114 - 3 * 8)
        self.assertIn('trans=1', bench.FlopModel(transcendental=1).version)
        with self.assertRaises(ValueError):
            bench.FlopModel(transcendental=0)

    def test_integradores(self):
        """Test: un paso RK4 del SHO cuesta 76 FLOPs y uno de Euler 6"""
        self.assertEqual(bench.integrator_contender('rk4', 16).flops, 16 * 76)
        self.assertEqual(bench.integrator_contender('euler', 203).flops, 203 * 6)


class LookupTableTest(SimpleTestCase):
    """Tests para las tablas de consulta"""

    def setUp(self):
        """Configuración inicial para los tests"""
        dominio = np.asarray(bench.BENCH_DOMAIN)
        valores = np.random.default_rng(0).normal(size=(10,) * 4 + (2,))
        self.tabla = bench.LookupTable(dominio[:, 0], dominio[:, 1], 10, valores)

    def test_memoria(self):
        """Test: d = 10 ocupa 10⁴·2·8 = 160000 bytes"""
        self.assertEqual(self.tabla.memory_bytes, 160000)

    def test_consulta_en_un_centro(self):
        """Test: consultar el centro de una celda devuelve el valor guardado"""
        centro = [self.tabla.centers(a)[i] for a, i in enumerate((2, 7, 0, 9))]
        np.testing.assert_array_equal(self.tabla.query(*centro), self.tabla.values[2, 7, 0, 9])

    def test_consulta_fuera_de_rango(self):
        """Test: una consulta fuera del dominio levanta DomainError"""
        with self.assertRaises(DomainError):
            self.tabla.query(0.0, 0.0, 1.0, 7.0)

    def test_interpolacion_multilineal_en_centros(self):
        """Test: en modo multilineal los centros también reproducen los valores"""
        tabla = bench.LookupTable(self.tabla.lo, self.tabla.hi, 10, self.tabla.values, 'multilinear')
        centro = [tabla.centers(a)[i] for a, i in enumerate((4, 4, 5, 1))]
        np.testing.assert_allclose(tabla.query(*centro), tabla.values[4, 4, 5, 1], rtol=1e-10, atol=1e-12)

    def test_divisiones_invalidas(self):
        """Test: menos de 2 divisiones o un modo desconocido se rechazan"""
        with self.assertRaises(ValueError):
            bench.build_table(1)
        with self.assertRaises(ValueError):
            bench.build_table(4, mode='cubica')

    def _tabla_exacta(self):
        # espaciado 0.5: los bordes de celda son representables sin error
        valores = np.random.default_rng(1).normal(size=(4,) * 4 + (2,))
        return bench.LookupTable(np.full(4, -1.0), np.full(4, 1.0), 4, valores)

    def test_empate_en_borde_de_celda(self):
        """Test: un punto sobre el borde entre dos celdas toma la de índice inferior"""
        tabla = self._tabla_exacta()
        for j in (1, 2, 3):
            borde = -1.0 + j * 0.5
            np.testing.assert_array_equal(tabla.query(borde, -0.25, 0.25, 0.75), tabla.values[j - 1, 1, 2, 3])
            np.testing.assert_array_equal(tabla.query(0.75, -0.25, borde, 0.25), tabla.values[3, 1, j - 1, 2])

    def test_extremos_del_dominio(self):
        """Test: hi cae en la última celda y lo en la primera"""
        tabla = self._tabla_exacta()
        np.testing.assert_array_equal(tabla.query(1.0, 1.0, 1.0, 1.0), tabla.values[3, 3, 3, 3])
        np.testing.assert_array_equal(tabla.query(-1.0, -1.0, -1.0, -1.0), tabla.values[0, 0, 0, 0])
        np.testing.assert_array_equal(tabla.query(1.0, -0.25, -1.0, 0.25), tabla.values[3, 1, 0, 2])


class AccuracySweepTest(SimpleTestCase):
    """Tests para el barrido de precisión"""

    def test_solucion_exacta_sin_error(self):
        """Test: el contendiente exacto tiene error cero"""
        (fila,) = bench.accuracy_sweep([bench.exact_contender()], samples=200)
        self.assertEqual(fila.mean_abs_err, 0.0)
        self.assertIsNone(fila.flops)

    def test_tablas_mas_finas_son_mas_precisas(self):
        """Test: el error medio de las tablas baja con d = 4, 8, 16"""
        tablas = [bench.table_contender(d, h=0.05) for d in (4, 8, 16)]
        errores = [f.mean_abs_err for f in bench.accuracy_sweep(tablas, samples=2000)]
        self.assertTrue(errores[0] > errores[1] > errores[2], errores)

    def test_rk4_gana_a_euler_con_igual_costo(self):
        """Test: con ~1216 FLOPs, RK4 (16 pasos) es más preciso que Euler (203 pasos)"""
        rk4, euler = bench.accuracy_sweep(
            [bench.integrator_contender('rk4', 16), bench.integrator_contender('euler', 203)], samples=1000,
        )
        self.assertLess(rk4.mean_abs_err, euler.mean_abs_err)

    def test_rk4_mejora_con_mas_pasos(self):
        """Test: más pasos de RK4 dan menos error"""
        filas = bench.accuracy_sweep([bench.integrator_contender('rk4', s) for s in (4, 8, 16)], samples=500)
        errores = [f.mean_abs_err for f in filas]
        self.assertTrue(errores[0] > errores[1] > errores[2], errores)
        self.assertTrue(all(f.p5 <= f.p95 for f in filas))


class ContenderTest(SimpleTestCase):
    """Tests para la construcción de contendientes y los reportes"""

    def setUp(self):
        """Configuración inicial para los tests"""
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.dir = Path(tmp.name)

    def _guardar(self, config, hidden):
        params = network.init(spec_for(config, hidden=hidden), 0)
        return network.save(params, self.dir / f'{config.system.name}.ckpt', bundle=config.to_dict())

    def test_red_desde_checkpoint(self):
        """Test: el contendiente de red informa FLOPs y bytes de sus parámetros"""
        contendiente = bench.network_contender(self._guardar(sho_config(), (16, 16)))
        self.assertEqual(contendiente.name, 'network:16x16')
        self.assertEqual(contendiente.flops, 877)
        self.assertEqual(contendiente.bytes, 386 * 8)

    def test_red_de_otro_sistema(self):
        """Test: un bundle que no es SHO no puede entrar al estudio"""
        with self.assertRaises(ValueError):
            bench.network_contender(self._guardar(fhn_config(), (4,)))

    def test_parseo_de_contendientes(self):
        """Test: las especificaciones de texto arman el contendiente correcto"""
        self.assertEqual(bench.parse_contender('exact').kind, 'exact')
        self.assertEqual(bench.parse_contender('rk4:8').flops, 8 * 76)
        self.assertEqual(bench.parse_contender('euler:10').name, 'euler:10')
        self.assertEqual(bench.parse_contender('table:3:multilinear', table_h=0.1).name, 'table:3:multilinear')
        with self.assertRaises(ValueError):
            bench.parse_contender('spline:3')

    def test_reportes(self):
        """Test: run_bench escribe ambos reportes con las columnas esperadas"""
        flops, memoria = bench.run_bench(
            self.dir, checkpoints=[self._guardar(sho_config(), (4,))], rk4_steps=[4, 8], euler_steps=[16],
            table_divisions=[4], samples=200, table_h=0.1,
        )
        encabezado, filas = read_csv(flops)
        self.assertEqual(encabezado, list(bench.REPORT_COLUMNS))
        self.assertEqual([f[0] for f in filas], ['network:4', 'exact', 'rk4:4', 'rk4:8', 'euler:16'])
        self.assertEqual(filas[1][1], '')
        _, filas = read_csv(memoria)
        self.assertEqual([f[0] for f in filas], ['network:4', 'table:4'])
        self.assertEqual(filas[1][2], str(4 ** 4 * 2 * 8))
