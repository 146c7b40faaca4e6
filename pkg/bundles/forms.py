"""
Formularios de validación para las secciones de una configuración de corrida
"""
from django import forms
from django.core.exceptions import ValidationError
import logging

from .bundle import A_KINDS, BundleConfig
from .odezoo import SYSTEMS
from .training import DECAY_KINDS, PlateauConfig

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
SOLUTION_KINDS = ('bundle', 'exact', 'oracle')


def _intervalos(valor, nombre):
    """Lista de pares [lo, hi] con lo < hi"""
    if not isinstance(valor, (list, tuple)):
        raise ValidationError(f'{nombre} debe ser una lista de intervalos [lo, hi]')
    pares = []
    for par in valor:
        if not isinstance(par, (list, tuple)) or len(par) != 2:
            raise ValidationError(f'Cada intervalo de {nombre} debe tener exactamente dos extremos')
        try:
            lo, hi = float(par[0]), float(par[1])
        except (TypeError, ValueError):
            raise ValidationError(f'Extremos no numéricos en {nombre}: {par}')
        if not lo < hi:
            raise ValidationError(f'Intervalo degenerado en {nombre}: [{lo}, {hi}]')
        pares.append([lo, hi])
    return pares


def _enteros_positivos(valor, nombre, vacio=False):
    if not isinstance(valor, (list, tuple)) or (not valor and not vacio):
        raise ValidationError(f'{nombre} debe ser una lista de enteros positivos')
    try:
        enteros = [int(v) for v in valor]
    except (TypeError, ValueError):
        raise ValidationError(f'{nombre} debe contener solo enteros')
    if any(v < 1 or v != float(w) for v, w in zip(enteros, valor)):
        raise ValidationError(f'{nombre} debe contener enteros positivos')
    return enteros


class ConfigSectionForm(forms.Form):
    """Base: completa los campos opcionales ausentes con su valor por defecto"""
    defaults = {}

    def clean(self):
        cleaned = super().clean()
        for campo, valor in self.defaults.items():
            if cleaned.get(campo) in (None, '') and campo not in self.errors:
                cleaned[campo] = valor
        return cleaned


class RunForm(ConfigSectionForm):
    """Encabezado de la configuración"""
    config_version = forms.IntegerField(min_value=CONFIG_VERSION, max_value=CONFIG_VERSION)
    system = forms.ChoiceField(choices=[(s, s) for s in sorted(SYSTEMS)])
    seed = forms.IntegerField(required=False, min_value=0)
    output_dir = forms.CharField(required=False, max_length=500)
    defaults = {'seed': 0, 'output_dir': ''}


class NetworkForm(ConfigSectionForm):
    hidden = forms.JSONField()
    skip_connections = forms.BooleanField(required=False)
    defaults = {'skip_connections': False}

    def clean_hidden(self):
        return _enteros_positivos(self.cleaned_data.get('hidden'), 'hidden')


class BundleForm(ConfigSectionForm):
    """Dominios del bundle; se cruzan con n y p del sistema elegido"""
    time_window = forms.JSONField()
    x0_box = forms.JSONField()
    theta_box = forms.JSONField(required=False)
    fixed_params = forms.JSONField(required=False)
    a_kind = forms.ChoiceField(choices=[(k, k) for k in A_KINDS], required=False)
    train_time_margin = forms.FloatField(required=False, min_value=0)
    normalize_inputs = forms.BooleanField(required=False)
    defaults = {'theta_box': [], 'fixed_params': {}, 'a_kind': 'exp', 'normalize_inputs': False}

    def __init__(self, *args, **kwargs):
        self.system = kwargs.pop('system', None)
        super().__init__(*args, **kwargs)

    def clean_time_window(self):
        valor = self.cleaned_data.get('time_window')
        return _intervalos([valor], 'time_window')[0]

    def clean_x0_box(self):
        return _intervalos(self.cleaned_data.get('x0_box'), 'x0_box')

    def clean_theta_box(self):
        valor = self.cleaned_data.get('theta_box')
        return [] if valor in (None, '') else _intervalos(valor, 'theta_box')

    def clean_fixed_params(self):
        valor = self.cleaned_data.get('fixed_params')
        if valor in (None, ''):
            return {}
        if not isinstance(valor, dict):
            raise ValidationError('fixed_params debe ser un objeto {parámetro: valor}')
        try:
            return {str(k): float(v) for k, v in valor.items()}
        except (TypeError, ValueError):
            raise ValidationError('Los valores de fixed_params deben ser numéricos')

    def clean(self):
        cleaned = super().clean()
        if self.errors or self.system is None:
            return cleaned
        try:
            self.bundle_config = BundleConfig(
                system=self.system,
                time_window=cleaned['time_window'],
                x0_box=cleaned['x0_box'],
                theta_box=cleaned['theta_box'],
                fixed_params=cleaned['fixed_params'],
                a_kind=cleaned['a_kind'],
                train_time_margin=cleaned.get('train_time_margin'),
                normalize_inputs=cleaned['normalize_inputs'],
            )
        except (KeyError, ValueError) as e:
            raise ValidationError(str(e))
        return cleaned


class TrainingForm(ConfigSectionForm):
    lr = forms.FloatField(required=False)
    batch_size = forms.IntegerField(required=False, min_value=1)
    total_batches = forms.IntegerField(required=False, min_value=1)
    curriculum = forms.BooleanField(required=False)
    decay = forms.ChoiceField(choices=[(k, k) for k in DECAY_KINDS], required=False)
    weight_lambda = forms.FloatField(required=False, min_value=0)
    plateau = forms.JSONField(required=False)
    lr_overrides = forms.JSONField(required=False)
    checkpoint_every = forms.IntegerField(required=False, min_value=1)
    log_every = forms.IntegerField(required=False, min_value=1)
    smoothing_window = forms.IntegerField(required=False, min_value=1)
    defaults = {
        'lr': 1e-3, 'batch_size': 1024, 'total_batches': 1000, 'curriculum': False,
        'decay': 'fixed', 'weight_lambda': 0.0, 'lr_overrides': [],
        'checkpoint_every': 1000, 'log_every': 100,
    }

    def clean_lr(self):
        lr = self.cleaned_data.get('lr')
        if lr is not None and lr <= 0:
            raise ValidationError('La tasa de aprendizaje debe ser > 0')
        return lr

    def clean_plateau(self):
        valor = self.cleaned_data.get('plateau')
        if valor in (None, ''):
            return None
        if not isinstance(valor, dict):
            raise ValidationError('plateau debe ser un objeto o null')
        permitidos = set(PlateauConfig.__dataclass_fields__)
        extra = set(valor) - permitidos
        if extra:
            raise ValidationError(f'Claves desconocidas en plateau: {sorted(extra)}')
        try:
            return PlateauConfig(**valor).to_dict()
        except (TypeError, ValueError) as e:
            raise ValidationError(str(e))

    def clean_lr_overrides(self):
        valor = self.cleaned_data.get('lr_overrides')
        if valor in (None, ''):
            return []
        if not isinstance(valor, list):
            raise ValidationError('lr_overrides debe ser una lista de pares [batch, lr]')
        pares = []
        for par in valor:
            try:
                batch, lr = int(par[0]), float(par[1])
            except (TypeError, ValueError, IndexError, KeyError):
                raise ValidationError(f'Par inválido en lr_overrides: {par}')
            if batch < 0 or lr <= 0:
                raise ValidationError(f'Par inválido en lr_overrides: {par}')
            pares.append([batch, lr])
        return sorted(pares)


class EvalForm(ConfigSectionForm):
    checkpoint = forms.CharField(required=False, max_length=500)
    queries = forms.CharField(required=False, max_length=500)
    points = forms.JSONField(required=False)
    defaults = {'checkpoint': '', 'queries': '', 'points': []}


class DensityForm(ConfigSectionForm):
    kind = forms.ChoiceField(choices=[('gaussian', 'gaussian'), ('uniform', 'uniform')])
    mean = forms.JSONField(required=False)
    sigma = forms.JSONField(required=False)

    def clean(self):
        cleaned = super().clean()
        if cleaned.get('kind') == 'gaussian':
            for campo in ('mean', 'sigma'):
                if not isinstance(cleaned.get(campo), list):
                    self.add_error(campo, 'La densidad gaussiana requiere una lista por componente')
            sigma = cleaned.get('sigma')
            if isinstance(sigma, list) and any(not isinstance(s, (int, float)) or s <= 0 for s in sigma):
                self.add_error('sigma', 'Las desviaciones estándar deben ser > 0')
        return cleaned


class PropagateForm(ConfigSectionForm):
    solution = forms.ChoiceField(choices=[(k, k) for k in SOLUTION_KINDS], required=False)
    checkpoint = forms.CharField(required=False, max_length=500)
    times = forms.JSONField()
    resolution = forms.IntegerField(required=False, min_value=1)
    components = forms.JSONField(required=False)
    bins = forms.JSONField(required=False)
    theta = forms.JSONField(required=False)
    density = forms.JSONField(required=False)
    asteroid = forms.JSONField(required=False)
    defaults = {'solution': 'bundle', 'checkpoint': '', 'theta': [], 'density': {'kind': 'uniform'}}

    def clean_times(self):
        valor = self.cleaned_data.get('times')
        if isinstance(valor, (int, float)):
            valor = [valor]
        if not isinstance(valor, list) or not valor:
            raise ValidationError('times debe ser un número o una lista de tiempos')
        return [float(t) for t in valor]


class InferForm(ConfigSectionForm):
    solution = forms.ChoiceField(choices=[(k, k) for k in SOLUTION_KINDS], required=False)
    checkpoint = forms.CharField(required=False, max_length=500)
    likelihood = forms.ChoiceField(choices=[(k, k) for k in SOLUTION_KINDS], required=False)
    data = forms.JSONField(required=False)
    synthetic = forms.JSONField(required=False)
    grid = forms.JSONField(required=False)
    fixed = forms.JSONField(required=False)
    map = forms.JSONField(required=False)
    defaults = {'solution': 'bundle', 'checkpoint': '', 'data': [], 'fixed': {}, 'grid': {}}

    def clean_grid(self):
        valor = self.cleaned_data.get('grid')
        if valor in (None, ''):
            return {}
        if not isinstance(valor, dict):
            raise ValidationError('grid debe mapear eje -> [lo, hi, celdas]')
        for eje, spec in valor.items():
            if not isinstance(spec, list) or len(spec) != 3 or int(spec[2]) < 1 or not float(spec[0]) < float(spec[1]):
                raise ValidationError(f'Eje {eje}: se espera [lo, hi, celdas] con lo < hi y celdas >= 1')
        return valor

    def clean(self):
        cleaned = super().clean()
        if not cleaned.get('data') and not cleaned.get('synthetic'):
            self.add_error('data', 'Se necesitan datos o una sección synthetic')
        return cleaned


class BenchForm(ConfigSectionForm):
    checkpoints = forms.JSONField(required=False)
    rk4_steps = forms.JSONField(required=False)
    euler_steps = forms.JSONField(required=False)
    table_divisions = forms.JSONField(required=False)
    table_mode = forms.ChoiceField(choices=[('nearest', 'nearest'), ('multilinear', 'multilinear')], required=False)
    table_h = forms.FloatField(required=False, min_value=1e-9)
    samples = forms.IntegerField(required=False, min_value=1)
    defaults = {
        'checkpoints': [], 'rk4_steps': [], 'euler_steps': [], 'table_divisions': [],
        'table_mode': 'nearest', 'table_h': 1e-2, 'samples': 10000,
    }

    def clean_rk4_steps(self):
        return _enteros_positivos(self.cleaned_data.get('rk4_steps') or [], 'rk4_steps', vacio=True)

    def clean_euler_steps(self):
        return _enteros_positivos(self.cleaned_data.get('euler_steps') or [], 'euler_steps', vacio=True)

    def clean_table_divisions(self):
        divisiones = _enteros_positivos(self.cleaned_data.get('table_divisions') or [], 'table_divisions', vacio=True)
        if any(d < 2 for d in divisiones):
            raise ValidationError('Cada tabla necesita al menos 2 divisiones por eje')
        return divisiones

    def clean_checkpoints(self):
        valor = self.cleaned_data.get('checkpoints') or []
        if not isinstance(valor, list) or not all(isinstance(p, str) for p in valor):
            raise ValidationError('checkpoints debe ser una lista de rutas')
        return valor
