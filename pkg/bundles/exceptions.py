"""
Jerarquía de errores de odebundle
"""


class OdeBundleError(Exception):
    """Error base de la aplicación"""


class DomainError(OdeBundleError, ValueError):
    """Operación elemental fuera de su dominio (÷0, sqrt de negativo, pow inválido)"""


class SingularityError(DomainError):
    """El campo vectorial es singular en el estado pedido"""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time

    def at(self, time):
        """Devuelve una copia del error anotada con el tiempo de falla"""
        return SingularityError(f'{self.args[0]} (t={time})', time=time)


class ParameterError(OdeBundleError, ValueError):
    """Parámetro físico inválido para el sistema (τ ≤ 0, k ≤ 0, ...)"""


class NumericalFailure(OdeBundleError, ArithmeticError):
    """Valores no finitos durante el entrenamiento o la evaluación"""

    def __init__(self, message, batch=None, diagnostic=None):
        super().__init__(message)
        self.batch = batch
        self.diagnostic = diagnostic or {}


class CheckpointError(OdeBundleError):
    """Archivo de checkpoint malformado, truncado o incompatible con la especificación"""


class ConfigError(OdeBundleError):
    """Configuración inválida; `errors` mapea 'seccion.campo' a la lista de mensajes"""

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = errors or {}

    def __str__(self):
        if not self.errors:
            return self.args[0]
        detalle = '; '.join(f'{campo}: {" ".join(msgs)}' for campo, msgs in sorted(self.errors.items()))
        return f'{self.args[0]}: {detalle}'


class DataError(OdeBundleError, ValueError):
    """Datos u objetos de inferencia inválidos (grilla vacía, tiempo fuera de ventana)"""
