from django.db import models
from django.core.validators import MinValueValidator
from django.core.exceptions import ValidationError
import logging

logger = logging.getLogger(__name__)


class TrainRun(models.Model):
    """
    Corrida de entrenamiento registrada. Los archivos en `output_dir` son la
    fuente de verdad; este registro sirve para consultar el historial.
    """
    ESTADO_CHOICES = [
        ('RUNNING', 'En curso'),
        ('FINISHED', 'Terminada'),
        ('FAILED', 'Fallida'),
        ('INTERRUPTED', 'Interrumpida'),
    ]

    system = models.CharField(
        max_length=50,
        verbose_name="Sistema",
        help_text="Nombre del sistema de EDO en el registro (crtbp, sho, ...)"
    )
    config = models.JSONField(
        default=dict,
        verbose_name="Configuración resuelta"
    )
    seed = models.BigIntegerField(
        default=0,
        verbose_name="Semilla"
    )
    status = models.CharField(
        max_length=20,
        choices=ESTADO_CHOICES,
        default='RUNNING',
        verbose_name="Estado"
    )
    total_batches = models.PositiveIntegerField(
        default=0,
        verbose_name="Batches totales"
    )
    batches_done = models.PositiveIntegerField(
        default=0,
        verbose_name="Batches completados"
    )
    last_loss = models.FloatField(
        null=True,
        blank=True,
        verbose_name="Última pérdida"
    )
    smoothed_loss = models.FloatField(
        null=True,
        blank=True,
        verbose_name="Pérdida suavizada"
    )
    output_dir = models.CharField(
        max_length=500,
        verbose_name="Directorio de salida"
    )
    message = models.TextField(
        blank=True,
        verbose_name="Mensaje",
        help_text="Diagnóstico de la falla, si la hubo"
    )
    fecha_creacion = models.DateTimeField(auto_now_add=True, verbose_name="Inicio")
    fecha_actualizacion = models.DateTimeField(auto_now=True, verbose_name="Última actualización")

    class Meta:
        verbose_name = "Corrida de entrenamiento"
        verbose_name_plural = "Corridas de entrenamiento"
        ordering = ['-fecha_creacion']

    def __str__(self):
        return f"{self.system} #{self.pk} ({self.get_status_display()}, {self.batches_done}/{self.total_batches})"

    def clean(self):
        super().clean()
        if self.total_batches and self.batches_done > self.total_batches:
            raise ValidationError({'batches_done': 'No puede superar el total de batches'})

    def progreso(self):
        """Fracción completada en [0, 1]"""
        if not self.total_batches:
            return 0.0
        return min(self.batches_done / self.total_batches, 1.0)

    def finalizar(self, status, message=''):
        """Marca el estado final sin interrumpir el cómputo si la base falla"""
        try:
            self.status = status
            self.message = message
            self.save(update_fields=['status', 'message', 'fecha_actualizacion'])
        except Exception as e:
            logger.error(f'Error actualizando estado de la corrida {self.pk}: {e}')

    def ultimo_checkpoint(self):
        try:
            return self.checkpoints.order_by('-batch').first()
        except Exception as e:
            logger.error(f'Error obteniendo checkpoints de la corrida {self.pk}: {e}')
            return None


class Checkpoint(models.Model):
    """Checkpoint escrito durante una corrida, con enlace a su predecesor"""
    run = models.ForeignKey(
        TrainRun,
        on_delete=models.CASCADE,
        related_name='checkpoints',
        verbose_name="Corrida"
    )
    batch = models.PositiveIntegerField(
        validators=[MinValueValidator(0)],
        verbose_name="Batch"
    )
    path = models.CharField(max_length=500, verbose_name="Ruta")
    loss = models.FloatField(null=True, blank=True, verbose_name="Pérdida")
    learning_rate = models.FloatField(verbose_name="Tasa de aprendizaje")
    parent = models.ForeignKey(
        'self',
        on_delete=models.SET_NULL,
        null=True,
        blank=True,
        related_name='children',
        verbose_name="Checkpoint anterior"
    )
    fecha_creacion = models.DateTimeField(auto_now_add=True, verbose_name="Fecha")

    class Meta:
        verbose_name = "Checkpoint"
        verbose_name_plural = "Checkpoints"
        ordering = ['run', 'batch']

    def __str__(self):
        return f"{self.run.system} #{self.run_id} @ {self.batch}"

    def linaje(self):
        """Cadena de checkpoints desde el primero hasta este"""
        cadena = []
        actual = self
        while actual is not None:
            cadena.append(actual)
            actual = actual.parent
        return list(reversed(cadena))
