"""
Entrena un solution bundle: `odebundle train --config configs/sho_desk.json`
"""
import logging

from django.db import DatabaseError

from ...exceptions import ConfigError, NumericalFailure
from ...models import Checkpoint, TrainRun
from ...training import run_training
from ..base import OdeBundleCommand

logger = logging.getLogger(__name__)


class RunRecorder:
    """Lleva el registro en base de datos; sus fallas se registran y se ignoran"""

    def __init__(self, config, resume):
        self.run = None
        self.ultimo = None
        try:
            if resume:
                self.run = TrainRun.objects.filter(output_dir=str(config.output_dir)).first()
                if self.run is not None:
                    self.ultimo = self.run.ultimo_checkpoint()
                    self.run.status = 'RUNNING'
                    self.run.total_batches = config.training.optimizer.total_batches
                    self.run.config = config.resolved
                    self.run.save(update_fields=['status', 'total_batches', 'config', 'fecha_actualizacion'])
            if self.run is None:
                self.run = TrainRun.objects.create(
                    system=config.system.name,
                    config=config.resolved,
                    seed=config.seed,
                    total_batches=config.training.optimizer.total_batches,
                    output_dir=str(config.output_dir),
                )
        except DatabaseError as e:
            logger.error(f'No se pudo registrar la corrida (se continúa sin registro): {e}')
            self.run = None

    def checkpoint(self, batch, path, loss, lr):
        if self.run is None:
            return
        try:
            self.ultimo = Checkpoint.objects.create(
                run=self.run, batch=batch, path=str(path), loss=loss, learning_rate=lr, parent=self.ultimo,
            )
            self.run.batches_done = batch
            self.run.last_loss = loss
            self.run.save(update_fields=['batches_done', 'last_loss', 'fecha_actualizacion'])
        except DatabaseError as e:
            logger.error(f'Error registrando el checkpoint del batch {batch}: {e}')

    def finish(self, status, message='', smoothed=None):
        if self.run is None:
            return
        if smoothed is not None:
            try:
                self.run.smoothed_loss = smoothed
                self.run.save(update_fields=['smoothed_loss', 'fecha_actualizacion'])
            except DatabaseError as e:
                logger.error(f'Error actualizando la corrida {self.run.pk}: {e}')
        self.run.finalizar(status, message)


class Command(OdeBundleCommand):
    help = 'Entrena un solution bundle y escribe checkpoint.ckpt, loss.csv y config.resolved'
    command_name = 'train'

    def run(self, config, options):
        faltantes = {s: ['sección requerida para entrenar'] for s in ('bundle', 'network', 'training')
                     if getattr(config, s) is None}
        if faltantes:
            raise ConfigError('Configuración incompleta para entrenar', faltantes)
        threads = self.threads(options)
        registro = RunRecorder(config, options.get('resume'))
        self.stdout.write(
            f'Entrenando {config.system.name}: red {config.network.hidden}, '
            f'{config.training.optimizer.total_batches} batches de {config.training.optimizer.batch_size}'
        )
        try:
            resultado = run_training(
                config.bundle, config.network, config.training, config.output_dir,
                resume=options.get('resume', False), threads=threads, on_checkpoint=registro.checkpoint,
            )
        except KeyboardInterrupt:
            registro.finish('INTERRUPTED', 'Interrumpida por el usuario')
            raise
        except NumericalFailure as e:
            registro.finish('FAILED', str(e))
            raise
        registro.finish('FINISHED', smoothed=resultado.smoothed_loss)
        self.stdout.write(self.style.SUCCESS(
            f'Entrenamiento terminado en el batch {resultado.batches}: '
            f'pérdida={resultado.final_loss:.4e} suavizada={resultado.smoothed_loss:.4e} η={resultado.lr:.2e}'
        ))
        return [resultado.checkpoint_path, resultado.loss_log_path]
