# Generated by Django 4.2.7 on 2026-10-18 10:12

import django.core.validators
from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='TrainRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('system', models.CharField(help_text='Nombre del sistema de EDO en el registro (crtbp, sho, ...)', max_length=50, verbose_name='Sistema')),
                ('config', models.JSONField(default=dict, verbose_name='Configuración resuelta')),
                ('seed', models.BigIntegerField(default=0, verbose_name='Semilla')),
                ('status', models.CharField(choices=[('RUNNING', 'En curso'), ('FINISHED', 'Terminada'), ('FAILED', 'Fallida'), ('INTERRUPTED', 'Interrumpida')], default='RUNNING', max_length=20, verbose_name='Estado')),
                ('total_batches', models.PositiveIntegerField(default=0, verbose_name='Batches totales')),
                ('batches_done', models.PositiveIntegerField(default=0, verbose_name='Batches completados')),
                ('last_loss', models.FloatField(blank=True, null=True, verbose_name='Última pérdida')),
                ('smoothed_loss', models.FloatField(blank=True, null=True, verbose_name='Pérdida suavizada')),
                ('output_dir', models.CharField(max_length=500, verbose_name='Directorio de salida')),
                ('message', models.TextField(blank=True, help_text='Diagnóstico de la falla, si la hubo', verbose_name='Mensaje')),
                ('fecha_creacion', models.DateTimeField(auto_now_add=True, verbose_name='Inicio')),
                ('fecha_actualizacion', models.DateTimeField(auto_now=True, verbose_name='Última actualización')),
            ],
            options={
                'verbose_name': 'Corrida de entrenamiento',
                'verbose_name_plural': 'Corridas de entrenamiento',
                'ordering': ['-fecha_creacion'],
            },
        ),
        migrations.CreateModel(
            name='Checkpoint',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('batch', models.PositiveIntegerField(validators=[django.core.validators.MinValueValidator(0)], verbose_name='Batch')),
                ('path', models.CharField(max_length=500, verbose_name='Ruta')),
                ('loss', models.FloatField(blank=True, null=True, verbose_name='Pérdida')),
                ('learning_rate', models.FloatField(verbose_name='Tasa de aprendizaje')),
                ('fecha_creacion', models.DateTimeField(auto_now_add=True, verbose_name='Fecha')),
                ('parent', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.SET_NULL, related_name='children', to='bundles.checkpoint', verbose_name='Checkpoint anterior')),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='checkpoints', to='bundles.trainrun', verbose_name='Corrida')),
            ],
            options={
                'verbose_name': 'Checkpoint',
                'verbose_name_plural': 'Checkpoints',
                'ordering': ['run', 'batch'],
            },
        ),
    ]
