from django.contrib import admin
from django.utils.html import format_html
from .models import TrainRun, Checkpoint


class CheckpointInline(admin.TabularInline):
    """Checkpoints de la corrida, solo lectura"""
    model = Checkpoint
    extra = 0
    fields = ['batch', 'loss', 'learning_rate', 'path', 'fecha_creacion']
    readonly_fields = fields
    can_delete = False


@admin.register(TrainRun)
class TrainRunAdmin(admin.ModelAdmin):
    """Configuración del administrador para corridas de entrenamiento"""
    list_display = ['id', 'system', 'status_badge', 'progreso_admin', 'last_loss', 'smoothed_loss', 'seed', 'fecha_creacion']
    list_filter = ['status', 'system', 'fecha_creacion']
    search_fields = ['system', 'output_dir', 'message']
    date_hierarchy = 'fecha_creacion'
    inlines = [CheckpointInline]

    fieldsets = (
        ('Corrida', {
            'fields': ('system', 'seed', 'status', 'output_dir')
        }),
        ('Progreso', {
            'fields': ('total_batches', 'batches_done', 'last_loss', 'smoothed_loss', 'message')
        }),
        ('Configuración', {
            'fields': ('config',),
            'classes': ('collapse',)
        }),
        ('Fechas', {
            'fields': ('fecha_creacion', 'fecha_actualizacion'),
            'classes': ('collapse',)
        }),
    )

    readonly_fields = ['fecha_creacion', 'fecha_actualizacion']

    def status_badge(self, obj):
        colores = {
            'RUNNING': '#3498db',
            'FINISHED': '#27ae60',
            'FAILED': '#e74c3c',
            'INTERRUPTED': '#f39c12',
        }
        return format_html(
            '<span style="color: {}; font-weight: bold;">{}</span>',
            colores.get(obj.status, '#7f8c8d'),
            obj.get_status_display()
        )
    status_badge.short_description = 'Estado'

    def progreso_admin(self, obj):
        try:
            return f'{100 * obj.progreso():.1f} %'
        except Exception:
            return "Error"
    progreso_admin.short_description = 'Progreso'


@admin.register(Checkpoint)
class CheckpointAdmin(admin.ModelAdmin):
    list_display = ['run', 'batch', 'loss', 'learning_rate', 'parent', 'fecha_creacion']
    list_filter = ['run__system']
    search_fields = ['path']
    readonly_fields = ['fecha_creacion']
