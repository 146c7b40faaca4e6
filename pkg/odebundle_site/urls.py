from django.contrib import admin
from django.urls import path

# Solo el admin: permite revisar el registro de corridas y checkpoints
urlpatterns = [
    path('admin/', admin.site.urls),
]
