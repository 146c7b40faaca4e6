"""
WSGI config for odebundle_site project.

Solo se usa para servir el admin del registro de corridas (runserver).
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'odebundle_site.settings')

application = get_wsgi_application()
