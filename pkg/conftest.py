import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'ecdt_project.settings')
django.setup()
