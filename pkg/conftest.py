import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'sim2real_project.settings')
django.setup()
