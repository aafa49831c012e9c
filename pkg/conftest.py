"""Configure Django before the test modules are collected."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'unitax_project.settings')
django.setup()
