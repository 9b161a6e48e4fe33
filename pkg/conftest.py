import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'silrrt.settings')
django.setup()

# Manual print-style script (`python smoke_test.py`), not part of the suite.
collect_ignore = ['smoke_test.py']
