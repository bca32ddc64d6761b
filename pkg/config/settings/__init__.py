"""
Settings package for the defacing toolkit.
Commands run with development settings unless DJANGO_SETTINGS_MODULE says otherwise
(pytest uses config.settings.test, batch hosts config.settings.production).
"""

import os

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "config.settings.development")
