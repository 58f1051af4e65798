"""Run the Django test suites under pytest: configure settings and a test database
the same way ``manage.py test`` does."""

import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "vmsched.settings")
django.setup()


def pytest_sessionstart(session):
    from django.db import connection
    from django.test.utils import setup_test_environment

    setup_test_environment()
    session.config._vmsched_old_db = connection.creation.create_test_db(verbosity=0)


def pytest_sessionfinish(session, exitstatus):
    from django.db import connection
    from django.test.utils import teardown_test_environment

    old = getattr(session.config, "_vmsched_old_db", None)
    if old is not None:
        connection.creation.destroy_test_db(old, verbosity=0)
    teardown_test_environment()
