import pytest


@pytest.fixture(scope="session")
def desk():
    """Trained desk-scale models; several minutes on one CPU, built once per session."""
    from desk import run_desk

    return run_desk(log=lambda msg: None)
