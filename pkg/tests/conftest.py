import logging

import numpy as np
import pytest

from components.heapsafe_engine import EngineConfig, HeapSafeEngine, TraceLog, ValidationMode
from components.safe_heap import RunMode, RuntimeConfig, make_runtime


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def engine():
    return HeapSafeEngine(EngineConfig(mt_size=256), trace=TraceLog())


@pytest.fixture
def nb_engine():
    return HeapSafeEngine(EngineConfig(mt_size=256, mode=ValidationMode.NON_BLOCKING), trace=TraceLog())


@pytest.fixture
def runtime_for():
    """Factory: fresh runtime for a mode, with optional RuntimeConfig overrides."""
    def make(mode, **overrides):
        return make_runtime(RuntimeConfig(mode=RunMode(mode), **overrides))
    return make


@pytest.fixture
def cfg_file(tmp_path):
    """Factory: write a flat config file and return its path."""
    def write(text, name="heapsafe.cfg"):
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return write


@pytest.fixture
def restore_logging():
    """Undo setup_logging: its handler would outlive the captured stream it was bound to."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers:
        if handler not in handlers:
            handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)
