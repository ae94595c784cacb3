"""Shared fixtures for fast, deterministic tests on tiny models."""

from __future__ import annotations

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)
