from __future__ import annotations

import numpy as np
import pytest

from rsvp import autodiff as ad


@pytest.fixture(autouse=True)
def _float32_default():
    """Every test starts from the training default; 64-bit tests opt in."""
    ad.set_default_dtype("float32")
    yield
    ad.set_default_dtype("float32")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
