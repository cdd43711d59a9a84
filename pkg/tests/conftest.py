from __future__ import annotations

import pytest

from fpou import kernel


@pytest.fixture(scope="session")
def table_075():
    """m = 10, alpha = 2 (n = 100), H = 0.75, lambda = 1."""
    return kernel.build_table(10, 2.0, 0.75, 1.0)


@pytest.fixture(scope="session")
def tables_small():
    return {H: kernel.build_table(10, 2.0, H, 1.0) for H in (0.55, 0.75, 0.9)}
