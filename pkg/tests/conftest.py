import pytest

from sda_marl import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the jitted kernels once so timed tests measure math."""
    kernels.warmup()
    if kernels.HAS_NUMBA:
        for name in ("numpy", "numba"):
            kernels.backend_functions(name)
