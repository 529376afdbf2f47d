import os

# single-threaded BLAS keeps reductions in a fixed order, so runs are bit-reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from graphtransformer import autodiff as ad


@pytest.fixture
def fp64():
    with ad.precision("float64"):
        yield


@pytest.fixture(autouse=True)
def _reset_dtype():
    yield
    ad.set_default_dtype(np.float32)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_RESULTS

    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_RESULTS, key=lambda l: int(l.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
