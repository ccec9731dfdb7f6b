import numpy as np
import pytest

from xtalflow.backbone import BackboneConfig, init_params
from xtalflow.lattice import Crystal, LatticeParams
from xtalflow.model import FlowModel
from xtalflow.paths import LogNormalPrior

from support import ACCEPTANCE_RESULTS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def nacl():
    a = 5.64 / np.sqrt(2.0)
    return Crystal(np.array([11, 17]), np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]]),
                   LatticeParams(np.full(3, a), np.full(3, 60.0)))


@pytest.fixture
def tiny_model():
    """Randomly initialized d=16 model; outputs are arbitrary but finite."""
    cfg = BackboneConfig(d_model=16, n_layers=1, n_heads=2, max_n=12, d_time=8, coord_harmonics=2)
    params = init_params(cfg, np.random.default_rng(7))
    rng = np.random.default_rng(8)
    params = {k: v + 0.05 * rng.standard_normal(v.shape) for k, v in params.items()}
    prior = LogNormalPrior(np.log([4.0, 4.5, 5.0]), np.full(3, 0.1))
    return FlowModel(cfg, params, prior, {2: 3, 4: 1})
