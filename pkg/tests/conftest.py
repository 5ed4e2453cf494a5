import time

import numpy as np
import pytest

from sfdehaze.config import RunConfig
from sfdehaze.experiment import adapt_desk, heldout, train_desk_source
from sfdehaze.haze_sim import generate, source_domain, target_domain
from sfdehaze.tensor import current_graph


@pytest.fixture(autouse=True)
def _clean_graph():
    current_graph().clear()
    yield
    current_graph().clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def source_samples():
    return generate(source_domain(), 50)


@pytest.fixture(scope="session")
def target_samples():
    return generate(target_domain(), 50)


@pytest.fixture(scope="session")
def desk_cfg():
    return RunConfig()


@pytest.fixture(scope="session")
def desk_source(desk_cfg):
    """Source network trained with the default seeded configuration (shared by slow tests)."""
    t0 = time.process_time()
    ckpt, history = train_desk_source(desk_cfg)
    return {"ckpt": ckpt, "history": history, "cpu_seconds": time.process_time() - t0}


@pytest.fixture(scope="session")
def desk_heldout(desk_cfg):
    return {"target": heldout(desk_cfg, "target"), "source": heldout(desk_cfg, "source")}


@pytest.fixture(scope="session")
def desk_adapted(desk_cfg, desk_source, desk_heldout):
    """Full default adaptation run, evaluated on held-out target pairs after every epoch."""
    t0 = time.process_time()
    ckpt, report = adapt_desk(desk_source["ckpt"], desk_cfg, eval_pairs=desk_heldout["target"])
    return {"ckpt": ckpt, "report": report, "cpu_seconds": time.process_time() - t0}


# ---------------------------------------------------------------------------
# acceptance criteria report

ACCEPTANCE_LINES = {}


@pytest.fixture
def record_criterion():
    def record(number: int, title: str, passed: bool, detail: str):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
