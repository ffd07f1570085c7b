import numpy as np
import pytest
from hypothesis import settings

from ddstn import GenConfig, TrainConfig, generate_synthetic
from ddstn.networks import vector_backbone
from ddstn.training import ChannelSpecs

settings.register_profile("ddstn", deadline=None, max_examples=50)
settings.load_profile("ddstn")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_ds():
    return generate_synthetic(GenConfig(n_paired=20, n_unpaired=30, dim_s=4, dim_t=4, seed=1))


@pytest.fixture(scope="session")
def small_specs():
    layers = vector_backbone(8, 4)
    return ChannelSpecs(layers, list(layers), (4,), (4,))


@pytest.fixture(scope="session")
def quick_cfg():
    return TrainConfig(epochs=3, paired_batch_size=8, unpaired_batch_size=8, seed=0)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request, capsys):
    """Call with (criterion, passed, detail); prints one PASS/FAIL line."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(criterion: str, passed: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}" + (f": {detail}" if detail else "")
        lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
