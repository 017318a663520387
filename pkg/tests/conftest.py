import numpy as np
import pytest

from govos import media_io as mio
from govos.solver import SolverConfig, build_problem


def small_instance(seed=0, m=5, side=8, size=3, velocity=(1.0, 0.0), bg=(0.0, -1.0), shape="square"):
    spec = mio.SynthSpec(m=m, h=side, w=side, size=size, shape=shape, velocity=velocity,
                         background_velocity=bg, seed=seed)
    return mio.synth_sequence(spec)


def constant_flows(m, h, w, dx, dy):
    fwd = np.zeros((m - 1, h, w, 2))
    fwd[..., 0], fwd[..., 1] = dx, dy
    return mio.FlowSet(fwd, -fwd)


@pytest.fixture
def instance():
    video, flows, gt = small_instance()
    config = SolverConfig()
    return video, flows, gt, config, build_problem(video, flows, config)


_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one acceptance line; printed in the terminal summary."""
    def _report(criterion, passed, detail):
        _ACCEPTANCE.append((criterion, passed, detail))
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split()[0])):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
