import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hecc.scenario import Scenario, ScenarioConfig
from hecc.system_model import AllocationDecision, PlacementDecision

settings.register_profile(
    "hecc", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("hecc")


def make_instance(M=2, K=2, S=2, seed=0, frame=0, slot=0, **overrides):
    cfg = ScenarioConfig(num_ues=M, num_ess=K, num_services=S, rng_seed=seed, **overrides)
    return Scenario(cfg).instance(frame, slot)


def half_split(M):
    return AllocationDecision(np.full(M, 0.5), np.full(M, 1.0 / M))


def kept_local(inst, es=0, services=None):
    """Every UE associated with ``es``, which hosts all requested services."""
    M, K, S = inst.M, inst.K, inst.S
    d = PlacementDecision.zeros(M, K, S)
    d.assoc[:, es] = 1.0
    for s in set(inst.services.tolist() if services is None else services):
        d.placement[s, es] = 1.0
    for k in range(K):
        if d.placement[:, k].sum() == 0:
            d.placement[0, k] = 1.0
    return d


@pytest.fixture
def tiny():
    return make_instance(2, 2, 2, seed=3)


@pytest.fixture
def table2():
    return Scenario(ScenarioConfig()).instance(0, 0)


ACCEPTANCE: list = []  # PASS/FAIL lines from test_acceptance.py


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
