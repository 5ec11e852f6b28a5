from types import SimpleNamespace

import pytest

from netmpc.design import design_network
from netmpc.netmodel import double_integrator_chain
from netmpc.ocp import compute_outer_sets, local_uncertainty

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def chain():
    """The five-node chain with its base designs, synthesized once per session."""
    net, bounds, true = double_integrator_chain()
    outer = compute_outer_sets(net)
    designs = design_network(net, bounds, 1e-6, outer)
    unc = {s.id: local_uncertainty(net, s.id, bounds, outer) for s in net}
    return SimpleNamespace(net=net, bounds=bounds, true=true, outer=outer, designs=designs, unc=unc)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
