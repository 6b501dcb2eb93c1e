import numpy as np
import pytest

from vne_lab.autodiff import no_grad
from vne_lab.topology import PhysicalNetwork, VirtualNetworkRequest

# criterion id -> (outcome, detail) filled by the acceptance suite
ACCEPTANCE: dict[str, list] = {}


def ring(n=6, cap=100.0):
    links = [(i, (i + 1) % n) for i in range(n)]
    return PhysicalNetwork(np.full(n, cap), links, np.full(n, cap))


def path_vnr(n=3, node=10.0, link=5.0, vid=0):
    links = [(i, i + 1) for i in range(n - 1)]
    return VirtualNetworkRequest(vid, np.full(n, node), links, np.full(n - 1, link))


FD_EPS = 1e-5
FD_TOL = 1e-4


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def check_grads(fn, tensors, entries=None, seed=0):
    """Central differences of scalar ``fn()`` against backprop.

    The relative error is taken over the concatenated gradient of all
    ``tensors`` (one layer), so single near-zero entries cannot drown in
    finite-difference roundoff. ``entries`` limits the check to that many
    random coordinates per tensor. Returns the relative error.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    pick = np.random.default_rng(seed)
    analytic, numeric = [], []
    for t in tensors:
        grad = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if entries is not None and flat.size > entries:
            idx = np.sort(pick.choice(flat.size, entries, replace=False))
        for i in idx:
            old = flat[i]
            flat[i] = old + FD_EPS
            with no_grad():
                up = fn().item()
            flat[i] = old - FD_EPS
            with no_grad():
                down = fn().item()
            flat[i] = old
            numeric.append((up - down) / (2 * FD_EPS))
            analytic.append(grad[i])
    err = rel_error(np.array(analytic), np.array(numeric))
    assert err < FD_TOL, err
    return err


@pytest.fixture
def ring6():
    return ring(6)


@pytest.fixture
def acceptance_detail(request):
    """Acceptance tests call ``acceptance_detail(text)`` to attach the measured values."""
    key = request.node.name
    ACCEPTANCE.setdefault(key, ["?", ""])

    def record(text):
        ACCEPTANCE[key][1] = text

    return record


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid or report.when != "call" and not report.failed:
        return
    name = report.nodeid.split("::")[-1]
    entry = ACCEPTANCE.setdefault(name, ["?", ""])
    if report.when == "call" or report.failed:
        entry[0] = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter):
    rows = sorted((k, v) for k, v in ACCEPTANCE.items() if k.startswith("test_criterion"))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name, (outcome, detail) in rows:
        terminalreporter.write_line(f"{outcome:4}  {name}  {detail}")
