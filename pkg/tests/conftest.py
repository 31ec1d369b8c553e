import numpy as np
import pytest

from mfakit.model import MfaModel, PrecisionComponent, m_matrix


def random_mfa_model(rs, k, d, m, psi_mode="free", scale=1.0):
    weights = rs.dirichlet(np.ones(k))
    means = rs.normal(0, scale, (k, d))
    loadings = rs.normal(0, 0.5, (k, d, m))
    noise = rs.uniform(0.2, 1.5, (k, d))
    if psi_mode == "tied":
        noise[:] = noise[0]
    elif psi_mode == "isotropic":
        noise[:] = noise[:, :1]
    return MfaModel(weights, means, loadings, noise, psi_mode)


def random_precision_component(rs, d, m, weight=1.0):
    """Valid precision component with a generic (non-diagonal) M matrix."""
    e = rs.uniform(0.5, 4.0, d)
    g = rs.normal(0, 1.0, (d, m))
    # shrink G until M = I - G^T E^-1 G has eigenvalues >= 0.05
    while m and np.linalg.eigvalsh(m_matrix(e, g))[0] < 0.05:
        g *= 0.8
    return PrecisionComponent(weight, rs.normal(0, 1, d), np.sqrt(e), g)


def dense_cov(loading, noise):
    return loading @ loading.T + np.diag(noise)


@pytest.fixture
def rs():
    return np.random.default_rng(20240611)


# one PASS/FAIL line per acceptance criterion, printed after the run

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        if rep.skipped and isinstance(rep.longrepr, tuple):
            detail = detail or rep.longrepr[2]
        _criteria[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title, detail = _criteria[number]
        line = f"criterion {number:2d} {status}: {title}"
        if detail:
            line += f" [{detail}]"
        terminalreporter.write_line(line)
