import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_poisson_config(**over):
    """A seconds-scale variant of the poisson-desk preset."""
    from rebano.config import _merge, preset

    cfg = preset("poisson-desk")
    small = {
        "dataset": {"n": 32, "n_train": 6, "n_test": 4},
        "models": {"rebano": {"n_neurons": 2, "collocation": {"s_R": 32}},
                   "pcanet": {"hidden": [8, 8], "n_modes_in": 4, "n_modes_out": 4},
                   "deeponet": {"branch_hidden": [8], "trunk_hidden": [8], "latent": 4, "n_modes_in": 4}},
        "training": {"pinn": {"widths": [1, 8, 8, 1], "epochs": 100, "lr": 1e-2, "lbfgs_iters": 100},
                     "baseline": {"epochs": 20}},
        "experiment": {"sweep_count": 3, "ablation": {"seeds": [0, 1], "n_max": 2}},
    }
    return _merge(_merge(cfg, small), over)


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    _CRITERIA[mark.args[0]] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
