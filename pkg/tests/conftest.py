import time

import numpy as np
import pytest

from fermigate.lattice import DepthPoint, Discretization, LatticeConfig


@pytest.fixture(scope="session")
def config():
    return LatticeConfig()


@pytest.fixture(scope="session")
def disc():
    return Discretization()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def deep_depth():
    return DepthPoint(30.0, 40.0)


@pytest.fixture(scope="session")
def spline_table(config, tmp_path_factory):
    from fermigate.hubbard import build_spline_table

    return build_spline_table(config, cache_dir=tmp_path_factory.mktemp("jtable"))


# -- optimized pulses shared by the slow tests -------------------------------

def _sqrt_swap_016(config):
    from fermigate.optimize import make_problem, optimize_sqrt_swap

    pr = make_problem(config, "multiband-4", "sqrt-swap", 0.16, a=1500.0, max_iter=100)
    report, scan = optimize_sqrt_swap(pr, np.linspace(500.0, 3000.0, 26), rounds=2)
    return report, scan


class PulseBank:
    """Lazily optimized pulses, each computed at most once per session."""

    def __init__(self, config):
        self.config = config
        self._cache = {}
        self.seconds = {}  # wall time of each optimization, excluding its dependencies

    def get(self, name):
        if name not in self._cache:
            before = sum(self.seconds.values())
            t0 = time.perf_counter()
            value = getattr(self, "_" + name)()
            self.seconds[name] = time.perf_counter() - t0 - (sum(self.seconds.values()) - before)
            self._cache[name] = value
        return self._cache[name]

    def _swap(self, duration, max_iter=150):
        from fermigate.optimize import make_problem, optimize_state_transfer

        return optimize_state_transfer(make_problem(self.config, "multiband-4", "swap", duration,
                                                    max_iter=max_iter))

    def _swap_008(self):
        return self._swap(0.08)

    def _swap_010(self):
        return self._swap(0.10)

    def _swap_012(self):
        return self._swap(0.12, max_iter=100)

    def _full_swap_010(self):
        from fermigate.optimize import make_problem, optimize_full_gate

        pr = make_problem(self.config, "multiband-4", "swap", 0.10, full_gate=True, max_iter=100)
        return optimize_full_gate(pr, warm_start=self.get("swap_010").pulse)

    def _sqrt_016(self):
        return _sqrt_swap_016(self.config)

    def _full_sqrt_016(self):
        from fermigate.optimize import make_problem, optimize_full_gate

        start = self.get("sqrt_016")[0].pulse
        pr = make_problem(self.config, "multiband-4", "sqrt-swap", 0.16, a=start.a, full_gate=True,
                          max_iter=100)
        return optimize_full_gate(pr, warm_start=start)

    def _sqrt_012(self):
        from fermigate.optimize import make_problem, optimize_state_transfer

        a = self.get("sqrt_016")[0].pulse.a
        return optimize_state_transfer(make_problem(self.config, "multiband-4", "sqrt-swap", 0.12, a=a,
                                                    max_iter=100))


@pytest.fixture(scope="session")
def pulses(config):
    return PulseBank(config)


@pytest.fixture(scope="session")
def swap_010(pulses):
    return pulses.get("swap_010")


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
