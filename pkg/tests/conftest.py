import numpy as np
import pandas as pd
import pytest
from hypothesis import settings

from tailcast.ingest import SeriesSpec, VintagePanel
from tailcast.synthetic import TARGET_ID, make_panel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def synth_panel():
    frame, specs = make_panel(n_months=180, seed=3)
    return VintagePanel.from_final(frame, [SeriesSpec(k, *v) for k, v in specs.items()])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toy_text(index, k=2, seed=0):
    r = np.random.default_rng(seed)
    th = r.dirichlet(np.ones(k), size=len(index))
    return pd.DataFrame(th, index=index, columns=[f"topic_{j + 1}" for j in range(k)])


__all__ = ["TARGET_ID", "toy_text"]


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
