import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import simpson

sys.path.insert(0, str(Path(__file__).parent))

from twophase.cvfe import CvfeScheme, build_triangulation
from twophase.ddfv_mesh import build_structured
from twophase.ddfv_scheme import DdfvScheme
from twophase.discrete import boundary_sides
from twophase.fluid import FluidModel
from twophase.state import State

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def simpson_integral(fun, a, b, n=10_001):
    """Composite Simpson rule on ``n`` equispaced points (the quadrature oracle)."""
    x = np.linspace(a, b, n)
    return float(simpson(fun(x), x=x))


def random_state(backend, rng, p_range=(-1.0, 1.0), s_range=(0.0, 1.0)):
    n = backend.dof_count
    fl = backend.fluid
    p_w = rng.uniform(*p_range, n)
    return State(p_w + fl.pc(rng.uniform(*s_range, n)), p_w, fl)


def make_backend(kind, n=8, fluid=None, dt=0.01, porosity=0.3, permeability=None,
                 dirichlet="left", **kw):
    fluid = fluid or FluidModel()
    pred = boundary_sides(dirichlet)
    if kind.startswith("ddfv"):
        mesh = build_structured(n, n, kw.get("distortion", 0.0), pred, permeability, kw.get("seed", 0))
        return DdfvScheme(mesh, fluid, porosity, dt)
    mesh = build_triangulation(n, n, pred, kw.get("split", "diagonal"), kw.get("distortion", 0.0),
                               permeability, kw.get("seed", 0))
    return CvfeScheme(mesh, fluid, porosity, dt)


@pytest.fixture
def fluid():
    return FluidModel()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report -------------------------------------------------
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {num:2d}. {title}: {detail}")
