import numpy as np
import torch
from hypothesis import settings, strategies as st

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")

coords = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)


@st.composite
def unit_vectors(draw, dim=3):
    v = np.asarray(draw(st.lists(coords, min_size=dim, max_size=dim)))
    norm = np.linalg.norm(v)
    if norm < 1e-3:
        v, norm = np.eye(dim)[draw(st.integers(0, dim - 1))], 1.0
    return torch.as_tensor(v / norm, dtype=torch.float64)


@st.composite
def tangent_pairs(draw, dim=3, max_norm=1.0):
    """(x, v) with v tangent at x and |v| <= max_norm."""
    x = draw(unit_vectors(dim))
    h = torch.as_tensor(draw(st.lists(coords, min_size=dim, max_size=dim)), dtype=torch.float64)
    v = h - (h @ x) * x
    n = float(v.norm())
    scale = draw(st.floats(0.0, max_norm))
    v = v / n * scale if n > 1e-6 else torch.zeros_like(v)
    return x, v


def gen(seed=0):
    g = torch.Generator()
    g.manual_seed(seed)
    return g


# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if passed else 'FAIL'} | {detail}")
