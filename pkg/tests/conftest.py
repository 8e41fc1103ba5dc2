import numpy as np
import pytest

from aqcl import ndcore as nd


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x``."""
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def analytic_grads(build, **arrays) -> dict[str, np.ndarray]:
    """Gradients of scalar ``build(**tensors)`` w.r.t. every named array."""
    tape = nd.Tape()
    with tape:
        ts = {k: tape.watch(v, k) for k, v in arrays.items()}
        out = build(**ts)
    return tape.backward(out)


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)))


def check_grads(build, rtol: float = 1e-4, **arrays) -> None:
    grads = analytic_grads(build, **arrays)
    for name, x in arrays.items():

        def f(v, name=name):
            kw = dict(arrays)
            kw[name] = v
            return float(build(**{k: nd.Tensor(a) for k, a in kw.items()}).data)

        num = numeric_grad(f, x)
        err = rel_err(grads[name], num)
        assert err <= rtol, f"{name}: relative error {err:.2e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ------------------------------------------------------------ acceptance lines

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(n: int, name: str, ok: bool, detail: str) -> None:
        line = f"criterion {n} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
