"""Shared fixtures: a worked discourse tree, tiny models, and a
finite-difference gradient oracle."""

from __future__ import annotations

import numpy as np
import pytest

from dnmt import tensor as tt

# Three-sentence document, six EDUs of two tokens each. The tree places
# e5 so its root-to-leaf walk reads SATELLITE_ELABORATION,
# SATELLITE_ELABORATION, SATELLITE_CONTRAST, and all six
# importance/relation combinations over ELABORATION, BACKGROUND and
# CONTRAST occur somewhere in the tree.
WORKED_TREE = (
    "(ELABORATION"
    " (N (BACKGROUND (S (EDU 1 0 2))"
    " (N (BACKGROUND (N (EDU 2 2 4)) (S (EDU 3 4 6))))))"
    " (S (ELABORATION"
    " (S (CONTRAST (N (EDU 4 6 8)) (S (EDU 5 8 10))))"
    " (N (EDU 6 10 12)))))"
)

WORKED_SRC = [
    ["the", "project", "began", "well"],
    ["funding", "arrived", "but", "delays"],
    ["hurt", "morale", "overall", "badly"],
]

WORKED_TGT = [
    ["das", "projekt", "begann", "gut"],
    ["geld", "kam", "aber", "verspaetung"],
    ["schadete", "moral", "insgesamt", "sehr"],
]

E5_PATH = ("SATELLITE_ELABORATION", "SATELLITE_ELABORATION", "SATELLITE_CONTRAST")


@pytest.fixture
def worked_tree_text() -> str:
    return WORKED_TREE


@pytest.fixture
def worked_doc_record() -> dict:
    return {"doc_id": "fig", "src": WORKED_SRC, "tgt": WORKED_TGT, "rst": WORKED_TREE}


@pytest.fixture
def float64_mode():
    tt.set_default_dtype(np.float64)
    yield
    tt.set_default_dtype(np.float32)


def finite_difference_check(loss_fn, tensors: dict, step: float = 1e-5,
                            rtol: float = 1e-4, atol: float = 1e-7,
                            sample: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Compare tape gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must be a deterministic closure over the given tensors'
    current data. Returns the worst relative error; raises AssertionError
    on any entry outside tolerance. ``sample`` caps checked entries per
    tensor (all entries when None).
    """
    with tt.Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    analytic = {}
    for name, t in tensors.items():
        analytic[name] = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        t.grad = None
    worst = 0.0
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        ag = analytic[name].reshape(-1)
        if sample is not None and flat.size > sample:
            assert rng is not None, "sampling requires an rng"
            idxs = rng.choice(flat.size, size=sample, replace=False)
        else:
            idxs = range(flat.size)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(ag[i] - numeric)
            if err <= atol:
                continue
            rel = err / max(abs(ag[i]), abs(numeric))
            worst = max(worst, rel)
            assert rel <= rtol, (
                f"gradient mismatch at {name}[{i}]: analytic {ag[i]:.8g}, "
                f"numeric {numeric:.8g}, rel err {rel:.3g}")
    return worst


@pytest.fixture
def gradcheck():
    return finite_difference_check
