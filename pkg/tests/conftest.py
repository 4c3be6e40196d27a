import numpy as np
import pytest

from rigjoints.model import JointLocalizer, ModelConfig
from rigjoints.numcore import Tape, backward


def central_difference(fn, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d fn / d arr by central differences; ``arr`` is perturbed in place and restored."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn()
        flat[i] = keep - h
        down = fn()
        flat[i] = keep
        g[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative error; ``floor`` keeps exactly-zero gradients from dividing noise by noise."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def tape_grads(build, tensors):
    """Run ``build()`` (returns a scalar Tensor) on a tape and return gradients of ``tensors``."""
    with Tape() as tape:
        loss = build()
    return backward(tape, loss, tensors)


def tiny_config(use_normals: bool = True, **kw) -> ModelConfig:
    base = dict(k_neighbors=4, edge_widths=(4, 4, 6, 8), mlp_width=8, joint_count=3, use_normals=use_normals)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    return JointLocalizer(tiny_config(), seed=3)
