import numpy as np

from sscl.model import ModelParams, _PARAM_NAMES


def flatten_params(params: ModelParams) -> np.ndarray:
    return np.concatenate([params.arrays()[name].ravel() for name in _PARAM_NAMES])


def unflatten_params(template: ModelParams, flat: np.ndarray) -> ModelParams:
    arrays = {}
    offset = 0
    for name in _PARAM_NAMES:
        ref = template.arrays()[name]
        arrays[name] = flat[offset : offset + ref.size].reshape(ref.shape).copy()
        offset += ref.size
    return ModelParams(**arrays)


def flatten_grads(grads: dict) -> np.ndarray:
    return np.concatenate([grads[name].ravel() for name in _PARAM_NAMES])


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative gap between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def random_column_stochastic(rng: np.random.Generator, n: int) -> np.ndarray:
    """A strictly positive column-stochastic matrix."""
    M = rng.uniform(0.1, 1.0, size=(n, n))
    return M / M.sum(axis=0, keepdims=True)
