"""
Finite-difference gradient checking.
"""

from typing import Callable, Tuple, Union

import numpy as np

ValueAndGrad = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def numerical_gradient(f: ValueAndGrad, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of f's value at x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + eps
        plus = f(x)[0]
        x[index] = original - eps
        minus = f(x)[0]
        x[index] = original
        grad[index] = (plus - minus) / (2.0 * eps)
    return grad


def grad_check(
    f: ValueAndGrad,
    x: Union[float, np.ndarray],
    eps: float = 1e-6,
    atol: float = 0.0,
) -> float:
    """
    Compare an analytic gradient with central differences.

    Args:
        f: Function returning (value, analytic gradient shaped like x)
        x: Point to check at
        eps: Finite-difference step
        atol: Absolute errors at or below this count as exact (noise floor)

    Returns:
        max over coordinates of |g_a - g_fd| / max(1e-12, |g_a| + |g_fd|)
    """
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(f(x.copy())[1], dtype=np.float64).reshape(x.shape)
    numeric = numerical_gradient(f, x, eps)
    error = np.abs(analytic - numeric)
    relative = error / np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
    relative[error <= atol] = 0.0
    return float(relative.max()) if relative.size else 0.0
