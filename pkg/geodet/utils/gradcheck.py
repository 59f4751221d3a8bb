"""Central finite differences for checking hand-written gradients."""

from typing import Callable, Iterable, Optional

import numpy as np

DEFAULT_STEP = 1e-4


def central_difference(func: Callable[[np.ndarray], float], x: np.ndarray, step: float = DEFAULT_STEP,
                       indices: Optional[Iterable[int]] = None) -> np.ndarray:
    """
    (f(x + h e_i) - f(x - h e_i)) / 2h for every flat index i (or only ``indices``).

    ``x`` is perturbed in place and restored after each evaluation; entries
    outside ``indices`` are left at 0.
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    for i in (range(x.size) if indices is None else indices):
        original = x.flat[i]
        x.flat[i] = original + step
        upper = func(x)
        x.flat[i] = original - step
        lower = func(x)
        x.flat[i] = original
        grad.flat[i] = (upper - lower) / (2.0 * step)
    return grad


def gradient_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-7) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, atol)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def assert_gradients_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-4,
                           atol: float = 1e-7, name: str = "gradient") -> None:
    """Fail unless every entry satisfies |a - n| <= atol + rtol * |n|."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise AssertionError(f"{name}: shape {analytic.shape} vs {numeric.shape}")
    diff = np.abs(analytic - numeric)
    bad = diff > atol + rtol * np.abs(numeric)
    if bad.any():
        index = np.unravel_index(int(np.argmax(diff - (atol + rtol * np.abs(numeric)))), analytic.shape)
        raise AssertionError(
            f"{name}: {int(bad.sum())} of {bad.size} entries differ; worst at {tuple(int(i) for i in index)}: "
            f"analytic={analytic[index]:.10g} numeric={numeric[index]:.10g} "
            f"(relative error {gradient_error(analytic, numeric, atol):.3g})"
        )
