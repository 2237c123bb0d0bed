"""Central finite-difference gradient checking."""
import numpy as np

FLOOR = 1e-5  # denominators below this are treated as absolute error


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_grad(f, arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """d f() / d arr by central differences; ``f`` reads ``arr`` in place."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + step
        hi = f()
        arr[i] = old - step
        lo = f()
        arr[i] = old
        g[i] = (hi - lo) / (2 * step)
    return g
