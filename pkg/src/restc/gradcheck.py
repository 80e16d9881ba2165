"""Central finite differences for checking analytic gradients."""
import numpy as np


def numeric_grad(f, x, h=1e-5, entries=None):
    """d f / d x by central differences, perturbing ``x`` (a float64 array) in place.

    ``entries`` restricts the check to a list of flat indices; other entries
    of the result stay NaN.
    """
    grad = np.full(x.shape, np.nan)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if entries is None else entries):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-12):
    """``||a - n|| / max(||a||, ||n||)`` over the compared (non-NaN) entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    keep = ~np.isnan(n)
    a, n = a[keep], n[keep]
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)


def sample_entries(shape, k, rng):
    size = int(np.prod(shape))
    if size <= k:
        return list(range(size))
    return sorted(rng.choice(size, size=k, replace=False).tolist())
