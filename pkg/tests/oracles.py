"""Independent oracles used by the test suite.

These deliberately avoid the library's own code paths: the determinant oracle
is a recursive cofactor expansion, gradients come from central finite
differences, and the optimal-transport oracle estimates W2^2 by Monte-Carlo
over an explicit coupling.
"""

import numpy as np


def cofactor_det(a: np.ndarray) -> float:
    """Determinant by recursive cofactor expansion along the first row."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    if n == 2:
        return float(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(a, 0, axis=0), j, axis=1)
        total += ((-1.0) ** j) * float(a[0, j]) * cofactor_det(minor)
    return total


def central_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def grad_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-4,
               atol: float = 1e-9) -> bool:
    """Relative comparison on the gradient's own scale.

    ``atol`` absorbs the finite-difference noise floor (function round-off of
    ~1e-16 divided by the step 2e-5), which dominates once the true gradient
    is numerically zero.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))))
    return float(np.max(np.abs(analytic - numeric))) <= rtol * scale + atol


def mc_w2_diag_gaussian(m1, s1, m2, s2, n_samples: int, rng: np.random.Generator) -> float:
    """Monte-Carlo W2^2 between diagonal Gaussians via the comonotone coupling.

    For Gaussians with diagonal covariance the optimal transport plan couples
    each coordinate through a shared standard normal draw, so the expected
    squared distance under that coupling is exactly W2^2.
    """
    m1 = np.asarray(m1, dtype=np.float64)
    m2 = np.asarray(m2, dtype=np.float64)
    s1 = np.asarray(s1, dtype=np.float64)  # std vectors
    s2 = np.asarray(s2, dtype=np.float64)
    z = rng.standard_normal((n_samples, m1.size))
    x = m1 + s1 * z
    y = m2 + s2 * z
    return float(np.mean(np.sum((x - y) ** 2, axis=1)))


def random_psd_unit_diag(m: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random PSD matrix with unit diagonal and entries in [0, 1].

    Gram matrix of nonnegative unit vectors: dot products land in [0, 1],
    the diagonal is exactly 1, and PSD holds by construction.
    """
    d = rank if rank is not None else m + rng.integers(0, 3)
    v = np.abs(rng.standard_normal((m, max(d, 1))))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    k = v @ v.T
    k = np.clip(0.5 * (k + k.T), 0.0, 1.0)
    np.fill_diagonal(k, 1.0)
    return k
