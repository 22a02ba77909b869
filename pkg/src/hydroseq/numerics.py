"""Small dense linear-algebra helpers, the seeded RNG and finite differences.

Matrices are plain ``float64`` numpy arrays (row-major). The helpers here add
the shape and symmetry checks the rest of the package relies on.
"""
import numpy as np

from .errors import ContractError, NumericError, ShapeError

__all__ = ["Rng", "as_matrix", "matmul", "sym_eigen", "finite_diff_grad"]


def as_matrix(values, rows=None, cols=None):
    """Coerce ``values`` into a 2-D float64 array, optionally reshaping."""
    arr = np.asarray(values, dtype=np.float64)
    if rows is not None and cols is not None:
        if arr.size != rows * cols:
            raise ShapeError(f"expected {rows * cols} values, got {arr.size}")
        arr = arr.reshape(rows, cols)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects two 2-D matrices")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sym_eigen(s, tol=1e-10, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Args:
        s: Square symmetric matrix.
        tol: Allowed asymmetry ``max|s - s.T|`` before the input is rejected.
        max_sweeps: Upper bound on full off-diagonal sweeps.

    Returns:
        ``(eigenvalues, eigenvectors)`` with eigenvalues sorted descending and
        eigenvectors as the matching orthonormal columns. Each column's sign is
        fixed so that its largest-magnitude entry is positive.
    """
    a = np.array(s, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"sym_eigen needs a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("sym_eigen input contains non-finite values")
    if a.size and np.max(np.abs(a - a.T)) > tol:
        raise ContractError("sym_eigen input is not symmetric")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny) if n else 1.0

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= 1e-15 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                # stable rotation angle (Golub & Van Loan, sym.schur2)
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - sn * aq
                a[:, q] = sn * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - sn * aq
                a[q, :] = sn * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    else:
        raise NumericError("Jacobi eigensolver did not converge")

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    v = v[:, order]
    for j in range(n):
        if v[np.argmax(np.abs(v[:, j])), j] < 0:
            v[:, j] = -v[:, j]
    return values, v


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function ``f`` at ``x``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad


class Rng:
    """Seeded random source backed by numpy's counter-based Philox generator.

    The key is derived from ``(seed, stream)`` through ``SeedSequence``, so
    sub-streams for catchments or runs never overlap and the draws are the
    same on every platform numpy supports.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        seq = np.random.SeedSequence([self.seed, self.stream])
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, stream):
        """Independent generator for sub-stream ``stream`` of the same seed."""
        return Rng(self.seed, stream=self.stream * 1_000_003 + int(stream) + 1)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def random(self, size=None):
        return self._gen.random(size)

    def permutation(self, n):
        return self._gen.permutation(n)
