"""Direct binding to the BLAS sgemm that ships inside numpy/scipy wheels.

numpy's matmul cannot accumulate into a strided output block, which the
shifted-kernel convolution needs (C += A @ B on submatrix views). The
vendored OpenBLAS exports a C interface we can call through ctypes with
explicit leading dimensions. When no usable library is found, ``sgemm``
is None and callers fall back to pure-numpy paths.
"""

from __future__ import annotations

import ctypes
import glob
import os

import numpy as np

__all__ = ["sgemm", "NO_TRANS", "TRANS"]

_ROW_MAJOR = 101
_COL_MAJOR = 102
NO_TRANS = 111
TRANS = 112


def _candidate_libs():
    roots = []
    try:
        import numpy as _np
        roots.append(os.path.dirname(os.path.dirname(os.path.abspath(_np.__file__))))
    except ImportError:
        pass
    try:
        import scipy as _sp
        roots.append(os.path.dirname(os.path.dirname(os.path.abspath(_sp.__file__))))
    except ImportError:
        pass
    out = []
    for root in dict.fromkeys(roots):
        for sub in ("numpy.libs", "scipy.libs", "numpy/.libs"):
            out.extend(sorted(glob.glob(os.path.join(root, sub, "*openblas*.so*"))))
            out.extend(sorted(glob.glob(os.path.join(root, sub, "*openblas*.dylib"))))
    out.extend(["libopenblas.so.0", "libopenblas.so", "libcblas.so.3", "libblas.so.3"])
    return out


# (symbol, integers are 64-bit)
_SYMBOLS = (
    ("scipy_cblas_sgemm64_", True),
    ("scipy_cblas_sgemm", False),
    ("cblas_sgemm64_", True),
    ("cblas_sgemm", False),
)


def _load():
    for path in _candidate_libs():
        try:
            lib = ctypes.CDLL(path)
        except OSError:
            continue
        for sym, ilp64 in _SYMBOLS:
            fn = getattr(lib, sym, None)
            if fn is None:
                continue
            c_int = ctypes.c_longlong if ilp64 else ctypes.c_int
            fptr = ctypes.POINTER(ctypes.c_float)
            fn.restype = None
            fn.argtypes = [c_int, c_int, c_int, c_int, c_int, c_int,
                           ctypes.c_float, fptr, c_int, fptr, c_int,
                           ctypes.c_float, fptr, c_int]
            if _selfcheck(fn, fptr):
                return fn, fptr
    return None, None


def _selfcheck(fn, fptr):
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    b = np.arange(12, dtype=np.float32).reshape(3, 4)
    c = np.ones((2, 4), dtype=np.float32)
    want = 2.0 * (a @ b) + 3.0 * c
    try:
        fn(_ROW_MAJOR, NO_TRANS, NO_TRANS, 2, 4, 3, 2.0,
           a.ctypes.data_as(fptr), 3, b.ctypes.data_as(fptr), 4,
           3.0, c.ctypes.data_as(fptr), 4)
    except Exception:
        return False
    return bool(np.allclose(c, want, atol=1e-5))


_FN, _FPTR = _load()


if _FN is None:
    sgemm = None
else:
    def _ld(arr):
        rows, cols = arr.shape
        if cols > 1 and arr.strides[1] != 4:
            raise ValueError("sgemm operands need a contiguous last axis")
        # degenerate dims carry arbitrary numpy strides; any lda >= cols works
        ld = arr.strides[0] // 4 if rows > 1 else cols
        return max(ld, cols, 1)

    def sgemm(alpha, a, b, beta, c, trans_a=NO_TRANS, trans_b=NO_TRANS):
        """c = alpha * op(a) @ op(b) + beta * c, float32 row-major.

        Operands may be submatrix views (arbitrary row stride) but the last
        axis must be contiguous. Shapes are validated against c. When the
        output is much wider than tall, the call is re-expressed through the
        transposed (column-major) problem, which BLAS executes far faster
        for skinny-M shapes; the memory touched is identical.
        """
        m, n = c.shape
        k = a.shape[0] if trans_a == TRANS else a.shape[1]
        if (a.shape[1 if trans_a == TRANS else 0] != m
                or b.shape[0 if trans_b == TRANS else 1] != n
                or b.shape[1 if trans_b == TRANS else 0] != k):
            raise ValueError(
                f"sgemm shape mismatch: {a.shape} ({trans_a}) @ {b.shape} ({trans_b}) -> {c.shape}"
            )
        for arr in (a, b, c):
            if arr.dtype != np.float32:
                raise ValueError("sgemm operands must be float32")
        if m < 8 <= n:
            # row-major C = op(A) op(B) equals, on the same buffers, the
            # col-major product C^T = op(B)^T op(A)^T; flags carry over,
            # operand positions swap
            _FN(_COL_MAJOR, trans_b, trans_a, n, m, k, alpha,
                b.ctypes.data_as(_FPTR), _ld(b),
                a.ctypes.data_as(_FPTR), _ld(a),
                beta, c.ctypes.data_as(_FPTR), _ld(c))
        else:
            _FN(_ROW_MAJOR, trans_a, trans_b, m, n, k, alpha,
                a.ctypes.data_as(_FPTR), _ld(a),
                b.ctypes.data_as(_FPTR), _ld(b),
                beta, c.ctypes.data_as(_FPTR), _ld(c))
        return c
