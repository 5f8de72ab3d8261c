"""Backend selection for the periodized filter-bank steps.

At import time we try the compiled Cython extension and fall back to a
vectorized numpy implementation when it is missing (or when the environment
variable ``MFWNO_FORCE_NUMPY_KERNELS`` is set).  Both backends implement the
same pair of primitives:

* ``analysis_step(x, lo, hi)``: one level of the periodized analysis bank
  along the last axis of a C-contiguous (rows, n) block, returning the
  (rows, n//2) approximation and detail coefficient blocks with the
  convolution convention ``a[k] = sum_i lo[i] * x[(2k+1-i) mod n]``.
* ``synthesis_step(a, d, lo, hi)``: the exact adjoint (= inverse, the bank
  is orthogonal), returning the (rows, n) reconstruction.

``benchmarks/bench_dwt.py`` times the two backends against each other.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised indirectly via BACKEND
    from . import _dwt_kernels as _ext
except ImportError:  # pragma: no cover
    _ext = None

if os.environ.get("MFWNO_FORCE_NUMPY_KERNELS"):
    _ext = None

BACKEND = "compiled" if _ext is not None else "numpy"

_ANALYSIS_LUT: dict[tuple[int, int], np.ndarray] = {}
_SYNTHESIS_LUT: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _analysis_lut(n: int, taps: int) -> np.ndarray:
    """Gather table idx[k, i] = (2k + 1 - i) mod n, shape (n//2, taps)."""
    key = (n, taps)
    lut = _ANALYSIS_LUT.get(key)
    if lut is None:
        k = np.arange(n // 2)[:, None]
        i = np.arange(taps)[None, :]
        lut = np.ascontiguousarray((2 * k + 1 - i) % n, dtype=np.int64)
        _ANALYSIS_LUT[key] = lut
    return lut


def _synthesis_lut(n: int, taps: int) -> tuple[np.ndarray, np.ndarray]:
    """Scatter-as-gather tables for the adjoint step.

    For output sample j the contributing coefficient indices are
    k = ((j + i - 1) / 2) mod (n/2) over the filter taps i with
    i = (j + 1) mod 2, i + 2, ...  Returns (kidx, tap_idx), both
    shaped (n, taps//2).
    """
    key = (n, taps)
    cached = _SYNTHESIS_LUT.get(key)
    if cached is None:
        half = n // 2
        j = np.arange(n)[:, None]
        t = np.arange(taps // 2)[None, :]
        i = ((j + 1) % 2) + 2 * t
        k = ((j + i - 1) // 2) % half
        kidx = np.ascontiguousarray(k, dtype=np.int64)
        tap_idx = np.ascontiguousarray(i, dtype=np.int64)
        cached = (kidx, tap_idx)
        _SYNTHESIS_LUT[key] = cached
    return cached


def _analysis_numpy(x: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    n = x.shape[1]
    idx = _analysis_lut(n, lo.size)
    gathered = x[:, idx]
    return gathered @ lo, gathered @ hi


def _synthesis_numpy(a: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    n = 2 * a.shape[1]
    kidx, tap_idx = _synthesis_lut(n, lo.size)
    clo = lo[tap_idx]
    chi = hi[tap_idx]
    out = np.einsum("rjt,jt->rj", a[:, kidx], clo, optimize=True)
    out += np.einsum("rjt,jt->rj", d[:, kidx], chi, optimize=True)
    return out


def _analysis_ext(x: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    n = x.shape[1]
    idx = _analysis_lut(n, lo.size)
    out_a = np.empty((x.shape[0], n // 2))
    out_d = np.empty((x.shape[0], n // 2))
    _ext.analysis_step(x, lo, hi, idx, out_a, out_d)
    return out_a, out_d


_SYNTHESIS_COEF: dict[tuple[int, bytes], tuple[np.ndarray, np.ndarray]] = {}


def _synthesis_ext(a: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    n = 2 * a.shape[1]
    kidx, tap_idx = _synthesis_lut(n, lo.size)
    key = (n, lo.tobytes())
    cached = _SYNTHESIS_COEF.get(key)
    if cached is None:
        cached = (
            np.ascontiguousarray(lo[tap_idx]),
            np.ascontiguousarray(hi[tap_idx]),
        )
        _SYNTHESIS_COEF[key] = cached
    clo, chi = cached
    out = np.empty((a.shape[0], n))
    _ext.synthesis_step(a, d, kidx, clo, chi, out)
    return out


if _ext is not None:
    analysis_step = _analysis_ext
    synthesis_step = _synthesis_ext
else:
    analysis_step = _analysis_numpy
    synthesis_step = _synthesis_numpy

numpy_analysis_step = _analysis_numpy
numpy_synthesis_step = _synthesis_numpy
