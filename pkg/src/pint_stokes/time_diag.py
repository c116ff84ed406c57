"""Circulant time structure: eigenvalues, block time-FFT and block permutation.

The periodic stand-in ``C`` for the backward-Euler difference matrix is
diagonalized by the DFT.  Transforms use the unitary normalization (scaled by
``1/sqrt(n)`` both ways) so that ``C = F^{-1} diag(d) F`` with
``d = fft(c_1)`` unnormalized; the spectrum and the transform share numpy's
sign convention.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import ConfigurationError
from .linalg import BlockLayout

__all__ = [
    "TimeGrid",
    "CirculantSpectrum",
    "circulant_spectrum",
    "block_fft_forward",
    "block_fft_inverse",
    "to_block_diagonal_order",
    "from_block_diagonal_order",
    "backward_euler_matrix",
    "circulant_matrix",
    "circulant_block_solve",
    "serial_map",
]


@dataclass(frozen=True)
class TimeGrid:
    n_t: int
    T: float

    def __post_init__(self):
        if self.n_t < 3:
            raise ConfigurationError(f"n_t must be >= 3, got {self.n_t}")
        if not self.T > 0:
            raise ConfigurationError(f"final time must be positive, got {self.T}")

    @property
    def tau(self) -> float:
        return self.T / self.n_t

    @property
    def n_blocks(self) -> int:
        return self.n_t - 1

    def times(self) -> np.ndarray:
        """Times of the unknowns, ``t_j = j tau`` for ``j = 1..n_t-1``."""
        return self.tau * np.arange(1, self.n_t)


@dataclass(frozen=True)
class CirculantSpectrum:
    d: np.ndarray

    @property
    def d_r(self) -> np.ndarray:
        return self.d.real

    @property
    def d_c(self) -> np.ndarray:
        return self.d.imag

    def __len__(self):
        return self.d.size


def backward_euler_matrix(n: int) -> np.ndarray:
    return np.eye(n) - np.eye(n, k=-1)


def circulant_matrix(n: int) -> np.ndarray:
    C = backward_euler_matrix(n)
    C[0, n - 1] = -1.0
    return C


def circulant_spectrum(grid: TimeGrid) -> CirculantSpectrum:
    n = grid.n_blocks
    c1 = np.zeros(n)
    c1[0], c1[1] = 1.0, -1.0
    return CirculantSpectrum(scipy.fft.fft(c1))


def _time_fft(x: np.ndarray, layout: BlockLayout, inverse: bool) -> np.ndarray:
    out = np.empty(layout.size, dtype=np.complex128)
    transform = scipy.fft.ifft if inverse else scipy.fft.fft
    for src, dst in zip(layout.fields(x), layout.fields(out)):
        dst[...] = transform(src, axis=0, norm="ortho")
    return out


def block_fft_forward(x: np.ndarray, layout: BlockLayout) -> np.ndarray:
    """Unitary DFT along the time index of every field."""
    return _time_fft(x, layout, inverse=False)


def block_fft_inverse(x: np.ndarray, layout: BlockLayout) -> np.ndarray:
    return _time_fft(x, layout, inverse=True)


def to_block_diagonal_order(x: np.ndarray, layout: BlockLayout) -> np.ndarray:
    """Field-major vector -> (n_blocks, block_size) array ordered (v, lam, p, mu)."""
    return layout.to_blocks(x)


def from_block_diagonal_order(xb: np.ndarray, layout: BlockLayout) -> np.ndarray:
    return layout.from_blocks(xb)


def serial_map(func, items):
    """Default block map: plain in-order evaluation."""
    return [func(i) for i in items]


def circulant_block_solve(r: np.ndarray, layout: BlockLayout, block_solve, block_map=None,
                          use_conjugate_symmetry: bool = True):
    """Apply a block-circulant inverse through the time FFT.

    ``block_solve(j, r_j)`` receives the transformed right-hand side of block
    ``j`` in ``(v, lam, p, mu)`` order and returns ``(y_j, info)``.  For a real
    input the transformed blocks come in conjugate pairs ``j, n - j``; with
    ``use_conjugate_symmetry`` only ``j <= n // 2`` are solved and the rest
    are mirrored, which is exact whenever the block solver commutes with
    complex conjugation (true for every solver built from real operators and
    conjugate-symmetric constants).

    Returns ``(y, infos, timings)`` where ``y`` is the real part of the
    back-transformed result, ``infos`` the per-block info list in block order
    and ``timings`` has the FFT and block-solve wall-clock seconds plus the
    discarded imaginary norm.
    """
    block_map = block_map or serial_map
    n = layout.n_blocks
    t0 = time.perf_counter()
    rb = layout.to_blocks(block_fft_forward(r, layout))
    t1 = time.perf_counter()
    real_input = not np.iscomplexobj(r)
    mirror = use_conjugate_symmetry and real_input
    todo = list(range(n // 2 + 1)) if mirror else list(range(n))
    results = block_map(lambda j: block_solve(j, rb[j]), todo)
    t2 = time.perf_counter()
    yb = np.empty_like(rb)
    infos = [None] * n
    for j, (yj, info) in zip(todo, results):
        yb[j] = yj
        infos[j] = info
    if mirror:
        for j in range(n // 2 + 1, n):
            yb[j] = np.conj(yb[n - j])
            infos[j] = infos[n - j]
    y = block_fft_inverse(layout.from_blocks(yb), layout)
    t3 = time.perf_counter()
    timings = {"fft": (t1 - t0) + (t3 - t2), "block_solves": t2 - t1,
               "imag_norm": float(np.linalg.norm(y.imag))}
    out = y.real.copy() if real_input else y
    return out, infos, timings
