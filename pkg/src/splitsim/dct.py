"""Frequency-domain signatures of backbone parameter updates.

A parameter delta is reshaped into the smallest square matrix that holds it
(zero padded), transformed with a type-II cosine transform, and reduced to
the top-left low-frequency block. Two updates are then compared by the
Euclidean distance between their signature vectors.

The transform is
``X(k,l) = a_k * a_l * sum_{m,n} S(m,n) cos(k pi (2m+1) / 2M) cos(l pi (2n+1) / 2N)``
with ``a_k = sqrt(2 / (M*N))`` for ``k = 0`` and ``a_k = 1`` otherwise (same
for ``a_l``). Note the scale factors divide by the full matrix size ``M*N``
rather than the per-axis length, so this is NOT the orthonormal DCT-II that
scipy implements; the transform is kept verbatim and is linear but not
orthogonal. It is evaluated through the separable row/column factorization;
the quadruple-sum definition serves as the reference oracle in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

# cosine basis cache keyed by axis length; entries are read-only
_BASIS_CACHE: dict[int, np.ndarray] = {}


def _cosine_basis(length: int) -> np.ndarray:
    """C[k, m] = cos(k * pi * (2m + 1) / (2 * length))."""
    basis = _BASIS_CACHE.get(length)
    if basis is None:
        k = np.arange(length)[:, None]
        m = np.arange(length)[None, :]
        basis = np.cos(k * np.pi * (2 * m + 1) / (2.0 * length))
        basis.setflags(write=False)
        _BASIS_CACHE[length] = basis
    return basis


@dataclass
class FrequencyMatrix:
    """Full 2-D transform of a (padded) parameter matrix."""

    coefficients: np.ndarray
    origin_dims: tuple[int, int]


@dataclass
class FrequencySignature:
    """Flattened low-frequency block plus the block shape that was kept."""

    values: np.ndarray
    block: tuple[int, int]

    def __post_init__(self):
        if self.values.shape != (self.block[0] * self.block[1],):
            raise InputError("signature length must equal the kept block size")


def reshape_pad(vector: np.ndarray) -> np.ndarray:
    """Pack a flat vector into the smallest d x d matrix, zero padded.

    Entries fill row-major; d = ceil(sqrt(len)). Empty input is rejected.
    """
    vector = np.asarray(vector, dtype=np.float64).ravel()
    if vector.size == 0:
        raise InputError("cannot reshape an empty vector")
    d = int(np.ceil(np.sqrt(vector.size)))
    padded = np.zeros(d * d)
    padded[:vector.size] = vector
    return padded.reshape(d, d)


def dct2(matrix: np.ndarray) -> FrequencyMatrix:
    """Two-dimensional cosine transform with the module's normalization."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise InputError("dct2 expects a nonempty 2-D matrix")
    if not np.all(np.isfinite(matrix)):
        raise InputError("dct2 input must be finite")
    rows, cols = matrix.shape
    coeffs = _cosine_basis(rows) @ matrix @ _cosine_basis(cols).T
    scale0 = np.sqrt(2.0 / (rows * cols))
    coeffs[0, :] *= scale0
    coeffs[:, 0] *= scale0
    return FrequencyMatrix(coeffs, (rows, cols))


def low_frequency_block(freq: FrequencyMatrix, low_fraction: float) -> FrequencySignature:
    """Keep the top-left ``ceil(f * dim)`` block of coefficients, flattened."""
    if not 0.0 < low_fraction <= 1.0:
        raise InputError("low_fraction must lie in (0, 1]")
    rows, cols = freq.coefficients.shape
    keep_r = int(np.ceil(low_fraction * rows))
    keep_c = int(np.ceil(low_fraction * cols))
    block = freq.coefficients[:keep_r, :keep_c]
    return FrequencySignature(block.ravel().copy(), (keep_r, keep_c))


def frequency_signature(
    backbone_now: np.ndarray,
    backbone_base: np.ndarray,
    low_fraction: float = 0.5,
) -> FrequencySignature:
    """Signature of the update ``backbone_now - backbone_base``."""
    now = np.asarray(backbone_now, dtype=np.float64).ravel()
    base = np.asarray(backbone_base, dtype=np.float64).ravel()
    if now.shape != base.shape:
        raise InputError("backbone vectors must have equal length")
    return low_frequency_block(dct2(reshape_pad(now - base)), low_fraction)


def signature_backprop(
    grad_values: np.ndarray,
    block: tuple[int, int],
    dims: tuple[int, int],
    vector_len: int,
) -> np.ndarray:
    """Adjoint of the delta -> signature map, for penalty gradients.

    Given the gradient of some scalar w.r.t. a signature's values, return
    its gradient w.r.t. the original flat delta vector. The signature map
    is linear (reshape, transform, crop), so this is its exact transpose.
    """
    rows, cols = dims
    if vector_len > rows * cols:
        raise InputError("vector length exceeds the padded matrix size")
    grad_block = np.asarray(grad_values, dtype=np.float64).reshape(block)
    full = np.zeros((rows, cols))
    full[:block[0], :block[1]] = grad_block
    scale0 = np.sqrt(2.0 / (rows * cols))
    full[0, :] *= scale0
    full[:, 0] *= scale0
    grad_matrix = _cosine_basis(rows).T @ full @ _cosine_basis(cols)
    return grad_matrix.ravel()[:vector_len].copy()
