"""
Initialisation schemes for the coefficient matrix A (L layers x k templates).
"""

import logging
from enum import Enum
from typing import Union

import numpy as np

from hybrid_cnn.core import Tensor
from hybrid_cnn.errors import UsageError
from hybrid_cnn.sharing.templates import CoefficientMatrix

logger = logging.getLogger(__name__)

__all__ = ["InitScheme", "SparseDistribution", "init_coefficients"]


class InitScheme(Enum):
    ORTHOGONAL = "orthogonal"
    IDENTITY = "identity"
    SPARSE = "sparse"


class SparseDistribution(Enum):
    NORMAL = "normal"
    UNIFORM = "uniform"


def _orthogonal(num_layers: int, k: int, rng: np.random.Generator) -> np.ndarray:
    # QR of a Gaussian matrix, sign-corrected so the result is Haar distributed.
    big, small = max(num_layers, k), min(num_layers, k)
    q, r = np.linalg.qr(rng.standard_normal((big, small)))
    q = q * np.sign(np.diag(r))
    if num_layers <= k:
        # Orthonormal rows: the initial LSM is the identity.
        return q.T.copy()
    # k < L: rows cannot all be orthogonal; fall back to orthonormal columns.
    return q


def _sparse(
    num_layers: int, k: int, rng: np.random.Generator, distribution: SparseDistribution
) -> np.ndarray:
    if distribution is SparseDistribution.NORMAL:
        values = rng.standard_normal((num_layers, k))
    else:
        values = rng.uniform(-1.0, 1.0, (num_layers, k))
    # Entries drawn as exactly 0 are measure-zero; nudge them so the zero count is exact.
    values[values == 0.0] = 1.0

    n_zero = (num_layers * k) // 2
    if n_zero > num_layers * (k - 1):
        raise UsageError(
            f"sparse init cannot zero {n_zero} of {num_layers * k} entries "
            f"without emptying a row (k={k})"
        )
    # One protected entry per row keeps every row non-zero.
    protected = rng.integers(0, k, size=num_layers)
    candidates = np.array(
        [i * k + j for i in range(num_layers) for j in range(k) if j != protected[i]],
        dtype=np.int64,
    )
    zeroed = rng.choice(candidates, size=n_zero, replace=False)
    flat = values.reshape(-1)
    flat[zeroed] = 0.0
    return values


def init_coefficients(
    num_layers: int,
    k: int,
    scheme: Union[InitScheme, str] = InitScheme.ORTHOGONAL,
    seed: Union[int, np.random.Generator, None] = None,
    distribution: Union[SparseDistribution, str] = SparseDistribution.NORMAL,
    name: str = "coefficients",
) -> CoefficientMatrix:
    """Initialise an L x k coefficient matrix.

    Args:
        num_layers: L, the number of layers in the sharing group.
        k: Number of templates.
        scheme: ORTHOGONAL (orthonormal rows when L <= k, orthonormal
            columns otherwise), IDENTITY (requires L == k) or SPARSE (random
            entries with floor(L*k/2) of them set to zero).
        seed: Seed or generator for the random schemes.
        distribution: Entry distribution for the sparse scheme.
        name: Name given to the coefficient tensor.

    Raises:
        UsageError: identity with L != k, or non-positive sizes.
    """
    scheme = InitScheme(scheme)
    distribution = SparseDistribution(distribution)
    if num_layers < 1 or k < 1:
        raise UsageError(f"need L >= 1 and k >= 1, got L={num_layers}, k={k}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    if scheme is InitScheme.IDENTITY:
        if num_layers != k:
            raise UsageError(f"identity init requires L == k, got L={num_layers}, k={k}")
        values = np.eye(k)
    elif scheme is InitScheme.ORTHOGONAL:
        values = _orthogonal(num_layers, k, rng)
    else:
        values = _sparse(num_layers, k, rng, distribution)

    logger.debug(f"Initialised {num_layers}x{k} coefficients with {scheme.value} scheme")
    return CoefficientMatrix(Tensor(values, requires_grad=True, name=name))
