"""Teacher/student construction, data generation and the sample-complexity formula.

A network here is a bag of hidden-unit weight vectors with a fixed output
scale; its output on x is ``scale * sum_j (x . w_j)**2``, a nonnegative
quadratic form.  All learning questions reduce to the d x d Gram matrix of
the weights, which is represented throughout as a plain numpy array.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .rng import rng_from_seed

GAUSSIAN = "gaussian"
ORTHONORMAL = "orthonormal"
_ENSEMBLE_ALIASES = {
    "gaussian": GAUSSIAN,
    "gaussian-iid": GAUSSIAN,
    "orthonormal": ORTHONORMAL,
}


def canonical_ensemble(name: str) -> str:
    try:
        return _ENSEMBLE_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(
            f"unknown ensemble {name!r}; expected one of {sorted(set(_ENSEMBLE_ALIASES))}"
        ) from None


@dataclass(frozen=True)
class WeightMatrix:
    """m hidden-unit weight rows (m x d) plus the fixed output scale."""

    weights: np.ndarray
    scale: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ValueError(f"weights must be a nonempty m x d matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class Dataset:
    """n input rows (n x d) with the teacher outputs y_k attached."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.outputs, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"inputs must be a nonempty n x d matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"outputs must have shape ({x.shape[0]},), got {y.shape}")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]


def make_teacher(d: int, m_star: int, ensemble: str, seed: int) -> WeightMatrix:
    """Draw a teacher with m_star hidden units in d dimensions.

    ``gaussian``: rows i.i.d. standard normal.  ``orthonormal``: mutually
    orthogonal rows of squared norm m_star, so the Gram matrix has m_star
    unit eigenvalues (and equals the identity once m_star = d).  Both use
    output scale 1/m_star and are deterministic in the seed.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if m_star < 1:
        raise ValueError(f"m_star must be >= 1, got {m_star}")
    kind = canonical_ensemble(ensemble)
    rng = rng_from_seed(seed)
    if kind == GAUSSIAN:
        w = rng.standard_normal((m_star, d))
    else:
        if m_star > d:
            raise ValueError(
                f"orthonormal ensemble needs m_star <= d (cannot fit {m_star} "
                f"mutually orthogonal rows in {d} dimensions)"
            )
        # Haar-ish orthonormal frame from a QR factorization, sign-fixed so the
        # result is deterministic and seed-reproducible.
        g = rng.standard_normal((d, d))
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))
        w = q[:, :m_star].T * np.sqrt(m_star)
    return WeightMatrix(weights=w, scale=1.0 / m_star)


def make_student(d: int, m: int, seed: int) -> WeightMatrix:
    """Random student: m i.i.d. standard-normal rows, output scale 1/m."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    rng = rng_from_seed(seed)
    return WeightMatrix(weights=rng.standard_normal((m, d)), scale=1.0 / m)


def network_output(W: WeightMatrix, x: np.ndarray) -> float:
    """scale * sum_j (x . w_j)**2 for a single input x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (W.d,):
        raise ValueError(f"input has shape {x.shape}, expected ({W.d},)")
    p = W.weights @ x
    return float(W.scale * p @ p)


def network_outputs(W: WeightMatrix, X: np.ndarray) -> np.ndarray:
    """Vectorized network_output over the rows of an n x d matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != W.d:
        raise ValueError(f"inputs have shape {X.shape}, expected (n, {W.d})")
    P = X @ W.weights.T
    return W.scale * np.sum(P * P, axis=1)


def gram(W: WeightMatrix) -> np.ndarray:
    """Gram matrix scale * sum_j w_j w_j^T; symmetric PSD by construction."""
    A = W.scale * (W.weights.T @ W.weights)
    return 0.5 * (A + A.T)


def sample_dataset(teacher: WeightMatrix, n: int, seed: int) -> Dataset:
    """n i.i.d. standard-normal inputs labeled by the teacher."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = rng_from_seed(seed)
    X = rng.standard_normal((n, teacher.d))
    return Dataset(inputs=X, outputs=network_outputs(teacher, X))


class CriticalSamples(NamedTuple):
    n_c: int
    alpha_c_finite: float
    alpha_c_limit: float


def critical_samples(d: int, m_star: int) -> CriticalSamples:
    """Critical sample count below which spurious zero-loss Gram matrices persist.

    For m_star < d this is d*(m_star+1) - m_star*(m_star+1)/2; from m_star = d
    on it saturates at the full symmetric-matrix count d*(d+1)/2.  The two
    expressions agree at m_star = d.  alpha_c_limit is the large-d limit of
    n_c/d at fixed m_star.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if m_star < 0:
        raise ValueError(f"m_star must be >= 0, got {m_star}")
    if m_star < d:
        n_c = d * (m_star + 1) - (m_star * (m_star + 1)) // 2
    else:
        n_c = (d * (d + 1)) // 2
    return CriticalSamples(
        n_c=n_c,
        alpha_c_finite=n_c / d,
        alpha_c_limit=float(m_star + 1),
    )
