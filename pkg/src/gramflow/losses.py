"""Empirical and population losses with analytic gradients.

Conventions: ``L_n`` is the quarter mean-squared error of the network on the
dataset; ``E_n`` is twice L_n rewritten in Gram coordinates,
``(1/2n) sum_k (x_k^T (A - A*) x_k)^2``; the population counterpart is
``E(A) = tr((A-A*)^2) + (tr(A-A*))^2 / 2``.  Quadratic forms are evaluated
per sample without materializing any x x^T, and the per-sample reduction is
a fixed-order sum so results are bit-reproducible.
"""

from __future__ import annotations

import math

import numpy as np

from .model import Dataset, WeightMatrix, gram, network_outputs


def quad_forms(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """x_k^T M x_k for every row x_k of X."""
    return np.einsum("ki,ij,kj->k", X, M, X, optimize=True)


def _check_dims(A: np.ndarray, A_star: np.ndarray, data: Dataset | None = None) -> None:
    if A.shape != A_star.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"Gram matrices must share a square shape, got {A.shape} vs {A_star.shape}")
    if data is not None and data.d != A.shape[0]:
        raise ValueError(f"dataset dimension {data.d} does not match Gram dimension {A.shape[0]}")


def empirical_loss_weights(W: WeightMatrix, data: Dataset, compensated: bool = False) -> float:
    """L_n = (1/4n) sum_k (y_k - f(x_k))^2."""
    if data.d != W.d:
        raise ValueError(f"dataset dimension {data.d} does not match weight dimension {W.d}")
    res = data.outputs - network_outputs(W, data.inputs)
    sq = res * res
    total = math.fsum(sq) if compensated else float(np.sum(sq))
    return total / (4.0 * data.n)


def empirical_gram_loss(
    A: np.ndarray, A_star: np.ndarray, data: Dataset, compensated: bool = False
) -> float:
    """E_n(A) = (1/2n) sum_k (x_k^T (A - A*) x_k)^2, twice the weight-space loss."""
    _check_dims(A, A_star, data)
    r = quad_forms(data.inputs, A - A_star)
    sq = r * r
    total = math.fsum(sq) if compensated else float(np.sum(sq))
    return total / (2.0 * data.n)


def empirical_gram_grad(A: np.ndarray, A_star: np.ndarray, data: Dataset) -> np.ndarray:
    """Gradient of E_n: -(1/n) sum_k (x_k^T (A* - A) x_k) x_k x_k^T."""
    _check_dims(A, A_star, data)
    X = data.inputs
    r = quad_forms(X, A_star - A)
    G = -(X.T @ (r[:, None] * X)) / data.n
    return 0.5 * (G + G.T)


def population_loss(A: np.ndarray, A_star: np.ndarray) -> float:
    """E(A) = tr((A-A*)^2) + (tr(A-A*))^2 / 2."""
    _check_dims(A, A_star)
    D = A - A_star
    return float(np.sum(D * D.T) + 0.5 * np.trace(D) ** 2)


def population_grad(A: np.ndarray, A_star: np.ndarray) -> np.ndarray:
    """Gradient of E: 2(A - A*) + tr(A - A*) Id."""
    _check_dims(A, A_star)
    D = A - A_star
    G = 2.0 * D + np.trace(D) * np.eye(A.shape[0])
    return 0.5 * (G + G.T)
