"""Uniformization: exp(tau A) V for generator-like matrices A.

A must have nonnegative off-diagonal entries.  With lam >= max(-A_ii) the
matrix P = I + A/lam is entrywise nonnegative and

    exp(tau A) = sum_k Poisson(k; lam tau) P^k,

so nonnegative inputs stay nonnegative to rounding and constants are
preserved whenever A annihilates them.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

MAX_MEAN = 2.0e4


def as_operator(A):
    """Return a sparse copy of A when that makes matrix products cheaper."""
    if sp.issparse(A):
        return A.tocsr()
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n >= 48 and np.count_nonzero(A) < 0.1 * n * n:
        return sp.csr_matrix(A)
    return A


def poisson_weights(mean: float, tail: float = 1e-18) -> np.ndarray:
    kmax = int(math.ceil(mean + 10.0 * math.sqrt(mean) + 30.0))
    k = np.arange(kmax + 1)
    logw = -mean + k * math.log(mean) - gammaln(k + 1)
    w = np.exp(logw)
    keep = np.nonzero(np.cumsum(w[::-1])[::-1] > tail * w.sum())[0]
    w = w[: keep[-1] + 1]
    return w / w.sum()


def expm_action(A, tau: float, V, return_terms: bool = False):
    """Apply exp(tau A) to a vector or block of column vectors."""
    V = np.asarray(V, dtype=float)
    if tau < 0:
        raise ValueError("uniformization needs tau >= 0")
    diag = A.diagonal() if sp.issparse(A) else np.diag(A)
    if tau == 0:
        return (V.copy(), 0) if return_terms else V.copy()
    lam = float(-diag.min())
    if lam <= 0:
        # nonnegative diagonal: any positive rate keeps P = I + A/lam nonnegative
        lam = max(float(np.abs(diag).max()), 1.0)
    pieces = max(1, int(math.ceil(lam * tau / MAX_MEAN)))
    step = tau / pieces
    if sp.issparse(A):
        P = sp.identity(A.shape[0], format="csr") + A.tocsr() / lam
    else:
        P = np.eye(A.shape[0]) + np.asarray(A) / lam
    w = poisson_weights(lam * step)
    out = V
    for _ in range(pieces):
        term = out
        acc = w[0] * term
        for wk in w[1:]:
            term = P @ term
            acc = acc + wk * term
        out = acc
    return (out, pieces * (len(w) - 1)) if return_terms else out



def expm_matrix(A, tau: float, max_mean: float = 32.0) -> np.ndarray:
    """Dense exp(tau A) by uniformization of exp(tau A / 2^k) followed by k squarings.

    Squaring nonnegative matrices keeps them nonnegative, so positivity is
    still exact; rounding grows like 2^k eps.
    """
    diag = A.diagonal() if sp.issparse(A) else np.diag(A)
    lam = max(float(-diag.min()), 1e-300)
    k = max(0, int(math.ceil(math.log2(max(lam * tau / max_mean, 1.0)))))
    n = A.shape[0]
    E = expm_action(A, tau / 2**k, np.eye(n))
    for _ in range(k):
        E = E @ E
    return E
