"""Identification matrix A(c) and full-spark certification.

For an L-periodic sequence ``c`` and ``K >= 1`` the identification matrix
is the L x KL block matrix ``[A_0 A_1 ... A_{K-1}]`` with
``A_k[p, q] = c[(p + k) % L] * exp(2 pi i q (p + k) / L)``. Column
``m * L + n`` belongs to grid cell ``(m, n)``; it equals ``pi(-m, n) c``.
"""
from dataclasses import dataclass, field
from itertools import combinations, islice
from math import comb
import warnings

import numpy as np

from .errors import BudgetExceeded, IndexOutOfRange
from .util import is_prime, complex_gaussian, make_rng

RANK_RTOL = 1e-10
DEFAULT_BUDGET = 100_000
_BATCH = 4096


@dataclass(frozen=True)
class IdentifierSequence:
    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=complex).ravel()
        if c.size == 0 or not np.any(c):
            raise ValueError("identifier sequence must not be identically zero")
        if not np.all(np.isfinite(c)):
            raise ValueError("identifier sequence has non-finite entries")
        object.__setattr__(self, "c", c)

    @property
    def L(self):
        return self.c.size


@dataclass
class SparkReport:
    L: int
    K: int
    mode: str
    subsets_checked: int
    min_sigma_min: float
    witness: tuple
    norm_A: float
    sigmas: np.ndarray = field(default=None, repr=False)
    subsets: np.ndarray = field(default=None, repr=False)

    @property
    def threshold(self):
        return RANK_RTOL * self.norm_A

    @property
    def full_spark(self):
        return self.min_sigma_min > self.threshold


def _as_sequence(c):
    return c if isinstance(c, IdentifierSequence) else IdentifierSequence(c)


def build_A(c, K):
    """Return the L x KL identification matrix of ``c``."""
    c = _as_sequence(c).c
    if K < 1:
        raise ValueError("K must be >= 1")
    L = c.size
    p = np.arange(L)[:, None, None]
    k = np.arange(K)[None, :, None]
    q = np.arange(L)[None, None, :]
    shift = (p + k) % L
    blocks = c[shift] * np.exp(2j * np.pi * ((q * shift) % L) / L)
    return blocks.reshape(L, K * L)


def cell_column(m, n, L):
    """Column index of grid cell ``(m, n)``."""
    return m * L + n


def subset_sigma_min(A, J):
    """Smallest singular value of the columns ``J`` of ``A``.

    More than L columns always have a nontrivial kernel, reported as 0.
    """
    A = np.asarray(A)
    J = np.asarray(sorted(J), dtype=int)
    if J.size and (J.min() < 0 or J.max() >= A.shape[1]):
        raise IndexOutOfRange(f"column indices must lie in [0, {A.shape[1]})")
    if J.size == 0:
        raise ValueError("empty column subset")
    if J.size > A.shape[0]:
        return 0.0
    return float(np.linalg.svd(A[:, J], compute_uv=False)[-1])


def _batched_sigma_min(A, subsets):
    out = np.empty(len(subsets))
    for start in range(0, len(subsets), _BATCH):
        chunk = subsets[start:start + _BATCH]
        # (batch, L, L) stack of square submatrices
        sub = np.transpose(A[:, chunk], (1, 0, 2))
        out[start:start + len(chunk)] = np.linalg.svd(sub, compute_uv=False)[:, -1]
    return out


def _sample_subsets(rng, n_cols, L, count):
    keys = rng.random((count, n_cols))
    return np.sort(np.argsort(keys, axis=1)[:, :L], axis=1)


def full_spark_check(c, K, mode="exhaustive", budget=DEFAULT_BUDGET, rng=None,
                     keep_sigmas=False):
    """Certify that every L columns of A(c) are linearly independent.

    ``mode="exhaustive"`` enumerates all C(KL, L) subsets and raises
    :class:`BudgetExceeded` if there are more than ``budget``.
    ``mode="sampled"`` draws ``budget`` uniformly random subsets from ``rng``.
    """
    c = _as_sequence(c)
    L = c.L
    if not is_prime(L):
        warnings.warn(f"L={L} is not prime; full spark is not guaranteed",
                      stacklevel=2)
    A = build_A(c, K)
    n_cols = K * L
    if mode == "exhaustive":
        total = comb(n_cols, L)
        if total > budget:
            raise BudgetExceeded(
                f"C({n_cols}, {L}) = {total} subsets exceeds budget {budget}")
        subsets = np.array(list(islice(combinations(range(n_cols), L), total)),
                           dtype=int).reshape(total, L)
    elif mode == "sampled":
        if budget < 1:
            raise ValueError("budget must be >= 1")
        rng = make_rng(rng)
        subsets = _sample_subsets(rng, n_cols, L, int(budget))
    else:
        raise ValueError(f"unknown mode {mode!r}")

    sigmas = _batched_sigma_min(A, subsets)
    worst = int(np.argmin(sigmas))
    return SparkReport(
        L=L, K=K, mode=mode, subsets_checked=len(subsets),
        min_sigma_min=float(sigmas[worst]),
        witness=tuple(int(j) for j in subsets[worst]),
        norm_A=float(np.linalg.norm(A, 2)),
        sigmas=sigmas if keep_sigmas else None,
        subsets=subsets if keep_sigmas else None,
    )


def search_identifier(L, K, trials=10, rng_seed=0, mode="exhaustive",
                      budget=DEFAULT_BUDGET):
    """Draw complex Gaussian candidates and keep the best-conditioned one.

    Returns ``(IdentifierSequence, SparkReport)`` for the trial with the
    largest ``min_sigma_min``. Deterministic given ``rng_seed``.
    """
    if not is_prime(L):
        warnings.warn(f"L={L} is not prime; full spark is not guaranteed",
                      stacklevel=2)
    best = None
    for trial in range(trials):
        rng = make_rng(rng_seed, trial)
        c = IdentifierSequence(complex_gaussian(rng, L))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = full_spark_check(c, K, mode=mode, budget=budget,
                                      rng=make_rng(rng_seed, trial, 1))
        if best is None or report.min_sigma_min > best[1].min_sigma_min:
            best = (c, report)
    return best
