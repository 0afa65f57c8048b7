"""Data model, deterministic random streams and the simulation generators.

Every stochastic function in the package takes a ``numpy.random.Generator``.
Reproducible generators come from :class:`RngStream`, which maps a
``(seed, stream)`` pair onto an independent, splittable ``SeedSequence``
child, so replicate ``r`` of an experiment draws identical numbers whether it
runs serially or on a worker thread.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "EBShrinkError",
    "ConstantColumnError",
    "NotPositiveDefiniteError",
    "Dataset",
    "BlockCovariance",
    "GroupStructure",
    "RngStream",
    "PosteriorChain",
    "batch_means_se",
    "resolve_threads",
    "parallel_map",
    "standardize",
    "sample_design",
    "sample_coefficients",
    "generate_response",
    "read_matrix_csv",
    "read_dataset_csv",
]

GAUSSIAN = "gaussian"
BINARY = "binary"


class EBShrinkError(ValueError):
    """Base class for domain errors (violated preconditions)."""


class ConstantColumnError(EBShrinkError):
    def __init__(self, column: int):
        super().__init__(f"column {column} has zero variance")
        self.column = column


class NotPositiveDefiniteError(EBShrinkError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Design matrix ``X`` (n x p) with response ``y``.

    ``family`` is ``"gaussian"`` for a continuous response and ``"binary"``
    for a 0/1 response. When ``standardized`` is set, ``center`` and
    ``scale`` hold the original column means and standard deviations so
    coefficients can be mapped back with :meth:`unstandardize_coef`.
    """

    X: np.ndarray
    y: np.ndarray
    family: str = GAUSSIAN
    standardized: bool = False
    center: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        # private copies: the caller's arrays stay writable
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise EBShrinkError(f"X must be a non-empty 2-D array, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise EBShrinkError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if self.family not in (GAUSSIAN, BINARY):
            raise EBShrinkError(f"unknown family {self.family!r}")
        if self.family == BINARY and not np.all((y == 0) | (y == 1)):
            raise EBShrinkError("binary response must take values in {0, 1}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def unstandardize_coef(self, beta):
        """Map coefficients fitted on standardized columns to the raw scale."""
        if not self.standardized:
            return np.asarray(beta, dtype=float)
        return np.asarray(beta, dtype=float) / self.scale


@dataclass(frozen=True)
class BlockCovariance:
    """Block-diagonal correlation matrix ``I_B kron A(rho)`` with block size ``b``."""

    p: int
    b: int = 1
    rho: float = 0.0

    def __post_init__(self):
        if self.p < 1 or self.b < 1 or self.p % self.b:
            raise EBShrinkError(f"block size {self.b} must divide p={self.p}")
        if not 0.0 <= self.rho:
            raise EBShrinkError(f"rho must be non-negative, got {self.rho}")

    @property
    def n_blocks(self) -> int:
        return self.p // self.b

    def block(self) -> np.ndarray:
        A = np.full((self.b, self.b), self.rho)
        np.fill_diagonal(A, 1.0)
        return A

    def block_cholesky(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.block())
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError(
                f"block correlation with rho={self.rho} is not positive definite"
            ) from None

    def matrix(self) -> np.ndarray:
        return np.kron(np.eye(self.n_blocks), self.block())

    def precision(self) -> np.ndarray:
        """``Sigma^{-1}``, assembled from the inverse of a single block."""
        return np.kron(np.eye(self.n_blocks), np.linalg.inv(self.block()))


@dataclass(frozen=True)
class GroupStructure:
    """Partition of variables ``0..p-1`` into ``G`` groups labelled ``0..G-1``."""

    assignment: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=int)
        if a.ndim != 1 or a.size == 0:
            raise EBShrinkError("group assignment must be a non-empty vector")
        labels = np.unique(a)
        if labels[0] != 0 or labels[-1] != labels.size - 1:
            raise EBShrinkError("group labels must be 0..G-1 with no empty group")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @classmethod
    def contiguous(cls, sizes: Sequence[int]) -> "GroupStructure":
        return cls(np.repeat(np.arange(len(sizes)), sizes))

    @property
    def p(self) -> int:
        return self.assignment.size

    @property
    def n_groups(self) -> int:
        return int(self.assignment.max()) + 1

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_groups)

    def members(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == g)

    def indicator(self) -> np.ndarray:
        """p x G membership matrix."""
        return np.eye(self.n_groups)[self.assignment]


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream)``."""

    seed: int
    stream: int = 0
    _seq: np.random.SeedSequence = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream < 0:
            raise EBShrinkError("seed and stream id must be non-negative")
        object.__setattr__(
            self, "_seq", np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._seq))

    def child(self, stream: int) -> "RngStream":
        # nested streams are encoded into a single id to stay hashable and stable
        return RngStream(self.seed, self.stream * 1_000_003 + stream + 1)


@dataclass
class PosteriorChain:
    """Kept MCMC draws, one array per named quantity with draws along axis 0."""

    samples: dict
    burn_in: int = 0
    thin: int = 1
    seed: int | None = None
    info: dict = field(default_factory=dict)

    def __getitem__(self, name) -> np.ndarray:
        return self.samples[name]

    def __len__(self) -> int:
        return len(next(iter(self.samples.values()))) if self.samples else 0

    def mean(self, name) -> np.ndarray:
        return self.samples[name].mean(axis=0)


def batch_means_se(x, n_batches: int = 50) -> np.ndarray:
    """Monte Carlo standard error of a chain mean by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    m = x.shape[0] // n_batches
    if m < 1:
        return x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])
    b = x[: m * n_batches].reshape(n_batches, m, *x.shape[1:]).mean(axis=1)
    return b.std(axis=0, ddof=1) / np.sqrt(n_batches)


def resolve_threads(threads: int | None = None) -> int:
    """Thread count from the argument, else ``EBSHRINK_THREADS``, else the core count."""
    if threads is None:
        env = os.environ.get("EBSHRINK_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise EBShrinkError("thread count must be positive")
    return threads


def parallel_map(fn, jobs, threads: int | None = 1) -> list:
    """``[fn(j) for j in jobs]`` on a thread pool; results keep job order.

    Each job must carry its own random stream so the output does not depend
    on scheduling.
    """
    jobs = list(jobs)
    threads = min(resolve_threads(threads), max(len(jobs), 1))
    if threads == 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def standardize(d: Dataset, tol: float = 1e-12) -> Dataset:
    """Center columns and scale to unit population variance (divide by n).

    Raises :class:`ConstantColumnError` naming the first constant column.
    """
    X = d.X
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    bad = np.flatnonzero(sd <= tol * np.maximum(1.0, np.abs(mean)))
    if bad.size:
        raise ConstantColumnError(int(bad[0]))
    Z = (X - mean) / sd
    if d.standardized:
        center = d.center + d.scale * mean
        scale = d.scale * sd
    else:
        center, scale = mean, sd
    return Dataset(Z, d.y, d.family, standardized=True, center=center, scale=scale)


def sample_design(n: int, cov: BlockCovariance, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` rows from N(0, Sigma) reusing one Cholesky factor per block."""
    L = cov.block_cholesky()
    Z = rng.standard_normal((n, cov.n_blocks, cov.b))
    if cov.b == 1:
        return Z.reshape(n, cov.p)
    return (Z @ L.T).reshape(n, cov.p)


def sample_coefficients(
    groups: GroupStructure, tau2, rng: np.random.Generator
) -> np.ndarray:
    """Independent ``beta_j ~ N(0, tau2[g(j)])``."""
    tau2 = np.asarray(tau2, dtype=float)
    if tau2.shape != (groups.n_groups,):
        raise EBShrinkError(f"need {groups.n_groups} group variances, got {tau2.shape}")
    if np.any(tau2 < 0):
        raise EBShrinkError("group variances must be non-negative")
    return np.sqrt(tau2)[groups.assignment] * rng.standard_normal(groups.p)


def generate_response(X, beta, family: str, rng: np.random.Generator, sigma2: float = 1.0):
    """Gaussian ``y = X beta + eps`` or Bernoulli ``y ~ Bern(expit(X beta))``."""
    eta = np.asarray(X) @ np.asarray(beta)
    if family == GAUSSIAN:
        if sigma2 <= 0:
            raise EBShrinkError("sigma2 must be positive")
        return eta + np.sqrt(sigma2) * rng.standard_normal(eta.shape[0])
    if family == BINARY:
        return (rng.random(eta.shape[0]) < expit(eta)).astype(float)
    raise EBShrinkError(f"unknown family {family!r}")


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a numeric CSV with a header row. Empty or non-numeric cells are rejected."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EBShrinkError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise EBShrinkError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise EBShrinkError(f"{path}:{lineno}: missing or non-numeric value") from None
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    if np.isnan(arr).any():
        raise EBShrinkError(f"{path}: missing values are not allowed")
    return header, arr


def read_dataset_csv(x_path, y_path=None, response: str | None = None, family=None) -> Dataset:
    """Build a :class:`Dataset` from CSV files.

    Either ``y_path`` holds the response as its single (or ``response``-named)
    column, or ``response`` names a column of the ``x_path`` file.
    """
    header, X = read_matrix_csv(x_path)
    if y_path is not None:
        yh, Y = read_matrix_csv(y_path)
        col = yh.index(response) if response in yh else 0
        y = Y[:, col]
    elif response is not None:
        if response not in header:
            raise EBShrinkError(f"response column {response!r} not in {x_path}")
        col = header.index(response)
        y = X[:, col]
        X = np.delete(X, col, axis=1)
    else:
        raise EBShrinkError("no response given")
    if family is None:
        family = BINARY if np.all((y == 0) | (y == 1)) else GAUSSIAN
    return Dataset(X, y, family)
