"""Diagonal-Gaussian toy posteriors and the matching affine generator.

The analytic substrate for everything else in this package: the true
posterior of each measurement context is an elementwise Gaussian
``N(mu0, diag(sigma0^2))``, and the generator is the affine map
``x_hat = mu + sigma * z`` with ``z ~ N(0, I)``, so its samples are
``N(mu, diag(sigma^2))``.  Both distributions are fully described by a
mean vector and a per-dimension spread, which is what makes every loss
in :mod:`postsamp.regularizers` available in closed form.

``sigma = 0`` is legal everywhere and encodes a collapsed generator that
ignores its code vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

from .streams import SeededStream

__all__ = [
    "ToyPosterior",
    "GeneratorParams",
    "SampleBatch",
    "sample_posterior",
    "sample_generator",
    "p_sample_average",
    "posterior_sampler",
    "generator_sampler",
]


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a scalar or 1-D vector, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must have at least one element")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class ToyPosterior:
    """Per-context true posterior parameters.

    ``mu0`` and ``sigma0`` are ``(n_contexts, dim)`` arrays; row ``c``
    holds the parameters of context ``c``.  All spreads must be strictly
    positive (use a tiny value such as 1e-12 for an effectively
    deterministic posterior).
    """

    mu0: np.ndarray
    sigma0: np.ndarray

    def __post_init__(self) -> None:
        mu0 = np.atleast_2d(np.asarray(self.mu0, dtype=np.float64))
        sigma0 = np.atleast_2d(np.asarray(self.sigma0, dtype=np.float64))
        if mu0.shape != sigma0.shape:
            raise ValueError(
                f"mu0 and sigma0 shapes differ: {mu0.shape} vs {sigma0.shape}"
            )
        if mu0.ndim != 2 or mu0.shape[1] < 1:
            raise ValueError(f"expected (n_contexts, dim) arrays, got {mu0.shape}")
        if not (np.all(np.isfinite(mu0)) and np.all(np.isfinite(sigma0))):
            raise ValueError("posterior parameters must be finite")
        if not np.all(sigma0 > 0):
            raise ValueError("all sigma0 entries must be > 0")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "sigma0", sigma0)

    @classmethod
    def single(cls, mu0, sigma0) -> "ToyPosterior":
        """One-context posterior from vectors (or scalars)."""
        return cls(_as_vector(mu0, "mu0")[None, :], _as_vector(sigma0, "sigma0")[None, :])

    @classmethod
    def from_contexts(cls, contexts: Sequence[tuple]) -> "ToyPosterior":
        """Build from a list of (mu0, sigma0) pairs sharing one dimension."""
        if not contexts:
            raise ValueError("need at least one context")
        mus = [_as_vector(m, "mu0") for m, _ in contexts]
        sigmas = [_as_vector(s, "sigma0") for _, s in contexts]
        return cls(np.stack(mus), np.stack(sigmas))

    @property
    def n_contexts(self) -> int:
        return self.mu0.shape[0]

    @property
    def dim(self) -> int:
        return self.mu0.shape[1]

    def context_params(self, context: int) -> tuple[np.ndarray, np.ndarray]:
        """(mu0, sigma0) vectors of one context; raises on a bad index."""
        if not 0 <= context < self.n_contexts:
            raise IndexError(
                f"context {context} out of range [0, {self.n_contexts})"
            )
        return self.mu0[context], self.sigma0[context]


@dataclass(frozen=True)
class GeneratorParams:
    """Mean and per-dimension spread of the affine generator.

    ``sigma`` is elementwise nonnegative; zeros encode mode collapse.
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        mu = _as_vector(self.mu, "mu")
        sigma = _as_vector(self.sigma, "sigma")
        if mu.shape != sigma.shape:
            raise ValueError(f"mu and sigma shapes differ: {mu.shape} vs {sigma.shape}")
        if np.any(sigma < 0):
            raise ValueError("sigma must be elementwise >= 0")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class SampleBatch:
    """A matrix of draws plus where they came from."""

    values: np.ndarray
    origin: Literal["posterior", "generator"]
    stream: SeededStream

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValueError(f"values must be an (n, dim) matrix with n >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        if self.origin not in ("posterior", "generator"):
            raise ValueError(f"unknown origin {self.origin!r}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def sample_posterior(
    post: ToyPosterior, context: int, n: int, stream: SeededStream
) -> SampleBatch:
    """Draw ``n`` i.i.d. rows from the true posterior of one context."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    mu0, sigma0 = post.context_params(context)
    z = stream.generator().standard_normal((int(n), post.dim))
    return SampleBatch(mu0 + sigma0 * z, "posterior", stream)


def sample_generator(
    params: GeneratorParams, n: int, stream: SeededStream
) -> SampleBatch:
    """Draw ``n`` i.i.d. rows from the affine generator."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    z = stream.generator().standard_normal((int(n), params.dim))
    return SampleBatch(params.mu + params.sigma * z, "generator", stream)


def p_sample_average(batch: SampleBatch, P: int) -> np.ndarray:
    """Elementwise mean of the first ``P`` rows of a batch."""
    if P < 1:
        raise ValueError(f"P must be >= 1, got {P}")
    if P > batch.n:
        raise ValueError(f"P={P} exceeds batch size {batch.n}")
    return batch.values[:P].mean(axis=0)


# Samplers share the signature (context, n, stream) -> (n, dim) array so the
# validation machinery in `autotune` can treat the true posterior and any
# generator interchangeably.
Sampler = Callable[[int, int, SeededStream], np.ndarray]


def posterior_sampler(post: ToyPosterior) -> Sampler:
    """Adapter: the true posterior viewed as a conditional sampler."""

    def draw(context: int, n: int, stream: SeededStream) -> np.ndarray:
        return sample_posterior(post, context, n, stream).values

    return draw


def generator_sampler(params: GeneratorParams) -> Sampler:
    """Adapter: a fixed-parameter generator viewed as a conditional sampler."""

    def draw(context: int, n: int, stream: SeededStream) -> np.ndarray:
        del context  # the affine toy generator is context-blind
        return sample_generator(params, n, stream).values

    return draw
