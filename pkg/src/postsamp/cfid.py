"""Frechet distances between Gaussian-approximated embedding distributions.

Inputs are three row-aligned embedding matrices: truths ``x``,
measurements ``y``, and generated samples ``xhat``.  When each
measurement has ``P`` generated samples, the truth/measurement rows are
repeated ``P`` times so all three matrices share one row count (the
repetition convention).  The pipeline is:

1. sample means and population covariances (``1/rows`` normalization,
   no Bessel correction) over all rows;
2. measurement-conditional statistics via Schur complements, with the
   measurement covariance inverted by a cutoff pseudo-inverse (the
   repetition convention makes it sample-rank-deficient by construction,
   which the cutoff absorbs);
3. the conditional squared Wasserstein-2 distance between the two
   Gaussian conditionals, written so the measurement expectation of the
   conditional-mean gap collapses to

       ||mu_x - mu_xhat||^2
       + tr[(S_xy - S_xhaty) pinv(S_yy) (S_xy - S_xhaty)^T]

   plus the usual covariance term
   ``tr[A + B - 2 (A^{1/2} B A^{1/2})^{1/2}]`` on the conditional
   covariances.

The mean-gap and covariance terms are also exposed separately: the first
quantifies conditional-mean error, the second conditional-covariance
error, and they sum to the total.  The covariance term carries most of
the small-sample estimation bias, so comparisons at small row counts
should be read with that in mind.

Everything is float64 and deterministic: matrix square roots use a
symmetric eigendecomposition, never an iterative method.
"""

from __future__ import annotations

import csv
import io
import struct
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EmbeddingSet",
    "JointGaussianStats",
    "ConditionalStats",
    "compute_stats",
    "conditional_stats",
    "sqrtm_psd",
    "gaussian_w2_squared",
    "cfid",
    "cfid_from_stats",
    "cfid_decompose",
    "cfid_decompose_from_stats",
    "fid",
    "write_embeddings",
    "read_embeddings",
]

# Relative singular-value cutoff for the measurement-covariance pseudo-inverse.
_PINV_CUTOFF = 1e-10
# Eigenvalues of a nominally-PSD matrix may round slightly negative; anything
# below -_PSD_TOL * lambda_max is treated as a genuinely indefinite input.
_PSD_TOL = 1e-8
# A total (or part) this far below zero is rounding noise and clamps to 0.
_NEG_CLAMP = 1e-8
_SYM_TOL = 1e-12

_MAGIC = b"EMB1"
_DTYPE_F64 = 1


def _as_matrix(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a nonempty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class EmbeddingSet:
    """Row-aligned truth / measurement / generated embedding matrices."""

    x: np.ndarray
    y: np.ndarray
    xhat: np.ndarray
    P: int = 1

    def __post_init__(self) -> None:
        x = _as_matrix(self.x, "x")
        y = _as_matrix(self.y, "y")
        xhat = _as_matrix(self.xhat, "xhat")
        if not (x.shape[0] == y.shape[0] == xhat.shape[0]):
            raise ValueError(
                f"row counts differ: x {x.shape[0]}, y {y.shape[0]}, xhat {xhat.shape[0]}"
            )
        if x.shape[1] != xhat.shape[1]:
            raise ValueError(
                f"x and xhat must share a column count: {x.shape[1]} vs {xhat.shape[1]}"
            )
        if self.P < 1:
            raise ValueError(f"P must be >= 1, got {self.P}")
        if x.shape[0] % self.P != 0:
            raise ValueError(
                f"row count {x.shape[0]} is not a multiple of P={self.P}"
            )
        if x.shape[0] < x.shape[1] + y.shape[1] + 2:
            warnings.warn(
                "fewer rows than embedding dimensions + 2; covariance estimates "
                "will be rank-deficient",
                stacklevel=2,
            )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "xhat", xhat)

    @property
    def rows(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class JointGaussianStats:
    """First and second moments of the joint embedding distribution."""

    mu_x: np.ndarray
    mu_y: np.ndarray
    mu_xhat: np.ndarray
    s_xx: np.ndarray
    s_yy: np.ndarray
    s_xhatxhat: np.ndarray
    s_xy: np.ndarray
    s_xhaty: np.ndarray


@dataclass(frozen=True)
class ConditionalStats:
    """Measurement-conditional covariances plus the expected mean gap."""

    s_xx_given_y: np.ndarray
    s_xhatxhat_given_y: np.ndarray
    mean_gap_term: float


def compute_stats(embeddings: EmbeddingSet) -> JointGaussianStats:
    """Sample means and population covariances of an embedding set."""
    x, y, xhat = embeddings.x, embeddings.y, embeddings.xhat
    rows = embeddings.rows
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    mu_xhat = xhat.mean(axis=0)
    xzm = x - mu_x
    yzm = y - mu_y
    xhatzm = xhat - mu_xhat
    return JointGaussianStats(
        mu_x=mu_x,
        mu_y=mu_y,
        mu_xhat=mu_xhat,
        s_xx=xzm.T @ xzm / rows,
        s_yy=yzm.T @ yzm / rows,
        s_xhatxhat=xhatzm.T @ xhatzm / rows,
        s_xy=xzm.T @ yzm / rows,
        s_xhaty=xhatzm.T @ yzm / rows,
    )


def _require_symmetric(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"{name} must be square, got shape {matrix.shape}")
    scale = 1.0 + float(np.abs(matrix).max(initial=0.0))
    if float(np.abs(matrix - matrix.T).max(initial=0.0)) > _SYM_TOL * scale:
        raise ValueError(f"{name} is asymmetric beyond tolerance")
    return 0.5 * (matrix + matrix.T)


def _pinv_psd(matrix: np.ndarray) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix with a relative cutoff."""
    return np.linalg.pinv(matrix, rcond=_PINV_CUTOFF, hermitian=True)


def sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues within ``-1e-8 * lambda_max`` of zero are clamped to
    zero; anything more negative is rejected as an indefinite input.
    """
    matrix = _require_symmetric(matrix, "matrix")
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    lambda_max = max(float(eigenvalues[-1]), 0.0)
    if float(eigenvalues[0]) < -_PSD_TOL * max(lambda_max, np.finfo(np.float64).tiny):
        raise ValueError(
            f"matrix has eigenvalue {eigenvalues[0]:.3e} below the PSD tolerance"
        )
    root = (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T
    root = 0.5 * (root + root.T)
    residual = float(np.linalg.norm(root @ root - matrix))
    if residual > _PSD_TOL * (1.0 + float(np.linalg.norm(matrix))):
        raise ArithmeticError(
            f"square-root reconstruction residual {residual:.3e} too large"
        )
    return root


def conditional_stats(joint: JointGaussianStats) -> ConditionalStats:
    """Schur-complement conditionals and the expected conditional-mean gap."""
    s_yy = _require_symmetric(joint.s_yy, "s_yy")
    s_xx = _require_symmetric(joint.s_xx, "s_xx")
    s_xhatxhat = _require_symmetric(joint.s_xhatxhat, "s_xhatxhat")
    s_yy_inv = _pinv_psd(s_yy)
    s_xx_given_y = s_xx - joint.s_xy @ s_yy_inv @ joint.s_xy.T
    s_xhat_given_y = s_xhatxhat - joint.s_xhaty @ s_yy_inv @ joint.s_xhaty.T

    mu_gap = joint.mu_x - joint.mu_xhat
    cross_gap = joint.s_xy - joint.s_xhaty
    mean_gap = float(mu_gap @ mu_gap) + float(
        np.trace(cross_gap @ s_yy_inv @ cross_gap.T)
    )
    return ConditionalStats(
        s_xx_given_y=0.5 * (s_xx_given_y + s_xx_given_y.T),
        s_xhatxhat_given_y=0.5 * (s_xhat_given_y + s_xhat_given_y.T),
        mean_gap_term=mean_gap,
    )


def _covariance_distance(sigma_a: np.ndarray, sigma_b: np.ndarray) -> float:
    """tr[A + B - 2 (A^{1/2} B A^{1/2})^{1/2}], the Gaussian covariance gap."""
    root_a = sqrtm_psd(sigma_a)
    inner = root_a @ sigma_b @ root_a
    cross = sqrtm_psd(0.5 * (inner + inner.T))
    return float(np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * np.trace(cross))


def _clamp_nonnegative(value: float, what: str) -> float:
    if value < -_NEG_CLAMP:
        raise ArithmeticError(f"{what} = {value:.6e} is negative beyond tolerance")
    return max(value, 0.0)


def gaussian_w2_squared(
    mu_a: np.ndarray, sigma_a: np.ndarray, mu_b: np.ndarray, sigma_b: np.ndarray
) -> float:
    """Squared Wasserstein-2 distance between two Gaussians."""
    mu_a = np.asarray(mu_a, dtype=np.float64)
    mu_b = np.asarray(mu_b, dtype=np.float64)
    gap = mu_a - mu_b
    value = float(gap @ gap) + _covariance_distance(
        _require_symmetric(sigma_a, "sigma_a"), _require_symmetric(sigma_b, "sigma_b")
    )
    return _clamp_nonnegative(value, "squared Wasserstein distance")


def cfid_decompose_from_stats(joint: JointGaussianStats) -> tuple[float, float]:
    """(conditional-mean part, conditional-covariance part) from joint stats."""
    cond = conditional_stats(joint)
    mean_part = _clamp_nonnegative(cond.mean_gap_term, "conditional mean part")
    cov_part = _clamp_nonnegative(
        _covariance_distance(cond.s_xx_given_y, cond.s_xhatxhat_given_y),
        "conditional covariance part",
    )
    return mean_part, cov_part


def cfid_from_stats(joint: JointGaussianStats) -> float:
    """Conditional Frechet distance from joint Gaussian statistics."""
    mean_part, cov_part = cfid_decompose_from_stats(joint)
    return mean_part + cov_part


def cfid(embeddings: EmbeddingSet) -> float:
    """Conditional Frechet distance between truth and generated embeddings."""
    return cfid_from_stats(compute_stats(embeddings))


def cfid_decompose(embeddings: EmbeddingSet) -> tuple[float, float]:
    """Split the conditional distance into mean and covariance parts."""
    return cfid_decompose_from_stats(compute_stats(embeddings))


def fid(x: np.ndarray, xhat: np.ndarray) -> float:
    """Unconditional Frechet distance between two embedding clouds."""
    x = _as_matrix(x, "x")
    xhat = _as_matrix(xhat, "xhat")
    if x.shape[1] != xhat.shape[1]:
        raise ValueError(
            f"column counts differ: x {x.shape[1]}, xhat {xhat.shape[1]}"
        )
    mu_x = x.mean(axis=0)
    mu_xhat = xhat.mean(axis=0)
    xzm = x - mu_x
    xhatzm = xhat - mu_xhat
    s_x = xzm.T @ xzm / x.shape[0]
    s_xhat = xhatzm.T @ xhatzm / xhat.shape[0]
    return gaussian_w2_squared(mu_x, s_x, mu_xhat, s_xhat)


# ---------------------------------------------------------------------------
# Embedding file format
# ---------------------------------------------------------------------------
#
# Binary layout (little-endian): magic "EMB1", u32 rows, u32 cols, u8 dtype
# tag (1 = float64), 3 reserved zero bytes, then the row-major payload.
# CSV files with a "col0,col1,..." header are accepted as an alternative.


def write_embeddings(path, matrix: np.ndarray) -> None:
    matrix = _as_matrix(matrix, "matrix")
    rows, cols = matrix.shape
    header = _MAGIC + struct.pack("<IIB3x", rows, cols, _DTYPE_F64)
    payload = np.ascontiguousarray(matrix, dtype="<f8").tobytes()
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(payload)


def _read_embeddings_csv(raw: bytes, path) -> np.ndarray:
    text = raw.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{path}: empty embedding CSV") from None
    expected = [f"col{i}" for i in range(len(header))]
    if [h.strip() for h in header] != expected:
        raise ValueError(
            f"{path}: expected a 'col0,col1,...' header, got {header[:4]}..."
        )
    data = [[float(cell) for cell in row] for row in reader if row]
    if not data:
        raise ValueError(f"{path}: no data rows")
    matrix = np.asarray(data, dtype=np.float64)
    if matrix.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    return matrix


def read_embeddings(path) -> np.ndarray:
    """Read one embedding matrix from a binary or CSV file."""
    with open(path, "rb") as handle:
        raw = handle.read()
    if raw[:4] == _MAGIC:
        if len(raw) < 16:
            raise ValueError(f"{path}: truncated embedding header")
        rows, cols, tag = struct.unpack_from("<IIB", raw, 4)
        if tag != _DTYPE_F64:
            raise ValueError(f"{path}: unsupported dtype tag {tag}")
        if raw[13:16] != b"\x00\x00\x00":
            raise ValueError(f"{path}: reserved header bytes must be zero")
        expected = 16 + rows * cols * 8
        if len(raw) != expected:
            raise ValueError(
                f"{path}: payload size mismatch, expected {expected} bytes, got {len(raw)}"
            )
        matrix = np.frombuffer(raw, dtype="<f8", offset=16).reshape(rows, cols)
        return _as_matrix(matrix.astype(np.float64), str(path))
    return _as_matrix(_read_embeddings_csv(raw, path), str(path))
