"""PCA per modality and the four fused item-embedding strategies.

Strategies over precomputed text/image vectors:

* v1 — PCA of the text table alone.
* v2 — PCA of the image table alone.
* v3 — one PCA over the concatenated (text | image) vectors.
* v4 — separate PCAs per modality, concatenated afterwards.

Each PCA output is L2-normalized per item before any concatenation, so
neither modality's raw scale can dominate the fused vector. PCA itself
is the exact eigendecomposition of the sample covariance (divisor n-1)
with a deterministic sign convention, so identical inputs give
bit-identical tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

STRATEGIES = ("v1", "v2", "v3", "v4")


@dataclass(frozen=True)
class PCAModel:
    """Fitted PCA for one modality: mean, principal directions, variances."""

    mean: np.ndarray               # [D]
    components: np.ndarray         # [k, D], rows orthonormal
    explained_variance: np.ndarray  # [k], nonincreasing, >= 0

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def output_dim(self) -> int:
        return self.components.shape[0]


@dataclass
class RawModalityTable:
    """Per-item vectors of one modality, as loaded from disk."""

    item_ids: list[str]
    vectors: np.ndarray  # [n, D]
    modality: str        # "text" or "image"

    def __post_init__(self):
        if len(self.item_ids) != self.vectors.shape[0]:
            raise ValidationError("modality table: one vector per item id required")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise ValidationError("modality table: duplicate item ids")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class ItemEmbeddingTable:
    """Fused per-item feature vectors produced by one strategy."""

    item_ids: list[str]
    vectors: np.ndarray  # [n, d_fused]
    strategy: str
    _index: dict = field(default=None, repr=False, compare=False)

    @property
    def fused_dim(self) -> int:
        return self.vectors.shape[1]

    def row_index(self, item_id: str) -> int | None:
        if self._index is None:
            self._index = {iid: i for i, iid in enumerate(self.item_ids)}
        return self._index.get(item_id)


def pca_fit(X: np.ndarray, k: int) -> PCAModel:
    """Fit top-k PCA via eigendecomposition of the D x D sample covariance.

    Components are ordered by descending eigenvalue. Sign convention:
    each component is flipped so its largest-magnitude element (lowest
    index on ties) is positive. Degenerate input (zero variance) is
    legal and yields a deterministic orthonormal basis with zero
    explained variance.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"pca_fit: expected a 2-D matrix, got rank {X.ndim}")
    n, d = X.shape
    if n < 2:
        raise ValidationError(f"pca_fit: need at least 2 samples, got {n}")
    if not 1 <= k <= min(d, n):
        raise ValidationError(f"pca_fit: k={k} out of range [1, {min(d, n)}]")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (n - 1)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    order = np.arange(d - 1, -1, -1)
    evals = np.maximum(evals[order], 0.0)
    comps = evecs[:, order].T  # rows are directions
    # sign convention: largest-|.| entry positive, ties -> lowest index
    for row in comps:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return PCAModel(mean=mean, components=np.ascontiguousarray(comps[:k]),
                    explained_variance=evals[:k])


def pca_transform(model: PCAModel, X: np.ndarray) -> np.ndarray:
    """Project rows of X onto the fitted components: (X - mean) @ C^T."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValidationError(
            f"pca_transform: input width {X.shape[-1]} != model dim {model.input_dim}")
    return (X - model.mean) @ model.components.T


def l2_normalize_rows(X: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm; all-zero rows stay zero."""
    norms = np.sqrt((X * X).sum(axis=1))
    norms = np.where(norms == 0.0, 1.0, norms)
    return X / norms[:, None]


def _check_k(k: int, dim: int, label: str) -> None:
    if k > dim:
        raise ValidationError(f"{label}: k={k} exceeds modality dimension {dim}")


def _align(text: RawModalityTable, image: RawModalityTable) -> np.ndarray:
    """Return image vectors reindexed to the text table's item order."""
    if set(text.item_ids) != set(image.item_ids):
        raise ValidationError("fuse_embeddings: text and image tables carry different item-id sets")
    pos = {iid: i for i, iid in enumerate(image.item_ids)}
    rows = [pos[iid] for iid in text.item_ids]
    return image.vectors[rows]


def fuse_embeddings(
    text: RawModalityTable | None,
    image: RawModalityTable | None,
    strategy: str,
    k_text: int = 32,
    k_image: int = 32,
) -> ItemEmbeddingTable:
    """Build the fused item table for one of the four strategies."""
    strategy = strategy.lower()
    if strategy not in STRATEGIES:
        raise ValidationError(f"fuse_embeddings: unknown strategy {strategy!r}")

    if strategy == "v1":
        if text is None:
            raise ValidationError("fuse_embeddings: v1 requires the text table")
        _check_k(k_text, text.dim, "k_text")
        fused = l2_normalize_rows(pca_transform(pca_fit(text.vectors, k_text), text.vectors))
        ids = list(text.item_ids)
        expected = k_text
    elif strategy == "v2":
        if image is None:
            raise ValidationError("fuse_embeddings: v2 requires the image table")
        _check_k(k_image, image.dim, "k_image")
        fused = l2_normalize_rows(pca_transform(pca_fit(image.vectors, k_image), image.vectors))
        ids = list(image.item_ids)
        expected = k_image
    else:
        if text is None or image is None:
            raise ValidationError(f"fuse_embeddings: {strategy} requires both modality tables")
        _check_k(k_text, text.dim, "k_text")
        _check_k(k_image, image.dim, "k_image")
        img_aligned = _align(text, image)
        ids = list(text.item_ids)
        expected = k_text + k_image
        if strategy == "v3":
            joint = np.concatenate([text.vectors, img_aligned], axis=1)
            fused = l2_normalize_rows(
                pca_transform(pca_fit(joint, k_text + k_image), joint))
        else:  # v4
            t = l2_normalize_rows(pca_transform(pca_fit(text.vectors, k_text), text.vectors))
            m = l2_normalize_rows(pca_transform(pca_fit(img_aligned, k_image), img_aligned))
            fused = np.concatenate([t, m], axis=1)

    if fused.shape[1] != expected:
        raise AssertionError(f"fuse_embeddings: width {fused.shape[1]} != expected {expected}")
    return ItemEmbeddingTable(item_ids=ids, vectors=np.ascontiguousarray(fused),
                              strategy=strategy)
