"""Dimensionality reduction and normalization: PCA (classification or
retrieval fit mode), projection to 200 dims, Hellinger map, l2 normalization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

PCA_MAGIC = b"WRPCA1"

FIT_MODES = ("classification", "retrieval")

DEFAULT_PCA_DIM = 200


class PcaModelError(ValueError):
    pass


@dataclass
class PcaModel:
    mean: np.ndarray  # (input_dim,)
    components: np.ndarray  # (k, input_dim), rows orthonormal
    fit_mode: str
    fit_corpus_id: str = ""

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def save(self, path) -> None:
        mode = self.fit_mode.encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(PCA_MAGIC)
            fh.write(struct.pack("<III", self.input_dim, self.k, len(mode)))
            fh.write(mode)
            fh.write(np.ascontiguousarray(self.mean, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.components, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "PcaModel":
        with open(path, "rb") as fh:
            if fh.read(len(PCA_MAGIC)) != PCA_MAGIC:
                raise PcaModelError(f"{path}: bad magic")
            header = fh.read(12)
            if len(header) != 12:
                raise PcaModelError(f"{path}: truncated header")
            dim, k, mode_len = struct.unpack("<III", header)
            fit_mode = fh.read(mode_len).decode("utf-8")
            payload = fh.read()
        expected = (dim + k * dim) * 8
        if len(payload) != expected:
            raise PcaModelError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
        mean = np.frombuffer(payload[: dim * 8], dtype="<f8").copy()
        components = np.frombuffer(payload[dim * 8 :], dtype="<f8").reshape(k, dim).copy()
        return cls(mean, components, fit_mode)


def fit_pca(
    descriptors: np.ndarray,
    dim: int = DEFAULT_PCA_DIM,
    mode: str = "retrieval",
    fit_corpus_id: str = "",
) -> PcaModel:
    """Fit principal components on the rows of ``descriptors``.

    Components are ordered by descending explained variance and sign-fixed so
    the largest-magnitude coordinate of each is positive, which makes stored
    models byte-for-byte reproducible. k clips to
    min(dim, samples - 1, input_dim). Uses SVD of the centered data matrix
    rather than an explicit covariance for numerical stability.
    """
    if mode not in FIT_MODES:
        raise ValueError(f"unknown fit mode {mode!r}")
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("fit_pca needs at least 2 descriptors")
    n, d = X.shape
    mean = X.mean(axis=0)
    _, _, vt = np.linalg.svd(X - mean, full_matrices=False)
    k = min(dim, n - 1, d)
    components = vt[:k].copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean, components, mode, fit_corpus_id)


def project(model: PcaModel, descriptors: np.ndarray) -> np.ndarray:
    """Map descriptors (vector or batch) onto the model's components."""
    X = np.asarray(descriptors, dtype=np.float64)
    if X.shape[-1] != model.input_dim:
        raise ValueError(
            f"descriptor dim {X.shape[-1]} != model input dim {model.input_dim}"
        )
    return (X - model.mean) @ model.components.T


def hellinger_l2(v: np.ndarray):
    """Signed square root followed by l2 normalization.

    Returns (vector, degenerate); zero input yields a zero vector flagged
    degenerate.
    """
    v = np.asarray(v, dtype=np.float64)
    mapped = np.sign(v) * np.sqrt(np.abs(v))
    norm = np.linalg.norm(mapped)
    if norm == 0.0:
        return np.zeros_like(mapped), True
    return mapped / norm, False


@dataclass
class EmbeddedCorpus:
    image_ids: list
    values: np.ndarray  # (n, k), unit rows except degenerate ones
    degenerate: np.ndarray  # (n,) bool
    model: PcaModel


def embed_corpus(
    descriptors: np.ndarray,
    image_ids,
    dim: int = DEFAULT_PCA_DIM,
    pca_source: np.ndarray | None = None,
    model: PcaModel | None = None,
    fit_corpus_id: str = "",
) -> EmbeddedCorpus:
    """PCA-project and Hellinger/l2-normalize a corpus of descriptors.

    Retrieval mode (default): the model is fit on the corpus itself.
    Classification mode: pass ``pca_source`` (an external descriptor set) or a
    pre-fit ``model``. Centering always uses the fit source's mean.
    """
    if model is None:
        if pca_source is None:
            model = fit_pca(descriptors, dim, mode="retrieval", fit_corpus_id=fit_corpus_id)
        else:
            model = fit_pca(pca_source, dim, mode="classification", fit_corpus_id=fit_corpus_id)
    projected = project(model, descriptors)
    values = np.empty_like(projected)
    degenerate = np.zeros(projected.shape[0], dtype=bool)
    for i, row in enumerate(projected):
        values[i], degenerate[i] = hellinger_l2(row)
    return EmbeddedCorpus(list(image_ids), values, degenerate, model)
