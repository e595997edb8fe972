"""Latent-space repair of binary masks via a rejection-sampled valid manifold.

A linear principal-subspace autoencoder embeds masks in a low-dimensional
latent space (the embedding is deliberately pluggable: anything with
encode/decode and the same fields slots in). A kernel density estimate over
the encoded valid training masks is the target density; proposals drawn from
a fitted Gaussian envelope are accepted when a uniform draw falls under the
density ratio AND the decoded mask passes the shape validity test, so every
stored latent vector decodes to a plausible mask by construction. Repair
projects a defective mask to latent space and replaces its code with the mean
of its k nearest accepted samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import logsumexp

from ._validation import as_mask
from .errors import DimensionMismatch, InvalidParams, ManifoldStarved
from .io import dump_json, load_json

DEFAULT_LATENT_DIM = 32
SECONDARY_AREA_FRACTION = 0.05
ENVELOPE_SAFETY = 1.1
BANDWIDTH_FLOOR = 1e-6
COVARIANCE_FLOOR = 1e-6


@dataclass
class LatentEmbedding:
    """Linear autoencoder: orthonormal principal directions plus a mean raster.

    ``decode(encode(m))`` always matches the raster dimensions of ``m``;
    decoding thresholds the reconstruction at 0.5.
    """

    components: np.ndarray   # (D, H*W) orthonormal rows
    mean: np.ndarray         # (H*W,)
    mask_shape: tuple[int, int]

    @property
    def latent_dim(self) -> int:
        return self.components.shape[0]

    def _flatten(self, masks) -> tuple[np.ndarray, bool]:
        arr = np.asarray(masks, dtype=np.float64)
        single = arr.ndim == 2
        if single:
            arr = arr[None]
        if arr.shape[1:] != tuple(self.mask_shape):
            raise DimensionMismatch(
                f"mask shape {arr.shape[1:]} != embedding shape {tuple(self.mask_shape)}")
        return arr.reshape(arr.shape[0], -1), single

    def encode(self, masks) -> np.ndarray:
        flat, single = self._flatten(masks)
        z = (flat - self.mean) @ self.components.T
        return z[0] if single else z

    def decode(self, z) -> np.ndarray:
        arr = np.asarray(z, dtype=np.float64)
        single = arr.ndim == 1
        if single:
            arr = arr[None]
        if arr.shape[1] != self.latent_dim:
            raise DimensionMismatch(f"latent dim {arr.shape[1]} != {self.latent_dim}")
        recon = arr @ self.components + self.mean
        masks = (recon >= 0.5).astype(np.uint8).reshape(arr.shape[0], *self.mask_shape)
        return masks[0] if single else masks


def train_embedding(masks, latent_dim: int = DEFAULT_LATENT_DIM) -> LatentEmbedding:
    """Fit the principal-subspace embedding on uniform-size binary masks."""
    stack = _mask_stack(masks)
    n = stack.shape[0]
    if n < latent_dim:
        raise InvalidParams(f"need at least latent_dim={latent_dim} masks, got {n}")
    flat = stack.reshape(n, -1).astype(np.float64)
    mean = flat.mean(axis=0)
    _, _, vt = np.linalg.svd(flat - mean, full_matrices=False)
    components = vt[:latent_dim].copy()
    for i in range(components.shape[0]):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    return LatentEmbedding(components, mean, (stack.shape[1], stack.shape[2]))


def _mask_stack(masks) -> np.ndarray:
    arrs = [as_mask(m) for m in masks]
    if not arrs:
        raise InvalidParams("no masks given")
    shape = arrs[0].shape
    for i, m in enumerate(arrs):
        if m.shape != shape:
            raise DimensionMismatch(f"mask {i} has shape {m.shape}, expected {shape}")
    return np.stack(arrs)


def shape_valid(mask, secondary_area_frac: float = SECONDARY_AREA_FRACTION) -> bool:
    """Plausibility test: reject empty masks, interior holes (4-connected
    background not touching the border), and extra 8-connected foreground
    components whose area reaches ``secondary_area_frac`` of the largest."""
    fg = as_mask(mask).astype(bool)
    if not fg.any():
        return False

    labeled, count = ndimage.label(fg, structure=np.ones((3, 3), dtype=int))
    if count > 1:
        areas = np.sort(ndimage.sum_labels(fg, labeled, index=np.arange(1, count + 1)))[::-1]
        if areas[1] >= secondary_area_frac * areas[0]:
            return False

    bg_labeled, bg_count = ndimage.label(~fg)
    if bg_count:
        border = np.unique(np.concatenate([
            bg_labeled[0, :], bg_labeled[-1, :], bg_labeled[:, 0], bg_labeled[:, -1]]))
        border = set(int(v) for v in border if v != 0)
        if len(border) < bg_count:
            return False  # some background component is landlocked: a hole
    return True


def scott_bandwidth(samples: np.ndarray) -> np.ndarray:
    """Per-dimension Scott's-rule bandwidths, floored to stay positive."""
    n, d = samples.shape
    sigma = samples.std(axis=0)
    return np.maximum(sigma * n ** (-1.0 / (d + 4)), BANDWIDTH_FLOOR)


def kde_log_density(train: np.ndarray, bandwidth: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Log density of a product-Gaussian-kernel KDE at query points ``z``."""
    q = np.atleast_2d(z)
    scaled = (q[:, None, :] - train[None, :, :]) / bandwidth
    log_kernels = -0.5 * np.einsum("qnd,qnd->qn", scaled, scaled)
    log_norm = np.log(train.shape[0]) + np.sum(np.log(bandwidth * np.sqrt(2.0 * np.pi)))
    return logsumexp(log_kernels, axis=1) - log_norm


def _floored_cholesky(cov: np.ndarray) -> np.ndarray:
    floor = COVARIANCE_FLOOR
    for _ in range(8):
        try:
            return np.linalg.cholesky(cov + floor * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            floor *= 10.0
    raise InvalidParams("covariance could not be regularized")


def gaussian_log_density(mean: np.ndarray, chol: np.ndarray, z: np.ndarray) -> np.ndarray:
    q = np.atleast_2d(z) - mean
    sol = np.linalg.solve(chol, q.T)
    maha = np.einsum("dq,dq->q", sol, sol)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    d = mean.shape[0]
    return -0.5 * (maha + d * np.log(2.0 * np.pi) + log_det)


@dataclass
class ValidManifold:
    """Accepted latent samples plus the densities that generated them."""

    samples: np.ndarray        # (C, D) accepted latent vectors
    kde_bandwidth: np.ndarray  # (D,)
    gaussian_mean: np.ndarray  # (D,)
    gaussian_cov: np.ndarray   # (D, D) floored covariance of the envelope
    k_envelope: float          # log-space constant: log f_p <= log k + log f_q on training vectors
    train_encodings: np.ndarray | None = None  # kept in memory for diagnostics, not serialized

    def __len__(self) -> int:
        return self.samples.shape[0]


def build_manifold(embedding: LatentEmbedding, valid_masks, target_count: int,
                   rng_seed: int = 0, batch_size: int = 4096,
                   secondary_area_frac: float = SECONDARY_AREA_FRACTION) -> ValidManifold:
    """Rejection-sample ``target_count`` latent vectors whose decodings are
    valid shapes.

    Proposals come from a Gaussian fitted to the encoded valid masks (its
    covariance floored when degenerate); the acceptance test combines the
    KDE/envelope density ratio with the decoded-shape validity check. The
    whole procedure is deterministic for a given seed. If the cumulative
    acceptance rate sits below 1e-4 after a million proposals the build stops
    with ManifoldStarved.
    """
    if target_count < 1:
        raise InvalidParams("target_count must be >= 1")
    encodings = np.atleast_2d(embedding.encode(_mask_stack(valid_masks).astype(np.float64)))
    bandwidth = scott_bandwidth(encodings)
    mean = encodings.mean(axis=0)
    cov = np.cov(encodings, rowvar=False, ddof=0).reshape(encodings.shape[1], encodings.shape[1])
    chol = _floored_cholesky(cov)

    log_fp_train = kde_log_density(encodings, bandwidth, encodings)
    log_fq_train = gaussian_log_density(mean, chol, encodings)
    log_k = float(np.log(ENVELOPE_SAFETY) + np.max(log_fp_train - log_fq_train))

    rng = np.random.default_rng(rng_seed)
    accepted: list[np.ndarray] = []
    n_accepted = 0
    n_proposed = 0
    while n_accepted < target_count:
        z = mean + rng.standard_normal((batch_size, encodings.shape[1])) @ chol.T
        log_u = np.log(rng.uniform(size=batch_size))
        n_proposed += batch_size

        ratio = kde_log_density(encodings, bandwidth, z) - gaussian_log_density(mean, chol, z) - log_k
        density_ok = log_u < ratio
        if density_ok.any():
            candidates = z[density_ok]
            decoded = embedding.decode(candidates)
            keep = np.array([shape_valid(mask, secondary_area_frac) for mask in decoded])
            if keep.any():
                accepted.append(candidates[keep])
                n_accepted += int(keep.sum())

        if n_proposed >= 1_000_000 and n_accepted / n_proposed < 1e-4:
            raise ManifoldStarved("acceptance rate below 1e-4 after 1e6 proposals",
                                  proposed=n_proposed, accepted=n_accepted)

    samples = np.vstack(accepted)[:target_count]
    return ValidManifold(samples, bandwidth, mean, chol @ chol.T, log_k, encodings)


def repair(mask, embedding: LatentEmbedding, manifold: ValidManifold, k: int = 1) -> np.ndarray:
    """Replace a mask's latent code with the mean of its k nearest manifold
    samples and decode. With k=1 the output passes shape_valid by construction."""
    if k < 1:
        raise InvalidParams("k must be >= 1")
    if len(manifold) == 0:
        raise InvalidParams("manifold is empty")
    z = embedding.encode(as_mask(mask).astype(np.float64))
    d2 = np.sum((manifold.samples - z) ** 2, axis=1)
    k = min(k, len(manifold))
    nearest = np.argsort(d2, kind="stable")[:k]
    return embedding.decode(manifold.samples[nearest].mean(axis=0))


def save_model(path, embedding: LatentEmbedding, manifold: ValidManifold) -> None:
    dump_json({
        "mask_shape": [int(v) for v in embedding.mask_shape],
        "mean": [float(v) for v in embedding.mean],
        "components": [[float(v) for v in row] for row in embedding.components],
        "kde_bandwidth": [float(v) for v in manifold.kde_bandwidth],
        "gaussian_mean": [float(v) for v in manifold.gaussian_mean],
        "gaussian_cov": [[float(v) for v in row] for row in manifold.gaussian_cov],
        "k_envelope": float(manifold.k_envelope),
        "samples": [[float(v) for v in row] for row in manifold.samples],
    }, path, compact=True)


def load_model(path) -> tuple[LatentEmbedding, ValidManifold]:
    data = load_json(path)
    embedding = LatentEmbedding(
        np.asarray(data["components"], dtype=np.float64),
        np.asarray(data["mean"], dtype=np.float64),
        tuple(int(v) for v in data["mask_shape"]),
    )
    manifold = ValidManifold(
        np.asarray(data["samples"], dtype=np.float64),
        np.asarray(data["kde_bandwidth"], dtype=np.float64),
        np.asarray(data["gaussian_mean"], dtype=np.float64),
        np.asarray(data["gaussian_cov"], dtype=np.float64),
        float(data["k_envelope"]),
    )
    return embedding, manifold


def elliptical_mask(shape: tuple[int, int], center: tuple[float, float],
                    semi_axes: tuple[float, float], angle_rad: float = 0.0) -> np.ndarray:
    """Filled ellipse raster, the synthetic stand-in for plausible anatomy."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy - center[0]
    dx = xx - center[1]
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    a, b = semi_axes
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.uint8)


def random_elliptical_mask(rng: np.random.Generator, shape: tuple[int, int] = (64, 64)) -> np.ndarray:
    h, w = shape
    center = (h / 2 + rng.uniform(-4, 4), w / 2 + rng.uniform(-4, 4))
    semi_axes = (rng.uniform(0.18, 0.30) * h, rng.uniform(0.28, 0.42) * w)
    return elliptical_mask(shape, center, semi_axes, rng.uniform(0.0, np.pi))


def decayed_mask(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Cut a random angular wedge out of the foreground, mimicking a
    segmentation dropout; the result stays a single component."""
    fg = as_mask(mask).astype(bool)
    ys, xs = np.nonzero(fg)
    cy, cx = ys.mean(), xs.mean()
    yy, xx = np.mgrid[0:fg.shape[0], 0:fg.shape[1]]
    angles = np.arctan2(yy - cy, xx - cx)
    start = rng.uniform(-np.pi, np.pi)
    width = rng.uniform(np.pi / 4, np.pi / 2)
    diff = np.mod(angles - start, 2.0 * np.pi)
    wedge = diff < width
    out = fg & ~wedge
    return out.astype(np.uint8)
