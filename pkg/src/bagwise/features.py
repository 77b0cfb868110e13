"""Volume I/O, 3-D patch sampling and the multi-scale filter-bank features.

A patch is described by equalized (quantile-binned) histograms of eight
Gaussian-derivative filter responses at three scales: blur, gradient
magnitude, the three Hessian eigenvalues, Laplacian, Gaussian curvature and
the Frobenius norm of the Hessian. 8 filters x 3 scales x B bins.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .bagcore import BagwiseError

FILTER_NAMES = ("blur", "gradmag", "eig1", "eig2", "eig3", "log", "gauss_curv", "frobenius")
GRADIENT_EPS = 1e-8   # |grad| below this -> Gaussian curvature defined as 0
KERNEL_TRUNCATE = 4.0  # Gaussian kernels truncated at 4 sigma


@dataclass(frozen=True)
class Volume:
    """Dense scalar 3-D image; voxels indexed [x, y, z], spacing in mm."""

    voxels: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        v = np.asarray(self.voxels, dtype=float)
        if v.ndim != 3:
            raise BagwiseError("volume must be 3-D")
        if any(s <= 0 for s in self.spacing):
            raise BagwiseError("voxel spacing must be positive")
        object.__setattr__(self, "voxels", v)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass(frozen=True)
class Mask:
    voxels: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.voxels).astype(bool)
        if v.ndim != 3:
            raise BagwiseError("mask must be 3-D")
        object.__setattr__(self, "voxels", v)


@dataclass(frozen=True)
class Patch:
    center: tuple[int, int, int]
    side_mm: float
    side_vox: tuple[int, int, int]

    def slices(self):
        return tuple(slice(c - s // 2, c + s // 2 + 1)
                     for c, s in zip(self.center, self.side_vox))


@dataclass(frozen=True)
class FilterBankConfig:
    scales: tuple[float, ...] = (1.0, 2.0, 4.0)
    bins: int = 16

    def __post_init__(self):
        if any(s <= 0 for s in self.scales):
            raise BagwiseError("filter scales must be positive")
        if self.bins < 2:
            raise BagwiseError("need at least 2 histogram bins")
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(f"{name}@{scale:g}mm"
                     for scale in self.scales for name in FILTER_NAMES)

    @property
    def feature_dim(self) -> int:
        return len(self.channel_names) * self.bins


@dataclass(frozen=True)
class QuantileEdges:
    """Per-channel histogram edges at the k/B quantiles of training responses."""

    channel_names: tuple[str, ...]
    edges: np.ndarray          # (n_channels, B-1), non-decreasing rows
    bins: int

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.shape != (len(self.channel_names), self.bins - 1):
            raise BagwiseError("edge array shape mismatch")
        if np.any(np.diff(e, axis=1) < 0):
            raise BagwiseError("edges must be non-decreasing")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))


def patch_side_voxels(side_mm: float, spacing) -> tuple[int, int, int]:
    """Physical edge length rounded to the nearest odd voxel count per axis."""
    out = []
    for sp in spacing:
        s = side_mm / sp
        lo = max(1, 2 * int(np.floor((s - 1) / 2)) + 1)   # largest odd <= s (min 1)
        out.append(lo if abs(lo - s) <= abs(lo + 2 - s) else lo + 2)
    return tuple(out)


def sample_patches(volume: Volume, mask: Mask, n: int, side_mm: float,
                   seed: int) -> list[Patch]:
    """Draw n patch centers i.i.d. uniform over admissible masked voxels.

    A voxel is admissible when it is inside the mask and the patch cube fits
    within the volume bounds. Overlapping patches are allowed.
    """
    if n < 1:
        raise BagwiseError("sample_patches: n must be >= 1")
    if mask.voxels.shape != volume.dims:
        raise BagwiseError("mask dims do not match volume")
    side = patch_side_voxels(side_mm, volume.spacing)
    admissible = mask.voxels.copy()
    for ax, (dim, s) in enumerate(zip(volume.dims, side)):
        half = s // 2
        if dim < s:
            raise BagwiseError(f"patch side {s} exceeds volume dim {dim} on axis {ax}")
        idx = [slice(None)] * 3
        idx[ax] = slice(0, half)
        admissible[tuple(idx)] = False
        if half > 0:
            idx[ax] = slice(dim - half, dim)
            admissible[tuple(idx)] = False
    centers = np.argwhere(admissible)
    if len(centers) == 0:
        raise BagwiseError("no admissible patch centers inside the mask")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(centers), size=n)
    return [Patch(tuple(int(v) for v in centers[i]), side_mm, side) for i in picks]


def _deriv_kernel(sigma: float, order: int) -> np.ndarray:
    """Sampled Gaussian-derivative kernel with exact discrete moments.

    Truncating the sampled derivative-of-Gaussian breaks its polynomial
    moments (the order-2 kernel no longer sums to zero, so responses to
    quadratics leak a term growing with position). The kernel is therefore
    corrected so it annihilates polynomials below the derivative order and
    reproduces the exact derivative of t^order, restoring the continuous
    operator's action on low-order polynomials.
    """
    radius = int(KERNEL_TRUNCATE * sigma + 0.5)
    t = np.arange(-radius, radius + 1, dtype=float)
    phi = np.exp(-0.5 * (t / sigma) ** 2)
    phi /= phi.sum()
    if order == 0:
        return phi
    if order == 1:
        w = t / sigma ** 2 * phi        # odd: zeroth moment vanishes exactly
        return w / (t @ w)              # response to f(x) = x becomes 1
    if order == 2:
        w = (t ** 2 / sigma ** 4 - 1.0 / sigma ** 2) * phi
        w -= w.sum() * phi              # zero the constant response
        return w * (2.0 / ((t * t) @ w))  # response to x^2 becomes 2
    raise BagwiseError(f"unsupported derivative order {order}")


def gaussian_derivatives(volume: Volume, scale_mm: float, order) -> np.ndarray:
    """Gaussian-derivative response at a physical scale, in per-mm units.

    order is a per-axis derivative multi-index, e.g. (1, 0, 0). Boundaries
    are edge-replicated; kernels truncated at 4 sigma and moment-corrected.
    """
    if scale_mm <= 0:
        raise BagwiseError("scale must be positive")
    order = tuple(int(o) for o in order)
    resp = np.asarray(volume.voxels, dtype=float)
    for axis, (sp, o) in enumerate(zip(volume.spacing, order)):
        kernel = _deriv_kernel(scale_mm / sp, o)
        resp = ndimage.correlate1d(resp, kernel, axis=axis, mode="nearest")
    # voxel-index derivatives -> physical derivatives
    unit = np.prod([sp ** o for sp, o in zip(volume.spacing, order)])
    return resp / unit


def filter_bank(volume: Volume, config: FilterBankConfig) -> list[np.ndarray]:
    """All filter responses, ordered scale-major then FILTER_NAMES."""
    out = []
    for scale in config.scales:
        out.extend(_filter_bank_one_scale(volume, scale))
    return out


def _filter_bank_one_scale(volume: Volume, scale: float) -> list[np.ndarray]:
    d = {o: gaussian_derivatives(volume, scale, o) for o in [
        (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1),
        (2, 0, 0), (0, 2, 0), (0, 0, 2),
        (1, 1, 0), (1, 0, 1), (0, 1, 1)]}
    gx, gy, gz = d[(1, 0, 0)], d[(0, 1, 0)], d[(0, 0, 1)]
    hxx, hyy, hzz = d[(2, 0, 0)], d[(0, 2, 0)], d[(0, 0, 2)]
    hxy, hxz, hyz = d[(1, 1, 0)], d[(1, 0, 1)], d[(0, 1, 1)]

    gradmag = np.sqrt(gx ** 2 + gy ** 2 + gz ** 2)

    H = np.empty(volume.dims + (3, 3))
    H[..., 0, 0], H[..., 1, 1], H[..., 2, 2] = hxx, hyy, hzz
    H[..., 0, 1] = H[..., 1, 0] = hxy
    H[..., 0, 2] = H[..., 2, 0] = hxz
    H[..., 1, 2] = H[..., 2, 1] = hyz
    eigs = np.linalg.eigvalsh(H)               # ascending
    eig1, eig2, eig3 = eigs[..., 2], eigs[..., 1], eigs[..., 0]
    log_resp = eig1 + eig2 + eig3              # trace(H) via its eigenvalues

    # Gaussian curvature of the isophote surface: g^T adj(H) g / |g|^4,
    # with the adjugate written out for a symmetric 3x3 matrix.
    a00 = hyy * hzz - hyz ** 2
    a11 = hxx * hzz - hxz ** 2
    a22 = hxx * hyy - hxy ** 2
    a01 = hyz * hxz - hxy * hzz
    a02 = hxy * hyz - hyy * hxz
    a12 = hxy * hxz - hxx * hyz
    quad = (gx * gx * a00 + gy * gy * a11 + gz * gz * a22
            + 2.0 * (gx * gy * a01 + gx * gz * a02 + gy * gz * a12))
    safe = gradmag >= GRADIENT_EPS
    gauss_curv = np.zeros_like(quad)
    np.divide(quad, gradmag ** 4, out=gauss_curv, where=safe)

    frob = np.sqrt(hxx ** 2 + hyy ** 2 + hzz ** 2
                   + 2.0 * (hxy ** 2 + hxz ** 2 + hyz ** 2))
    return [d[(0, 0, 0)], gradmag, eig1, eig2, eig3, log_resp, gauss_curv, frob]


def fit_quantile_edges(training_responses, config: FilterBankConfig) -> QuantileEdges:
    """Edges at the k/B quantiles (k = 1..B-1) of pooled training responses.

    training_responses: per-channel 1-D sample arrays, in channel order.
    """
    names = config.channel_names
    if len(training_responses) != len(names):
        raise BagwiseError("one sample array per channel required")
    B = config.bins
    qs = np.arange(1, B) / B
    rows = []
    for samples in training_responses:
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size < B:
            raise BagwiseError(f"need at least {B} samples per channel")
        rows.append(np.quantile(samples, qs, method="linear"))
    return QuantileEdges(names, np.stack(rows), B)


def histogram_features(values: np.ndarray, edges_row: np.ndarray, bins: int) -> np.ndarray:
    """L1-normalized histogram; bin k is (edge_{k-1}, edge_k], open-ended at both ends."""
    idx = np.searchsorted(edges_row, values.ravel(), side="left")
    counts = np.bincount(idx, minlength=bins).astype(float)
    return counts / counts.sum()


def extract_features(patch: Patch, responses, edges: QuantileEdges) -> np.ndarray:
    """Concatenated per-channel equalized histograms of in-patch responses."""
    sl = patch.slices()
    parts = [histogram_features(resp[sl], edges.edges[c], edges.bins)
             for c, resp in enumerate(responses)]
    return np.concatenate(parts)


def extract_bag_features(volume: Volume, mask: Mask, config: FilterBankConfig,
                         edges: QuantileEdges, n_patches: int, side_mm: float,
                         seed: int) -> np.ndarray:
    """Feature matrix (n_patches x 24B) for one bag."""
    patches = sample_patches(volume, mask, n_patches, side_mm, seed)
    responses = filter_bank(volume, config)
    return np.stack([extract_features(p, responses, edges) for p in patches])


def pool_patch_responses(volume: Volume, mask: Mask, config: FilterBankConfig,
                         n_patches: int, side_mm: float, seed: int) -> list[np.ndarray]:
    """In-patch voxel responses per channel, for fitting quantile edges."""
    patches = sample_patches(volume, mask, n_patches, side_mm, seed)
    responses = filter_bank(volume, config)
    return [np.concatenate([resp[p.slices()].ravel() for p in patches])
            for resp in responses]


# ---------------------------------------------------------------------------
# File formats


def _payload_path(sidecar_path, meta) -> Path:
    sidecar_path = Path(sidecar_path)
    if "data" in meta:
        return sidecar_path.parent / meta["data"]
    return sidecar_path.with_suffix(".raw")


def load_volume(sidecar_path) -> Volume:
    """Read a volume from its JSON sidecar plus raw f32le payload.

    Sidecar: {"dims": [x,y,z], "spacing_mm": [sx,sy,sz], "dtype": "f32le",
    "order": "x-fastest"}; payload defaults to the sidecar stem with .raw.
    """
    meta = json.loads(Path(sidecar_path).read_text())
    dims = tuple(meta["dims"])
    if meta.get("dtype", "f32le") != "f32le":
        raise BagwiseError(f"unsupported volume dtype {meta.get('dtype')!r}")
    if meta.get("order", "x-fastest") != "x-fastest":
        raise BagwiseError(f"unsupported voxel order {meta.get('order')!r}")
    flat = np.fromfile(_payload_path(sidecar_path, meta), dtype="<f4")
    if flat.size != int(np.prod(dims)):
        raise BagwiseError("volume payload size does not match dims")
    voxels = flat.reshape(dims[::-1]).transpose(2, 1, 0)
    return Volume(voxels, tuple(meta["spacing_mm"]))


def save_volume(volume: Volume, sidecar_path) -> None:
    sidecar_path = Path(sidecar_path)
    meta = {"dims": list(volume.dims), "spacing_mm": list(volume.spacing),
            "dtype": "f32le", "order": "x-fastest"}
    sidecar_path.write_text(json.dumps(meta, sort_keys=True))
    volume.voxels.transpose(2, 1, 0).astype("<f4").tofile(sidecar_path.with_suffix(".raw"))


def load_mask(sidecar_path) -> Mask:
    meta = json.loads(Path(sidecar_path).read_text())
    dims = tuple(meta["dims"])
    if meta.get("dtype", "u8") != "u8":
        raise BagwiseError(f"unsupported mask dtype {meta.get('dtype')!r}")
    flat = np.fromfile(_payload_path(sidecar_path, meta), dtype=np.uint8)
    if flat.size != int(np.prod(dims)):
        raise BagwiseError("mask payload size does not match dims")
    return Mask(flat.reshape(dims[::-1]).transpose(2, 1, 0))


def save_mask(mask: Mask, sidecar_path) -> None:
    sidecar_path = Path(sidecar_path)
    meta = {"dims": list(mask.voxels.shape), "dtype": "u8", "order": "x-fastest"}
    sidecar_path.write_text(json.dumps(meta, sort_keys=True))
    mask.voxels.transpose(2, 1, 0).astype(np.uint8).tofile(sidecar_path.with_suffix(".raw"))


def save_edges(edges: QuantileEdges, path) -> None:
    payload = {"bins": edges.bins, "channels": list(edges.channel_names),
               "edges": [[float(v) for v in row] for row in edges.edges]}
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_edges(path) -> QuantileEdges:
    payload = json.loads(Path(path).read_text())
    return QuantileEdges(tuple(payload["channels"]),
                         np.asarray(payload["edges"], dtype=float),
                         int(payload["bins"]))
