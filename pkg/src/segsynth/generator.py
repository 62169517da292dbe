"""Randomized synthesis of training pairs from label maps.

One pair: optionally drop the arm labels, crop/pad onto the canonical grid,
deform labels with a random affine plus a smooth random displacement, render
intensities from a per-fine-label Gaussian draw, then corrupt with a bias
field, gamma contrast, noise, and a slice-resolution simulation. Every
random quantity is drawn from one seeded stream and recorded.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from . import backend
from .clustering import ClusteringConfig, ClusterSampler
from .geometry import Geometry, GeometryError
from .volume import LabelMap, ScalarVolume, center_crop_pad, resample

__all__ = [
    "GenerationConfig",
    "DrawnParams",
    "TrainingPair",
    "remove_arms",
    "sample_spatial_transform",
    "warp_labels",
    "synthesize_intensities",
    "apply_bias_field",
    "apply_gamma_contrast",
    "apply_noise",
    "simulate_resolution",
    "generate_training_pair",
    "upsample_control_grid",
]

# Gaussian PSF factor for the slice-resolution model: (2/pi) * sqrt(2 ln 2).
_PSF_FACTOR = 2.0 / np.pi * np.sqrt(2.0 * np.log(2.0))


@dataclass(frozen=True)
class GenerationConfig:
    """Randomization ranges for the synthesis pipeline.

    Intensity ranges are in pre-normalization units; spatial ranges are per
    axis. A range (lo, hi) is sampled uniformly; scalar entries r denote the
    symmetric range (-r, r) or (0, r) as documented per field.
    """

    gmm_mean_range: Tuple[float, float] = (0.0, 255.0)
    gmm_std_range: Tuple[float, float] = (0.0, 35.0)
    rotation_range: float = 15.0          # degrees, per axis in (-r, r)
    scale_range: Tuple[float, float] = (0.85, 1.15)
    shear_range: float = 0.012            # per axis pair in (-r, r)
    translation_range: float = 20.0       # voxels, per axis in (-r, r)
    deformation_grid: int = 10            # control points per axis
    deformation_std_max: float = 4.0      # voxels; std drawn in (0, max)
    bias_grid: int = 4
    bias_std_max: float = 0.5             # log-intensity
    gamma_log_std: float = 0.25
    noise_std_max: float = 0.08           # normalized intensity
    slice_spacing_max: float = 9.0        # mm
    arm_removal_probability: float = 0.5
    arm_label_ids: Tuple[int, ...] = ()
    target_shape: Tuple[int, int, int] = (300, 300, 250)
    target_spacing: Tuple[float, float, float] = (1.5, 1.5, 1.5)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)

    def __post_init__(self):
        for name in ("gmm_mean_range", "gmm_std_range", "scale_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is not well ordered: ({lo}, {hi})")
        for name in (
            "rotation_range",
            "shear_range",
            "translation_range",
            "deformation_std_max",
            "bias_std_max",
            "gamma_log_std",
            "noise_std_max",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.arm_removal_probability <= 1.0:
            raise ValueError("arm_removal_probability must be in [0, 1]")
        if any(s <= 0 for s in self.target_spacing):
            raise ValueError("target_spacing must be positive")
        if any(s < 1 for s in self.target_shape):
            raise ValueError("target_shape must be positive")
        if self.deformation_grid < 2 or self.bias_grid < 2:
            raise ValueError("control grids need at least 2 points per axis")
        if self.slice_spacing_max <= 0:
            raise ValueError("slice_spacing_max must be > 0")


@dataclass(frozen=True)
class DrawnParams:
    """One concrete draw of every generation range, kept for provenance."""

    seed: object
    arms_removed: bool
    cluster_counts: Dict[int, int]
    rotation_deg: Tuple[float, float, float]
    scale: Tuple[float, float, float]
    shear: Tuple[float, float, float]
    translation_vox: Tuple[float, float, float]
    deformation_std: float
    bias_std: float
    gamma_log: float
    noise_std: float
    resolution_axis: int
    resolution_spacing: float
    component_means: Dict[int, float]
    component_stds: Dict[int, float]

    def validate_against(self, config: GenerationConfig) -> None:
        """Raise if any drawn value escaped its configured interval."""
        def _in(val, lo, hi, what):
            if not (lo - 1e-12 <= val <= hi + 1e-12):
                raise ValueError(f"{what} = {val} outside [{lo}, {hi}]")

        for v in self.rotation_deg:
            _in(v, -config.rotation_range, config.rotation_range, "rotation")
        for v in self.scale:
            _in(v, *config.scale_range, "scale")
        for v in self.shear:
            _in(v, -config.shear_range, config.shear_range, "shear")
        for v in self.translation_vox:
            _in(v, -config.translation_range, config.translation_range, "translation")
        _in(self.deformation_std, 0.0, config.deformation_std_max, "deformation std")
        _in(self.bias_std, 0.0, config.bias_std_max, "bias std")
        _in(self.noise_std, 0.0, config.noise_std_max, "noise std")
        if self.resolution_axis not in (0, 1, 2):
            raise ValueError(f"resolution axis {self.resolution_axis}")
        _in(
            self.resolution_spacing,
            min(config.target_spacing),
            max(config.slice_spacing_max, max(config.target_spacing)),
            "resolution spacing",
        )
        for mu in self.component_means.values():
            _in(mu, *config.gmm_mean_range, "component mean")
        for sd in self.component_stds.values():
            _in(sd, *config.gmm_std_range, "component std")
        for label, k in self.cluster_counts.items():
            choices = config.clustering.choices_for(label)
            if k not in choices:
                raise ValueError(f"cluster count {k} for label {label} not in {choices}")

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "arms_removed": self.arms_removed,
            "cluster_counts": {str(k): v for k, v in self.cluster_counts.items()},
            "rotation_deg": list(self.rotation_deg),
            "scale": list(self.scale),
            "shear": list(self.shear),
            "translation_vox": list(self.translation_vox),
            "deformation_std": self.deformation_std,
            "bias_std": self.bias_std,
            "gamma_log": self.gamma_log,
            "noise_std": self.noise_std,
            "resolution_axis": self.resolution_axis,
            "resolution_spacing": self.resolution_spacing,
            "component_means": {str(k): v for k, v in self.component_means.items()},
            "component_stds": {str(k): v for k, v in self.component_stds.items()},
        }


@dataclass(frozen=True, eq=False)
class TrainingPair:
    """Synthetic image in [0, 1] plus the identically deformed coarse labels."""

    image: ScalarVolume
    target: LabelMap
    provenance: DrawnParams

    def __post_init__(self):
        if not self.image.geometry.approx_equal(self.target.geometry):
            raise GeometryError("image and target do not share a geometry")


def remove_arms(labels: LabelMap, arm_label_ids, rng, probability: float = 0.5) -> LabelMap:
    """With the given probability, relabel all arm-region voxels to background."""
    arm_label_ids = tuple(int(i) for i in arm_label_ids)
    coin = rng.random()
    if not arm_label_ids or coin >= probability:
        return labels
    out = np.array(labels.labels)
    out[np.isin(out, arm_label_ids)] = 0
    return LabelMap(labels.geometry, out)


def upsample_control_grid(ctrl: np.ndarray, out_shape) -> np.ndarray:
    """Trilinearly stretch a small control grid across ``out_shape``.

    Control points sit at the grid corners: voxel v maps to control
    coordinate v * (g - 1) / (n - 1) per axis.
    """
    ctrl = np.ascontiguousarray(ctrl)
    out_shape = tuple(int(s) for s in out_shape)
    mat = np.zeros((3, 3), dtype=np.float64)
    for axis in range(3):
        g, n = ctrl.shape[axis], out_shape[axis]
        mat[axis, axis] = 0.0 if n <= 1 else (g - 1) / (n - 1)
    off = np.zeros(3, dtype=np.float64)
    return backend.pull_affine_linear(ctrl, mat, off, out_shape)


def _affine_matrix(rotation_deg, scale, shear) -> np.ndarray:
    rx, ry, rz = np.deg2rad(rotation_deg)
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    shear_m = np.array(
        [[1.0, shear[0], shear[1]], [0.0, 1.0, shear[2]], [0.0, 0.0, 1.0]]
    )
    return rot_x @ rot_y @ rot_z @ shear_m @ np.diag(scale)


def _displacement_field(
    shape, rotation_deg, scale, shear, translation, ctrl: Optional[np.ndarray]
) -> np.ndarray:
    """Dense pullback displacement (3, *shape) float32, in voxels."""
    shape = tuple(int(s) for s in shape)
    mat = _affine_matrix(rotation_deg, scale, shear)
    center = (np.asarray(shape, dtype=np.float64) - 1.0) / 2.0
    offset = center - mat @ center + np.asarray(translation, dtype=np.float64)

    field = np.empty((3,) + shape, dtype=np.float32)
    ii = np.arange(shape[0], dtype=np.float32).reshape(-1, 1, 1)
    jj = np.arange(shape[1], dtype=np.float32).reshape(1, -1, 1)
    kk = np.arange(shape[2], dtype=np.float32).reshape(1, 1, -1)
    for axis in range(3):
        m = mat[axis].astype(np.float32)
        field[axis] = (
            (m[0] - (1.0 if axis == 0 else 0.0)) * ii
            + (m[1] - (1.0 if axis == 1 else 0.0)) * jj
            + (m[2] - (1.0 if axis == 2 else 0.0)) * kk
            + np.float32(offset[axis])
        )
        if ctrl is not None:
            field[axis] += upsample_control_grid(
                ctrl[axis].astype(np.float32), shape
            )
    return field


def sample_spatial_transform(shape, config: GenerationConfig, rng) -> np.ndarray:
    """Random dense displacement field (3, *shape) in voxels.

    The field composes an affine (rotation, scale, shear about the volume
    center, plus translation) with a smooth displacement interpolated from a
    coarse control grid of per-axis Gaussian values.
    """
    draw = _draw_spatial(config, rng)
    rotation, scale, shear, translation, deform_std, ctrl = draw
    return _displacement_field(shape, rotation, scale, shear, translation, ctrl)


def _draw_spatial(config: GenerationConfig, rng):
    r = config.rotation_range
    rotation = tuple(rng.uniform(-r, r, 3))
    scale = tuple(rng.uniform(config.scale_range[0], config.scale_range[1], 3))
    s = config.shear_range
    shear = tuple(rng.uniform(-s, s, 3))
    t = config.translation_range
    translation = tuple(rng.uniform(-t, t, 3))
    deform_std = float(rng.uniform(0.0, config.deformation_std_max))
    g = config.deformation_grid
    ctrl = rng.normal(0.0, deform_std, size=(3, g, g, g)) if deform_std > 0 else None
    if ctrl is None:
        ctrl = np.zeros((3, g, g, g))
    return rotation, scale, shear, translation, deform_std, ctrl


def warp_labels(labels: LabelMap, displacement: np.ndarray) -> LabelMap:
    """Nearest-neighbor pullback of a label map through a displacement field."""
    displacement = np.asarray(displacement)
    if displacement.shape != (3,) + labels.geometry.shape:
        raise GeometryError(
            f"field shape {displacement.shape} does not match labels "
            f"{(3,) + labels.geometry.shape}"
        )
    dx = np.ascontiguousarray(displacement[0])
    dy = np.ascontiguousarray(displacement[1])
    dz = np.ascontiguousarray(displacement[2])
    pulled = backend.pull_field_nearest(labels.labels, dx, dy, dz)
    return LabelMap(labels.geometry, pulled)


def synthesize_intensities(
    fine: LabelMap, per_label_gmm: Mapping[int, Tuple[float, float]], rng
) -> ScalarVolume:
    """Draw each voxel independently from N(mu, sigma^2) of its fine label."""
    top = int(fine.labels.max())
    counts = np.bincount(fine.labels.ravel(), minlength=top + 1)
    present = np.nonzero(counts)[0]
    missing = [int(p) for p in present if int(p) not in per_label_gmm]
    if missing:
        raise ValueError(f"no (mean, std) entry for fine labels {missing}")
    mu_lut = np.zeros(top + 1, dtype=np.float32)
    sd_lut = np.zeros(top + 1, dtype=np.float32)
    for label in present:
        mu, sd = per_label_gmm[int(label)]
        mu_lut[label] = mu
        sd_lut[label] = sd
    values = rng.standard_normal(fine.labels.shape, dtype=np.float32)
    np.multiply(values, sd_lut[fine.labels], out=values)
    values += mu_lut[fine.labels]
    return ScalarVolume(fine.geometry, values)


def _bias_multiplier(shape, ctrl: np.ndarray) -> np.ndarray:
    return np.exp(upsample_control_grid(ctrl.astype(np.float32), shape))


def apply_bias_field(image: ScalarVolume, config: GenerationConfig, rng) -> ScalarVolume:
    """Multiply by a smooth, strictly positive field exp(upsampled noise)."""
    std = float(rng.uniform(0.0, config.bias_std_max))
    g = config.bias_grid
    ctrl = rng.normal(0.0, std, size=(g, g, g)) if std > 0 else np.zeros((g, g, g))
    mult = _bias_multiplier(image.geometry.shape, ctrl)
    return ScalarVolume(image.geometry, image.values * mult)


def _minmax_normalize(values: np.ndarray):
    lo = float(values.min())
    hi = float(values.max())
    if hi <= lo:
        return None
    out = values - lo
    out /= np.asarray(hi - lo, dtype=out.dtype)
    return out


def _apply_gamma(image: ScalarVolume, gamma_log: float) -> ScalarVolume:
    normalized = _minmax_normalize(image.values)
    if normalized is None:
        warnings.warn("gamma contrast on a constant image yields all zeros")
        return ScalarVolume(image.geometry, np.zeros_like(image.values))
    exponent = np.exp(gamma_log)
    return ScalarVolume(image.geometry, normalized**np.float32(exponent))


def apply_gamma_contrast(image: ScalarVolume, config: GenerationConfig, rng) -> ScalarVolume:
    """Min-max normalize to [0, 1] and raise to exp(g), g ~ N(0, gamma_log_std^2)."""
    gamma_log = float(rng.normal(0.0, config.gamma_log_std)) if config.gamma_log_std > 0 else 0.0
    return _apply_gamma(image, gamma_log)


def _apply_noise(image: ScalarVolume, std: float, rng) -> ScalarVolume:
    if std > 0:
        values = rng.standard_normal(image.values.shape, dtype=np.float32)
        np.multiply(values, np.float32(std), out=values)
        values += image.values
        np.clip(values, 0.0, 1.0, out=values)
    else:
        values = np.clip(image.values, 0.0, 1.0)
    return ScalarVolume(image.geometry, values)


def apply_noise(image: ScalarVolume, config: GenerationConfig, rng) -> ScalarVolume:
    """Additive Gaussian noise with std drawn in (0, max), re-clamped to [0, 1]."""
    std = float(rng.uniform(0.0, config.noise_std_max))
    return _apply_noise(image, std, rng)


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _blur_axis(values: np.ndarray, sigma: float, axis: int) -> np.ndarray:
    if sigma <= 0:
        return values
    kernel = _gaussian_kernel(sigma)
    moved = np.ascontiguousarray(np.moveaxis(values, axis, 2))
    rows = backend.blur_rows_replicate(moved.reshape(-1, moved.shape[2]), kernel)
    return np.ascontiguousarray(np.moveaxis(rows.reshape(moved.shape), 2, axis))


def _simulate_resolution(image: ScalarVolume, axis: int, spacing_mm: float) -> ScalarVolume:
    geom = image.geometry
    current = geom.spacing[axis]
    ratio = spacing_mm / current
    if ratio <= 1.0 + 1e-9:
        return ScalarVolume(geom, np.array(image.values))
    sigma_vox = _PSF_FACTOR * ratio
    blurred = ScalarVolume(geom, _blur_axis(image.values, sigma_vox, axis))

    # Keep low-grid voxel centers inside the source hull, then pad one
    # replicated slice so the pull back up never reads outside and bleeds
    # zeros into the boundary.
    n_low = max(1, int(np.floor((geom.shape[axis] - 1) / ratio)) + 1)
    low_shape = list(geom.shape)
    low_shape[axis] = n_low
    low_affine = np.array(geom.affine)
    low_affine[:3, axis] *= ratio
    low_spacing = list(geom.spacing)
    low_spacing[axis] = spacing_mm
    low_geom = Geometry(tuple(low_shape), tuple(low_spacing), low_affine)

    low = resample(blurred, low_geom, mode="trilinear")
    edge = [slice(None)] * 3
    edge[axis] = slice(n_low - 1, n_low)
    padded_vals = np.concatenate([low.values, low.values[tuple(edge)]], axis=axis)
    low_shape[axis] = n_low + 1
    padded = ScalarVolume(Geometry(tuple(low_shape), low_geom.spacing, low_affine), padded_vals)
    return resample(padded, geom, mode="trilinear")


def simulate_resolution(image: ScalarVolume, config: GenerationConfig, rng) -> ScalarVolume:
    """Blur/downsample/upsample along one random axis to mimic thick slices.

    The blur std is the PSF-matched (2/pi)*sqrt(2 ln 2) times the spacing
    ratio, in source voxels. A drawn spacing at (or below) the current one
    leaves the image untouched.
    """
    axis = int(rng.integers(3))
    current = image.geometry.spacing[axis]
    spacing = float(rng.uniform(current, max(config.slice_spacing_max, current)))
    return _simulate_resolution(image, axis, spacing)


def _as_sampler(cluster_source, config: GenerationConfig) -> ClusterSampler:
    if isinstance(cluster_source, ClusterSampler):
        return cluster_source
    if isinstance(cluster_source, tuple) and len(cluster_source) in (2, 3):
        ct, labels = cluster_source[0], cluster_source[1]
        bank = cluster_source[2] if len(cluster_source) == 3 else None
        return ClusterSampler(ct, labels, config.clustering, bank=bank)
    raise TypeError(
        "cluster_source must be a ClusterSampler or a (ct, labels[, bank]) tuple"
    )


def generate_training_pair(
    coarse_labels: LabelMap,
    cluster_source,
    config: GenerationConfig,
    seed,
) -> TrainingPair:
    """Produce one (image, target) pair, fully determined by (inputs, config, seed).

    Stage order: arm removal, crop/pad to the canonical grid, spatial
    deformation of the labels, fine-label selection with a fresh cluster-count
    draw, Gaussian synthesis, bias field, gamma contrast, noise, resolution
    simulation, final min-max rescale.
    """
    sampler = _as_sampler(cluster_source, config)
    rng = np.random.default_rng(seed)

    # Draw everything up front, in a fixed order, so provenance is complete
    # before any heavy work starts.
    arm_coin = rng.random()
    arms_removed = bool(config.arm_label_ids) and arm_coin < config.arm_removal_probability
    cluster_counts = sampler.draw_counts(rng)
    rotation, scale, shear, translation, deform_std, deform_ctrl = _draw_spatial(config, rng)

    removed = set(config.arm_label_ids) if arms_removed else set()
    fine0, fine_parent = sampler.fine_partition(cluster_counts, removed=removed)
    n_fine = max(fine_parent) + 1 if fine_parent else 1
    means = rng.uniform(config.gmm_mean_range[0], config.gmm_mean_range[1], n_fine)
    stds = rng.uniform(config.gmm_std_range[0], config.gmm_std_range[1], n_fine)
    bias_std = float(rng.uniform(0.0, config.bias_std_max))
    g = config.bias_grid
    bias_ctrl = (
        rng.normal(0.0, bias_std, size=(g, g, g)) if bias_std > 0 else np.zeros((g, g, g))
    )
    gamma_log = (
        float(rng.normal(0.0, config.gamma_log_std)) if config.gamma_log_std > 0 else 0.0
    )
    noise_std = float(rng.uniform(0.0, config.noise_std_max))
    res_axis = int(rng.integers(3))

    # The deformed coarse target is recovered from the deformed fine map via
    # the fine -> parent table (arm removal included), so only the fine map
    # travels through the spatial stages.
    parent_lut = np.zeros(max(fine_parent) + 1, dtype=np.int32)
    for fid, parent in fine_parent.items():
        parent_lut[fid] = parent

    # Align spacing with the canonical grid before cropping when needed.
    target_spacing = config.target_spacing
    src = fine0.geometry
    if not np.allclose(src.spacing, target_spacing, rtol=1e-6):
        scale_fix = np.asarray(target_spacing) / np.asarray(src.spacing)
        shape_fix = tuple(
            max(1, int(round(src.shape[a] / scale_fix[a]))) for a in range(3)
        )
        affine_fix = np.array(src.affine)
        affine_fix[:3, :3] = affine_fix[:3, :3] * scale_fix
        inter = Geometry(shape_fix, target_spacing, affine_fix)
        fine0 = resample(fine0, inter, mode="nearest")

    fine1 = center_crop_pad(fine0, config.target_shape)

    res_spacing = float(
        rng.uniform(
            fine1.geometry.spacing[res_axis],
            max(config.slice_spacing_max, fine1.geometry.spacing[res_axis]),
        )
    )

    params = DrawnParams(
        seed=seed if isinstance(seed, (int, type(None))) else [int(s) for s in np.atleast_1d(seed)],
        arms_removed=arms_removed,
        cluster_counts=cluster_counts,
        rotation_deg=rotation,
        scale=scale,
        shear=shear,
        translation_vox=translation,
        deformation_std=deform_std,
        bias_std=bias_std,
        gamma_log=gamma_log,
        noise_std=noise_std,
        resolution_axis=res_axis,
        resolution_spacing=res_spacing,
        component_means={f: float(means[f]) for f in sorted(fine_parent)},
        component_stds={f: float(stds[f]) for f in sorted(fine_parent)},
    )
    params.validate_against(config)

    field = _displacement_field(
        config.target_shape, rotation, scale, shear, translation, deform_ctrl
    )
    fine2 = warp_labels(fine1, field)
    del field, fine1
    target = LabelMap(fine2.geometry, parent_lut[fine2.labels])

    per_label = {f: (params.component_means[f], params.component_stds[f]) for f in fine_parent}
    image = synthesize_intensities(fine2, per_label, rng)
    del fine2

    mult = _bias_multiplier(image.geometry.shape, bias_ctrl)
    image = ScalarVolume(image.geometry, image.values * mult)
    del mult
    image = _apply_gamma(image, gamma_log)
    image = _apply_noise(image, noise_std, rng)
    image = _simulate_resolution(image, res_axis, res_spacing)

    final = _minmax_normalize(image.values)
    if final is None:
        final = np.zeros_like(image.values)
    image = ScalarVolume(image.geometry, final.astype(np.float32))
    return TrainingPair(image=image, target=target, provenance=params)
