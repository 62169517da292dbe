"""Per-label 1D Gaussian-mixture clustering of CT intensities.

Each label's intensities are split into subclusters by EM so the synthetic
generator can render heterogeneous substructure. Foreground labels draw
their cluster count from one choice set, the background pool from another.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .geometry import GeometryError
from .volume import LabelMap, ScalarVolume

__all__ = [
    "GmmModel",
    "ClusteringConfig",
    "ClusterTable",
    "ClusterEntry",
    "FineCluster",
    "ClusterModelBank",
    "ClusterSampler",
    "InsufficientDataError",
    "fit_gmm_1d",
    "fit_gmm_1d_with_trace",
    "assign_clusters",
    "cluster_labelmap",
    "fit_cluster_bank",
]


class InsufficientDataError(ValueError):
    """Fewer samples than mixture components."""


@dataclass(frozen=True, eq=False)
class GmmModel:
    """A 1D Gaussian mixture: per-component mean, variance and weight."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if not (means.shape == variances.shape == weights.shape) or means.ndim != 1:
            raise ValueError("means, variances and weights must be equal-length 1-D")
        if means.size < 1:
            raise ValueError("a mixture needs at least one component")
        if (variances <= 0).any():
            raise ValueError("variances must be positive")
        if abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        for arr in (means, variances, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "weights", weights)

    @property
    def k(self) -> int:
        return self.means.size


@dataclass(frozen=True)
class ClusteringConfig:
    """Cluster-count choice sets and EM controls."""

    k_foreground_choices: Tuple[int, ...] = (1, 2, 3)
    k_background_choices: Tuple[int, ...] = (3, 4, 5, 6, 7)
    em_tolerance: float = 1e-6
    em_max_iters: int = 100
    variance_floor: float = 1e-4
    seed: int = 0
    # Cap on the number of samples used to *fit* (assignment always runs on
    # every voxel). None fits on everything.
    em_sample_cap: Optional[int] = None
    # Optional floor on background intensities entering the fit, for data
    # where surrounding air should not dominate the background pool.
    background_fit_min_intensity: Optional[float] = None

    def __post_init__(self):
        if not self.k_foreground_choices or not self.k_background_choices:
            raise ValueError("cluster-count choice sets must be non-empty")
        if any(k < 1 for k in self.k_foreground_choices + self.k_background_choices):
            raise ValueError("cluster counts must be >= 1")
        if self.em_tolerance <= 0:
            raise ValueError("em_tolerance must be > 0")
        if self.em_max_iters < 1:
            raise ValueError("em_max_iters must be >= 1")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be > 0")

    def choices_for(self, label: int) -> Tuple[int, ...]:
        pool = self.k_background_choices if label == 0 else self.k_foreground_choices
        return tuple(sorted(pool))


def _log_densities(x: np.ndarray, model_means, model_vars, model_weights) -> np.ndarray:
    # log(pi_k) + log N(x | mu_k, var_k), shape (n, k)
    diff = x[:, None] - model_means[None, :]
    return (
        np.log(model_weights)[None, :]
        - 0.5 * np.log(2.0 * np.pi * model_vars)[None, :]
        - diff * diff / (2.0 * model_vars[None, :])
    )


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    peak = a.max(axis=1, keepdims=True)
    return (peak + np.log(np.exp(a - peak).sum(axis=1, keepdims=True))).ravel()


def fit_gmm_1d_with_trace(
    samples,
    k: int,
    *,
    tolerance: float = 1e-6,
    max_iters: int = 100,
    variance_floor: float = 1e-4,
    seed=None,
    sample_cap: Optional[int] = None,
):
    """EM fit returning (model, per-iteration log-likelihood trace).

    Initialization is deterministic: means at evenly spaced sample quantiles,
    a shared variance of sample variance / k, uniform weights. ``seed`` only
    matters when ``sample_cap`` subsamples the fitting set. The trace is
    non-decreasing; variances are clamped to ``variance_floor``.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise InsufficientDataError("no samples to fit")
    k = int(k)
    if k < 1:
        raise ValueError(f"component count must be >= 1, got {k}")
    if x.size < k:
        raise InsufficientDataError(f"{x.size} samples cannot support {k} components")
    if sample_cap is not None and x.size > sample_cap:
        rng = np.random.default_rng(seed)
        x = x[rng.choice(x.size, size=int(sample_cap), replace=False)]

    quantiles = (2.0 * np.arange(k) + 1.0) / (2.0 * k)
    means = np.quantile(x, quantiles)
    # Identical quantiles (heavily repeated data) collapse components; nudge
    # them apart so EM can still separate what variance remains.
    if np.unique(means).size < k:
        spread = max(x.std(), 1.0)
        means = means + np.linspace(-1e-3, 1e-3, k) * spread
    variances = np.full(k, max(float(x.var()) / k, variance_floor))
    weights = np.full(k, 1.0 / k)

    trace = []
    prev_ll = -np.inf
    for _ in range(max_iters):
        log_wd = _log_densities(x, means, variances, weights)
        log_norm = _logsumexp_rows(log_wd)
        ll = float(log_norm.sum())
        trace.append(ll)
        resp = np.exp(log_wd - log_norm[:, None])
        totals = resp.sum(axis=0)
        live = totals > 1e-12
        new_means = means.copy()
        new_vars = variances.copy()
        new_means[live] = (resp[:, live] * x[:, None]).sum(axis=0) / totals[live]
        diff = x[:, None] - new_means[None, :]
        new_vars[live] = (resp[:, live] * diff[:, live] ** 2).sum(axis=0) / totals[live]
        means = new_means
        variances = np.maximum(new_vars, variance_floor)
        weights = totals / x.size
        weights = weights / weights.sum()
        if np.isfinite(prev_ll) and abs(ll - prev_ll) <= tolerance * max(1.0, abs(prev_ll)):
            break
        prev_ll = ll

    order = np.argsort(means, kind="stable")
    model = GmmModel(means[order], variances[order], weights[order])
    return model, np.asarray(trace)


def fit_gmm_1d(samples, k: int, **kwargs) -> GmmModel:
    """EM fit of a k-component 1D Gaussian mixture (see fit_gmm_1d_with_trace)."""
    model, _ = fit_gmm_1d_with_trace(samples, k, **kwargs)
    return model


def assign_clusters(samples, model: GmmModel) -> np.ndarray:
    """Argmax posterior component per sample; ties break to the lowest index."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        return np.zeros(0, dtype=np.int32)
    log_wd = _log_densities(x, model.means, model.variances, model.weights)
    return log_wd.argmax(axis=1).astype(np.int32)


@dataclass(frozen=True)
class FineCluster:
    fine_id: int
    mean: float
    variance: float
    weight: float


@dataclass(frozen=True)
class ClusterEntry:
    parent: int
    requested_k: int
    clusters: Tuple[FineCluster, ...]

    @property
    def fitted_k(self) -> int:
        return len(self.clusters)


@dataclass(frozen=True)
class ClusterTable:
    """Mapping from original label ids to their fine clusters."""

    entries: Dict[int, ClusterEntry]

    def __post_init__(self):
        seen = set()
        for parent, entry in self.entries.items():
            if not entry.clusters:
                raise ValueError(f"label {parent} maps to no fine clusters")
            for cluster in entry.clusters:
                if cluster.fine_id in seen:
                    raise ValueError(f"fine id {cluster.fine_id} is not unique")
                seen.add(cluster.fine_id)

    def fine_to_parent(self) -> Dict[int, int]:
        return {
            c.fine_id: parent
            for parent, entry in self.entries.items()
            for c in entry.clusters
        }

    def fine_ids(self):
        return sorted(self.fine_to_parent())

    def to_json_dict(self) -> dict:
        return {
            "entries": {
                str(parent): {
                    "requested_k": entry.requested_k,
                    "clusters": [
                        {
                            "fine_id": c.fine_id,
                            "mean": c.mean,
                            "variance": c.variance,
                            "weight": c.weight,
                        }
                        for c in entry.clusters
                    ],
                }
                for parent, entry in self.entries.items()
            }
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ClusterTable":
        entries = {}
        for key, raw in data["entries"].items():
            parent = int(key)
            clusters = tuple(
                FineCluster(
                    fine_id=int(c["fine_id"]),
                    mean=float(c["mean"]),
                    variance=float(c["variance"]),
                    weight=float(c["weight"]),
                )
                for c in raw["clusters"]
            )
            entries[parent] = ClusterEntry(parent, int(raw["requested_k"]), clusters)
        return cls(entries)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ClusterTable":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _label_index(labels: np.ndarray):
    """Flat voxel indices grouped by label: (sorted ids, offsets, order)."""
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_vals = flat[order]
    ids, starts = np.unique(sorted_vals, return_index=True)
    ends = np.append(starts[1:], flat.size)
    return ids, starts, ends, order


def cluster_labelmap(
    ct: ScalarVolume,
    labels: LabelMap,
    config: ClusteringConfig,
    seed=None,
) -> Tuple[LabelMap, ClusterTable]:
    """Subdivide every label of ``labels`` by EM-clustering its CT intensities.

    The cluster count for each label is drawn uniformly from the config's
    choice set (background and foreground sets differ); a label with fewer
    voxels than its draw is fitted with that voxel count instead, which the
    table records via ``requested_k``. Fine ids are consecutive from 0 in
    ascending parent order; the union of fine labels of a parent occupies
    exactly the parent's voxel set.
    """
    if not ct.geometry.approx_equal(labels.geometry):
        raise GeometryError("CT and label map do not share a geometry")
    rng = np.random.default_rng(config.seed if seed is None else seed)

    ids, starts, ends, order = _label_index(labels.labels)
    fine_flat = np.zeros(labels.labels.size, dtype=np.int32)
    ct_flat = ct.values.ravel()
    entries = {}
    next_id = 0
    for pos, parent in enumerate(int(i) for i in ids):
        idx = order[starts[pos] : ends[pos]]
        choices = config.choices_for(parent)
        requested = int(choices[rng.integers(len(choices))])
        k = min(requested, idx.size)
        samples = ct_flat[idx]
        if parent == 0 and config.background_fit_min_intensity is not None:
            kept = samples[samples >= config.background_fit_min_intensity]
            fit_samples = kept if kept.size >= k else samples
        else:
            fit_samples = samples
        model = fit_gmm_1d(
            fit_samples,
            k,
            tolerance=config.em_tolerance,
            max_iters=config.em_max_iters,
            variance_floor=config.variance_floor,
            seed=rng.integers(2**63),
            sample_cap=config.em_sample_cap,
        )
        assignment = assign_clusters(samples, model)
        fine_flat[idx] = next_id + assignment
        clusters = tuple(
            FineCluster(
                fine_id=next_id + comp,
                mean=float(model.means[comp]),
                variance=float(model.variances[comp]),
                weight=float(model.weights[comp]),
            )
            for comp in range(model.k)
        )
        entries[parent] = ClusterEntry(parent, requested, clusters)
        next_id += model.k

    fine = LabelMap(labels.geometry, fine_flat.reshape(labels.labels.shape))
    return fine, ClusterTable(entries)


@dataclass(frozen=True)
class ClusterModelBank:
    """Prefit mixtures per (label, cluster count), cached as JSON.

    Holds the EM fits for every cluster-count choice so generation can skip
    fitting; voxel assignment still needs the intensity volume.
    """

    models: Dict[int, Dict[int, GmmModel]]
    voxel_counts: Dict[int, int] = field(default_factory=dict)

    def model_for(self, label: int, k: int) -> Optional[GmmModel]:
        return self.models.get(label, {}).get(k)

    def to_json_dict(self) -> dict:
        return {
            "labels": {
                str(label): {
                    "voxel_count": self.voxel_counts.get(label, 0),
                    "fits": {
                        str(k): {
                            "means": list(map(float, m.means)),
                            "variances": list(map(float, m.variances)),
                            "weights": list(map(float, m.weights)),
                        }
                        for k, m in fits.items()
                    },
                }
                for label, fits in self.models.items()
            }
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ClusterModelBank":
        models = {}
        counts = {}
        for key, raw in data["labels"].items():
            label = int(key)
            counts[label] = int(raw.get("voxel_count", 0))
            models[label] = {
                int(k): GmmModel(f["means"], f["variances"], f["weights"])
                for k, f in raw["fits"].items()
            }
        return cls(models, counts)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ClusterModelBank":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def fit_cluster_bank(
    ct: ScalarVolume, labels: LabelMap, config: ClusteringConfig
) -> ClusterModelBank:
    """Fit every cluster-count choice for every label once."""
    if not ct.geometry.approx_equal(labels.geometry):
        raise GeometryError("CT and label map do not share a geometry")
    ids, starts, ends, order = _label_index(labels.labels)
    ct_flat = ct.values.ravel()
    models: Dict[int, Dict[int, GmmModel]] = {}
    counts: Dict[int, int] = {}
    for pos, parent in enumerate(int(i) for i in ids):
        idx = order[starts[pos] : ends[pos]]
        samples = ct_flat[idx]
        counts[parent] = idx.size
        fits = {}
        for requested in config.choices_for(parent):
            k = min(requested, idx.size)
            fits[requested] = fit_gmm_1d(
                samples,
                k,
                tolerance=config.em_tolerance,
                max_iters=config.em_max_iters,
                variance_floor=config.variance_floor,
                seed=config.seed,
                sample_cap=config.em_sample_cap,
            )
        models[parent] = fits
    return ClusterModelBank(models, counts)


class ClusterSampler:
    """Draws per-label cluster counts and builds fine partitions for generation.

    Fits (and voxel assignments) are memoized per (label, count), so repeated
    draws across training pairs reuse them; a prefit ClusterModelBank skips
    the EM work entirely. Not thread-safe; use one sampler per worker.
    """

    def __init__(
        self,
        ct: ScalarVolume,
        labels: LabelMap,
        config: ClusteringConfig,
        bank: Optional[ClusterModelBank] = None,
    ):
        if not ct.geometry.approx_equal(labels.geometry):
            raise GeometryError("CT and label map do not share a geometry")
        self.ct = ct
        self.labels = labels
        self.config = config
        self.bank = bank
        ids, starts, ends, order = _label_index(labels.labels)
        self._index = {
            int(ids[pos]): order[starts[pos] : ends[pos]] for pos in range(ids.size)
        }
        self._ct_flat = ct.values.ravel()
        self._models: Dict[Tuple[int, int], GmmModel] = {}
        self._assignments: Dict[Tuple[int, int], np.ndarray] = {}

    @property
    def parents(self):
        return sorted(self._index)

    def draw_counts(self, rng) -> Dict[int, int]:
        """One cluster count per label, drawn uniformly from its choice set."""
        drawn = {}
        for parent in self.parents:
            choices = self.config.choices_for(parent)
            drawn[parent] = int(choices[rng.integers(len(choices))])
        return drawn

    def _model(self, parent: int, requested: int, fit_idx: np.ndarray) -> GmmModel:
        k = min(requested, max(fit_idx.size, 1))
        key = (parent, k)
        model = self._models.get(key)
        if model is None:
            if self.bank is not None:
                model = self.bank.model_for(parent, requested)
                if model is not None and model.k > fit_idx.size:
                    model = None
            if model is None:
                cfg = self.config
                model = fit_gmm_1d(
                    self._ct_flat[fit_idx],
                    k,
                    tolerance=cfg.em_tolerance,
                    max_iters=cfg.em_max_iters,
                    variance_floor=cfg.variance_floor,
                    seed=cfg.seed,
                    sample_cap=cfg.em_sample_cap,
                )
            self._models[key] = model
        return model

    def _assign(self, parent: int, idx: np.ndarray, model: GmmModel, memo_key) -> np.ndarray:
        cached = self._assignments.get(memo_key)
        if cached is None:
            cached = assign_clusters(self._ct_flat[idx], model)
            self._assignments[memo_key] = cached
        return cached

    def fine_partition(self, drawn: Mapping[int, int], removed=()):
        """Fine label map (on the source grid) for one draw of cluster counts.

        ``removed`` labels are folded into the background pool: their voxels
        are assigned under the background mixture. Returns (fine LabelMap,
        fine_id -> parent dict) where parents of removed labels report 0.
        """
        removed = {int(r) for r in removed} & set(self._index)
        fine_flat = np.zeros(self.labels.labels.size, dtype=np.int32)
        fine_parent: Dict[int, int] = {0: 0}
        bg_model = None
        # The background block always starts at fine id 0, so voxels pulled
        # from outside the grid during warping still read as background.
        if 0 in self._index or removed:
            requested = drawn.get(0, self.config.choices_for(0)[0])
            fit_idx = self._index.get(0)
            if fit_idx is None or fit_idx.size == 0:
                fit_idx = np.concatenate([self._index[r] for r in sorted(removed)])
            bg_model = self._model(0, requested, fit_idx)
            for comp in range(bg_model.k):
                fine_parent[comp] = 0
            next_id = bg_model.k
        else:
            next_id = 1
        for parent in self.parents:
            idx = self._index[parent]
            if parent == 0 or parent in removed:
                assignment = self._assign(
                    parent, idx, bg_model, (parent, "bg", bg_model.k)
                )
                fine_flat[idx] = assignment
            else:
                requested = drawn[parent]
                model = self._model(parent, requested, idx)
                assignment = self._assign(parent, idx, model, (parent, model.k))
                for comp in range(model.k):
                    fine_parent[next_id + comp] = parent
                fine_flat[idx] = next_id + assignment
                next_id += model.k
        fine = LabelMap(
            self.labels.geometry, fine_flat.reshape(self.labels.labels.shape)
        )
        return fine, fine_parent
