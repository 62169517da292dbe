"""Manifest-driven evaluation: ingest cases, run metrics, summarize, report.

A manifest is a CSV with header ``dataset,subject,sequence,method,region_map,
gt,pred``; region_map names a TOML file mapping source label ids of both
volumes onto a canonical region vocabulary. Records flow to CSV; summaries
reproduce the mean (std) / best / significance table layout; plots are
standalone SVG.
"""

from __future__ import annotations

import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import GeometryError
from .metrics import BinaryMask, RegionMetrics, dice, hd95, region_volume
from .stats import TestResult, bonferroni, friedman, wilcoxon_signed_rank
from .svgreport import boxplot_svg, repeatability_svg
from .volume import LabelMap, resample

__all__ = [
    "ManifestError",
    "RegionMapping",
    "EvalCase",
    "EvaluationPlan",
    "EvaluationRecord",
    "SummaryRow",
    "SummaryTable",
    "RepeatabilityReport",
    "load_manifest",
    "harmonize_labels",
    "evaluate_case",
    "summarize",
    "repeatability_report",
    "emit_reports",
    "read_records_csv",
    "write_records_csv",
]

log = logging.getLogger("segsynth.bench")

_MANIFEST_COLUMNS = ["dataset", "subject", "sequence", "method", "region_map", "gt", "pred"]

_RECORD_COLUMNS = [
    "dataset",
    "subject",
    "sequence",
    "method",
    "region",
    "dice",
    "hd95_mm",
    "volume_ml",
    "gt_volume_ml",
]


class ManifestError(ValueError):
    """Malformed manifest or region-mapping file."""


@dataclass(frozen=True)
class RegionMapping:
    """Canonical vocabulary plus source-id translations for one case."""

    regions: Dict[str, int]           # canonical region name -> canonical id
    gt_map: Dict[int, int]            # gt source label -> canonical id
    pred_map: Dict[int, int]          # pred source label -> canonical id


def _parse_region_mapping(path: Path) -> RegionMapping:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ManifestError(f"cannot read region map {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ManifestError(f"cannot parse region map {path}: {exc}") from exc
    if "regions" not in data:
        raise ManifestError(f"region map {path} is missing a [regions] table")
    regions = {}
    for name, canon in data["regions"].items():
        if not isinstance(canon, int) or canon <= 0:
            raise ManifestError(
                f"region map {path}: canonical id for {name!r} must be a positive integer"
            )
        regions[str(name)] = canon

    def _translate(section: str) -> Dict[int, int]:
        table = data.get(section, {})
        out = {}
        for key, region in table.items():
            try:
                src = int(key)
            except ValueError:
                raise ManifestError(
                    f"region map {path}: [{section}] key {key!r} is not an integer label"
                ) from None
            if region not in regions:
                raise ManifestError(
                    f"region map {path}: [{section}] label {src} maps to unknown "
                    f"region {region!r}"
                )
            out[src] = regions[region]
        return out

    return RegionMapping(regions=regions, gt_map=_translate("gt"), pred_map=_translate("pred"))


@dataclass(frozen=True)
class EvalCase:
    dataset: str
    subject: str
    sequence: str
    method: str
    gt_path: Path
    pred_path: Path
    mapping: RegionMapping

    @property
    def key(self) -> Tuple[str, str, str, str]:
        return (self.dataset, self.subject, self.sequence, self.method)


@dataclass(frozen=True)
class EvaluationPlan:
    cases: Tuple[EvalCase, ...]
    label_vocabulary: Tuple[str, ...]


def load_manifest(path) -> EvaluationPlan:
    """Parse and validate an evaluation manifest.

    Relative gt/pred/region_map paths resolve against the manifest's
    directory. Duplicate (dataset, subject, sequence, method) keys and
    unreadable mapping files are rejected with the offending line number.
    """
    path = Path(path)
    base = path.parent
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    reader = csv.reader(text.splitlines())
    rows = list(reader)
    if not rows:
        raise ManifestError(f"manifest {path} is empty, expected a header row")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in _MANIFEST_COLUMNS if c not in header]
    if missing:
        raise ManifestError(f"manifest {path} is missing columns: {', '.join(missing)}")
    col = {name: header.index(name) for name in _MANIFEST_COLUMNS}

    mapping_cache: Dict[Path, RegionMapping] = {}
    cases: List[EvalCase] = []
    seen = {}
    vocabulary: List[str] = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise ManifestError(f"manifest line {line_no}: expected {len(header)} fields")
        values = {name: row[col[name]].strip() for name in _MANIFEST_COLUMNS}
        key = (values["dataset"], values["subject"], values["sequence"], values["method"])
        if key in seen:
            raise ManifestError(
                f"manifest line {line_no}: duplicate case key {key} "
                f"(first seen on line {seen[key]})"
            )
        seen[key] = line_no
        map_path = (base / values["region_map"]).resolve()
        if map_path not in mapping_cache:
            try:
                mapping_cache[map_path] = _parse_region_mapping(map_path)
            except ManifestError as exc:
                raise ManifestError(f"manifest line {line_no}: {exc}") from None
        mapping = mapping_cache[map_path]
        for name in mapping.regions:
            if name not in vocabulary:
                vocabulary.append(name)
        cases.append(
            EvalCase(
                dataset=values["dataset"],
                subject=values["subject"],
                sequence=values["sequence"],
                method=values["method"],
                gt_path=(base / values["gt"]).resolve(),
                pred_path=(base / values["pred"]).resolve(),
                mapping=mapping,
            )
        )
    return EvaluationPlan(cases=tuple(cases), label_vocabulary=tuple(vocabulary))


def harmonize_labels(labels: LabelMap, mapping: Mapping[int, int]) -> LabelMap:
    """Rewrite source ids onto canonical ids; unmapped labels become background."""
    if not mapping:
        return LabelMap(labels.geometry, np.zeros_like(labels.labels))
    top = max(int(labels.labels.max()), max(mapping))
    lut = np.zeros(top + 1, dtype=np.int32)
    for src, dst in mapping.items():
        if 0 <= src <= top:
            lut[src] = dst
    return LabelMap(labels.geometry, lut[labels.labels])


@dataclass(frozen=True)
class EvaluationRecord:
    dataset: str
    subject: str
    sequence: str
    method: str
    region: str
    metrics: RegionMetrics

    @property
    def sort_key(self):
        return (self.dataset, self.subject, self.sequence, self.method, self.region)


def evaluate_case(
    gt: LabelMap,
    pred: LabelMap,
    regions: Mapping[str, int],
    *,
    case: Optional[EvalCase] = None,
) -> List[EvaluationRecord]:
    """Per-region Dice / HD95 (mm, on the ground-truth grid) / volumes.

    The prediction is pulled onto the ground-truth grid with nearest-neighbor
    resampling when the geometries differ. Metrics are missing (None) when
    either region mask is empty; volumes are always reported.
    """
    if not pred.geometry.approx_equal(gt.geometry):
        if case is not None:
            log.info("resampling prediction onto ground-truth grid for %s", case.key)
        pred = resample(pred, gt.geometry, mode="nearest")
    spacing = gt.geometry.spacing
    records = []
    meta = case or EvalCase("", "", "", "", Path(""), Path(""), RegionMapping({}, {}, {}))
    for name in sorted(regions):
        canonical = regions[name]
        gt_mask = BinaryMask.from_labelmap(gt, canonical)
        pred_mask = BinaryMask.from_labelmap(pred, canonical)
        gt_vol = region_volume(gt, canonical, spacing)
        pred_vol = region_volume(pred, canonical, spacing)
        if gt_mask.empty or pred_mask.empty:
            metrics = RegionMetrics(None, None, pred_vol, gt_vol)
        else:
            metrics = RegionMetrics(
                dice(gt_mask, pred_mask),
                hd95(gt_mask, pred_mask, spacing),
                pred_vol,
                gt_vol,
            )
        records.append(
            EvaluationRecord(
                dataset=meta.dataset,
                subject=meta.subject,
                sequence=meta.sequence,
                method=meta.method,
                region=name,
                metrics=metrics,
            )
        )
    return records


def run_plan(plan: EvaluationPlan, workers: int = 1) -> List[EvaluationRecord]:
    """Evaluate every case of a plan, in parallel, with deterministic output order."""
    from .nifti import read_nifti

    volume_cache: Dict[Path, LabelMap] = {}

    def _load(path: Path) -> LabelMap:
        cached = volume_cache.get(path)
        if cached is None:
            vol, _ = read_nifti(path, prefer="labels")
            cached = volume_cache[path] = vol
        return cached

    def _one(case: EvalCase) -> List[EvaluationRecord]:
        gt = harmonize_labels(_load(case.gt_path), case.mapping.gt_map)
        pred = harmonize_labels(_load(case.pred_path), case.mapping.pred_map)
        return evaluate_case(gt, pred, case.mapping.regions, case=case)

    records: List[EvaluationRecord] = []
    if workers <= 1:
        for case in plan.cases:
            records.extend(_one(case))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_one, plan.cases):
                records.extend(chunk)
    records.sort(key=lambda r: r.sort_key)
    return records


@dataclass(frozen=True)
class SummaryRow:
    dataset: str
    region: str
    method: str
    n: int
    n_missing_dice: int
    n_missing_hd95: int
    dice_mean: Optional[float]
    dice_std: Optional[float]
    hd95_mean: Optional[float]
    hd95_std: Optional[float]
    dice_best: bool
    dice_significant: bool
    hd95_best: bool
    hd95_significant: bool


@dataclass(frozen=True)
class SummaryTable:
    rows: Tuple[SummaryRow, ...]
    alpha: float


def _mean_std(values: List[float]):
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def _significant_best(
    best: str,
    methods: Sequence[str],
    per_method: Mapping[str, Dict[Tuple[str, str], float]],
    alpha: float,
) -> bool:
    others = [m for m in methods if m != best]
    if not others:
        return False
    p_values = []
    for other in others:
        shared = sorted(set(per_method[best]) & set(per_method[other]))
        if not shared:
            return False
        x = [per_method[best][k] for k in shared]
        y = [per_method[other][k] for k in shared]
        p_values.append(wilcoxon_signed_rank(x, y).p_value)
    return all(sig for _, sig in bonferroni(p_values, alpha))


def summarize(records: Sequence[EvaluationRecord], alpha: float = 0.05) -> SummaryTable:
    """Per (dataset, region, method) means/stds with best flags and markers.

    Best is the highest mean Dice (lowest mean HD95 for the HD95 columns);
    the marker is set only when that method beats every other method in a
    paired Wilcoxon signed-rank test, Bonferroni-corrected over the pairwise
    comparisons, at the given level. Missing metrics are excluded from the
    means and counted.
    """
    groups: Dict[Tuple[str, str], Dict[str, List[EvaluationRecord]]] = {}
    for rec in records:
        groups.setdefault((rec.dataset, rec.region), {}).setdefault(rec.method, []).append(rec)

    rows: List[SummaryRow] = []
    for (dataset, region) in sorted(groups):
        by_method = groups[(dataset, region)]
        methods = sorted(by_method)
        dice_vals: Dict[str, Dict[Tuple[str, str], float]] = {}
        hd_vals: Dict[str, Dict[Tuple[str, str], float]] = {}
        stats: Dict[str, dict] = {}
        for method in methods:
            recs = by_method[method]
            d = {
                (r.subject, r.sequence): r.metrics.dice
                for r in recs
                if r.metrics.dice is not None
            }
            h = {
                (r.subject, r.sequence): r.metrics.hd95_mm
                for r in recs
                if r.metrics.hd95_mm is not None
            }
            dice_vals[method] = d
            hd_vals[method] = h
            dmean, dstd = _mean_std(list(d.values()))
            hmean, hstd = _mean_std(list(h.values()))
            stats[method] = {
                "n": len(recs),
                "miss_d": len(recs) - len(d),
                "miss_h": len(recs) - len(h),
                "dmean": dmean,
                "dstd": dstd,
                "hmean": hmean,
                "hstd": hstd,
            }

        multi = len(methods) >= 2
        with_dice = [m for m in methods if stats[m]["dmean"] is not None]
        with_hd = [m for m in methods if stats[m]["hmean"] is not None]
        best_dice = (
            max(with_dice, key=lambda m: stats[m]["dmean"]) if with_dice else None
        )
        if best_dice is not None and sum(
            1 for m in with_dice if stats[m]["dmean"] == stats[best_dice]["dmean"]
        ) > 1:
            best_dice = None
        best_hd = min(with_hd, key=lambda m: stats[m]["hmean"]) if with_hd else None
        if best_hd is not None and sum(
            1 for m in with_hd if stats[m]["hmean"] == stats[best_hd]["hmean"]
        ) > 1:
            best_hd = None

        sig_dice = (
            _significant_best(best_dice, methods, dice_vals, alpha)
            if multi and best_dice is not None
            else False
        )
        sig_hd = (
            _significant_best(best_hd, methods, hd_vals, alpha)
            if multi and best_hd is not None
            else False
        )
        for method in methods:
            s = stats[method]
            rows.append(
                SummaryRow(
                    dataset=dataset,
                    region=region,
                    method=method,
                    n=s["n"],
                    n_missing_dice=s["miss_d"],
                    n_missing_hd95=s["miss_h"],
                    dice_mean=s["dmean"],
                    dice_std=s["dstd"],
                    hd95_mean=s["hmean"],
                    hd95_std=s["hstd"],
                    dice_best=multi and method == best_dice,
                    dice_significant=multi and method == best_dice and sig_dice,
                    hd95_best=multi and method == best_hd,
                    hd95_significant=multi and method == best_hd and sig_hd,
                )
            )
    return SummaryTable(rows=tuple(rows), alpha=alpha)


@dataclass(frozen=True)
class RepeatabilityReport:
    """Per-subject volume trajectories across sequences plus Friedman results."""

    sequences: Dict[str, Tuple[str, ...]]  # dataset -> sequence order
    # (dataset, region, method, subject) -> per-sequence value or None
    trajectories: Dict[Tuple[str, str, str, str], Tuple[Optional[float], ...]]
    # (dataset, region, method) -> TestResult or None when untestable
    friedman: Dict[Tuple[str, str, str], Optional[TestResult]]


def repeatability_report(
    records: Sequence[EvaluationRecord], value: str = "volume"
) -> RepeatabilityReport:
    """Volume (or Dice) consistency of each method across a dataset's sequences.

    A point is missing when the record is absent or carries no Dice (an empty
    mask on either side). Subjects with any missing sequence are dropped from
    the Friedman test but keep their trajectory, gap included.
    """
    if value not in ("volume", "dice"):
        raise ValueError(f"value must be 'volume' or 'dice', got {value!r}")
    seq_order: Dict[str, List[str]] = {}
    for rec in records:
        seqs = seq_order.setdefault(rec.dataset, [])
        if rec.sequence not in seqs:
            seqs.append(rec.sequence)

    indexed: Dict[Tuple[str, str, str, str, str], EvaluationRecord] = {}
    combos = set()
    for rec in records:
        indexed[(rec.dataset, rec.region, rec.method, rec.subject, rec.sequence)] = rec
        combos.add((rec.dataset, rec.region, rec.method, rec.subject))

    trajectories = {}
    for (dataset, region, method, subject) in sorted(combos):
        vals: List[Optional[float]] = []
        for seq in seq_order[dataset]:
            rec = indexed.get((dataset, region, method, subject, seq))
            if rec is None or rec.metrics.dice is None:
                vals.append(None)
            elif value == "volume":
                vals.append(rec.metrics.volume_ml)
            else:
                vals.append(rec.metrics.dice)
        trajectories[(dataset, region, method, subject)] = tuple(vals)

    tests: Dict[Tuple[str, str, str], Optional[TestResult]] = {}
    for (dataset, region, method) in sorted({(d, r, m) for (d, r, m, _) in combos}):
        k = len(seq_order[dataset])
        complete = [
            vals
            for (d, r, m, _), vals in trajectories.items()
            if (d, r, m) == (dataset, region, method) and all(v is not None for v in vals)
        ]
        if k < 2 or len(complete) < 2:
            tests[(dataset, region, method)] = None
        else:
            tests[(dataset, region, method)] = friedman(np.asarray(complete, dtype=float))
    return RepeatabilityReport(
        sequences={d: tuple(s) for d, s in seq_order.items()},
        trajectories=trajectories,
        friedman=tests,
    )


def _fmt_float(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def _fmt_2f(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.2f}"


def write_records_csv(records: Sequence[EvaluationRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_RECORD_COLUMNS)
        for rec in sorted(records, key=lambda r: r.sort_key):
            writer.writerow(
                [
                    rec.dataset,
                    rec.subject,
                    rec.sequence,
                    rec.method,
                    rec.region,
                    _fmt_float(rec.metrics.dice),
                    _fmt_float(rec.metrics.hd95_mm),
                    _fmt_float(rec.metrics.volume_ml),
                    _fmt_float(rec.metrics.gt_volume_ml),
                ]
            )


def read_records_csv(path) -> List[EvaluationRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in _RECORD_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError(f"records file {path} is missing columns: {missing}")
        for row in reader:
            records.append(
                EvaluationRecord(
                    dataset=row["dataset"],
                    subject=row["subject"],
                    sequence=row["sequence"],
                    method=row["method"],
                    region=row["region"],
                    metrics=RegionMetrics(
                        dice=float(row["dice"]) if row["dice"] else None,
                        hd95_mm=float(row["hd95_mm"]) if row["hd95_mm"] else None,
                        volume_ml=float(row["volume_ml"]) if row["volume_ml"] else 0.0,
                        gt_volume_ml=float(row["gt_volume_ml"]) if row["gt_volume_ml"] else 0.0,
                    ),
                )
            )
    return records


def write_summary_csv(summary: SummaryTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "dataset",
                "region",
                "method",
                "n",
                "n_missing_dice",
                "n_missing_hd95",
                "dice_mean",
                "dice_std",
                "hd95_mean",
                "hd95_std",
                "dice_best",
                "dice_significant",
                "hd95_best",
                "hd95_significant",
            ]
        )
        for row in summary.rows:
            writer.writerow(
                [
                    row.dataset,
                    row.region,
                    row.method,
                    row.n,
                    row.n_missing_dice,
                    row.n_missing_hd95,
                    _fmt_2f(row.dice_mean),
                    _fmt_2f(row.dice_std),
                    _fmt_2f(row.hd95_mean),
                    _fmt_2f(row.hd95_std),
                    int(row.dice_best),
                    int(row.dice_significant),
                    int(row.hd95_best),
                    int(row.hd95_significant),
                ]
            )


def emit_reports(
    records: Sequence[EvaluationRecord], summary: SummaryTable, out_dir
) -> List[Path]:
    """Write records.csv, summary.csv and the SVG charts into ``out_dir``.

    Boxplots are emitted per (metric, dataset) with data; repeatability charts
    per dataset with at least two sequences. Zero records produce the two
    headers-only CSVs and no SVGs. Output is deterministic for identical
    inputs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    records = sorted(records, key=lambda r: r.sort_key)
    records_path = out_dir / "records.csv"
    write_records_csv(records, records_path)
    written.append(records_path)
    summary_path = out_dir / "summary.csv"
    write_summary_csv(summary, summary_path)
    written.append(summary_path)
    if not records:
        return written

    datasets = sorted({r.dataset for r in records})
    for metric, attr in (("dice", "dice"), ("hd95", "hd95_mm")):
        for dataset in datasets:
            regions = sorted({r.region for r in records if r.dataset == dataset})
            methods = sorted({r.method for r in records if r.dataset == dataset})
            groups = []
            for region in regions:
                series = []
                for method in methods:
                    vals = [
                        getattr(r.metrics, attr)
                        for r in records
                        if r.dataset == dataset
                        and r.region == region
                        and r.method == method
                        and getattr(r.metrics, attr) is not None
                    ]
                    series.append((method, vals))
                groups.append((region, series))
            if not any(vals for _, series in groups for _, vals in series):
                continue
            ylabel = "Dice" if metric == "dice" else "HD95 (mm)"
            svg = boxplot_svg(f"{ylabel} on {dataset}", ylabel, groups)
            path = out_dir / f"boxplot_{metric}_{dataset}.svg"
            path.write_text(svg, encoding="utf-8")
            written.append(path)

    report = repeatability_report(records)
    for dataset in datasets:
        seqs = report.sequences.get(dataset, ())
        if len(seqs) < 2:
            continue
        lines_data = []
        for (d, region, method, subject), vals in sorted(report.trajectories.items()):
            if d == dataset and any(v is not None for v in vals):
                lines_data.append((f"{method}/{region}", subject, vals))
        if not lines_data:
            continue
        svg = repeatability_svg(
            f"Volume repeatability on {dataset}", seqs, lines_data
        )
        path = out_dir / f"repeatability_{dataset}.svg"
        path.write_text(svg, encoding="utf-8")
        written.append(path)
    return written
