"""Command-line interface: cluster, generate, evaluate, stats, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    emit_reports,
    load_manifest,
    read_records_csv,
    run_plan,
    summarize,
    write_records_csv,
    write_summary_csv,
)
from .clustering import ClusterModelBank, ClusterSampler, fit_cluster_bank
from .config import load_generation_config
from .generator import generate_training_pair
from .nifti import read_nifti, write_nifti

log = logging.getLogger("segsynth")

_NII_SUFFIXES = (".nii.gz", ".nii")


def _stem(path: Path) -> str:
    name = path.name
    for suffix in _NII_SUFFIXES:
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


def _nifti_files(directory: Path):
    files = [p for p in sorted(directory.iterdir()) if p.name.endswith(_NII_SUFFIXES)]
    if not files:
        raise SystemExit(f"no NIfTI files found in {directory}")
    return files


def _paired_subjects(labels_dir: Path, ct_dir: Path):
    labels = {_stem(p): p for p in _nifti_files(labels_dir)}
    cts = {_stem(p): p for p in _nifti_files(ct_dir)}
    shared = sorted(set(labels) & set(cts))
    if not shared:
        raise SystemExit(
            f"no matching file stems between {labels_dir} and {ct_dir}"
        )
    return [(stem, cts[stem], labels[stem]) for stem in shared]


def _cmd_cluster(args) -> int:
    config = load_generation_config(args.config).clustering
    if args.seed is not None:
        from dataclasses import replace

        config = replace(config, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for stem, ct_path, labels_path in _paired_subjects(
        Path(args.labels_dir), Path(args.ct_dir)
    ):
        ct, _ = read_nifti(ct_path, prefer="scalar")
        labels, _ = read_nifti(labels_path, prefer="labels")
        bank = fit_cluster_bank(ct, labels, config)
        target = out_dir / f"{stem}.clusters.json"
        bank.save(target)
        log.info("wrote %s", target)
    return 0


def _cmd_generate(args) -> int:
    config = load_generation_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    subjects = _paired_subjects(Path(args.labels_dir), Path(args.ct_dir))
    cache_dir = Path(args.cluster_cache) if args.cluster_cache else None

    samplers = {}
    for index in range(args.count):
        stem, ct_path, labels_path = subjects[index % len(subjects)]
        sampler = samplers.get(stem)
        if sampler is None:
            ct, _ = read_nifti(ct_path, prefer="scalar")
            labels, _ = read_nifti(labels_path, prefer="labels")
            bank = None
            if cache_dir is not None:
                bank_path = cache_dir / f"{stem}.clusters.json"
                if bank_path.exists():
                    bank = ClusterModelBank.load(bank_path)
                else:
                    log.warning("no cluster cache for %s, fitting in-process", stem)
            sampler = ClusterSampler(ct, labels, config.clustering, bank=bank)
            samplers[stem] = sampler
        pair_seed = np.random.SeedSequence([args.seed, index]).generate_state(4)
        pair = generate_training_pair(sampler.labels, sampler, config, pair_seed)
        img_path = out_dir / f"pair_{index:06d}_img.nii.gz"
        seg_path = out_dir / f"pair_{index:06d}_seg.nii.gz"
        params_path = out_dir / f"pair_{index:06d}_params.json"
        write_nifti(pair.image, img_path)
        write_nifti(pair.target, seg_path)
        payload = pair.provenance.to_json_dict()
        payload["source"] = stem
        payload["master_seed"] = args.seed
        payload["pair_index"] = index
        params_path.write_text(json.dumps(payload, indent=1, sort_keys=True))
        log.info("wrote %s", img_path)
    return 0


def _cmd_evaluate(args) -> int:
    plan = load_manifest(args.manifest)
    records = run_plan(plan, workers=args.workers)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "records.csv"
    write_records_csv(records, target)
    log.info("wrote %s (%d records)", target, len(records))
    return 0


def _cmd_stats(args) -> int:
    records = read_records_csv(args.records)
    summary = summarize(records, alpha=args.alpha)
    write_summary_csv(summary, args.out)
    log.info("wrote %s (%d rows)", args.out, len(summary.rows))
    return 0


def _cmd_report(args) -> int:
    records = read_records_csv(args.records)
    summary = summarize(records, alpha=args.alpha)
    written = emit_reports(records, summary, args.out_dir)
    for path in written:
        log.info("wrote %s", path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segsynth",
        description="Synthetic training-pair generation and segmentation benchmarking",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="fit and cache per-label intensity mixtures")
    p.add_argument("--ct-dir", required=True, help="directory of CT volumes")
    p.add_argument("--labels-dir", required=True, help="directory of label maps")
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("generate", help="emit synthetic image/label training pairs")
    p.add_argument("--labels-dir", required=True, help="directory of label maps")
    p.add_argument(
        "--ct-dir",
        required=True,
        help="directory of intensity volumes used to partition each label",
    )
    p.add_argument(
        "--cluster-cache",
        default=None,
        help="directory of .clusters.json files from the cluster command",
    )
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="run metrics over a manifest of cases")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("stats", help="summarize an existing records.csv")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("report", help="emit CSV and SVG reports from records")
    p.add_argument("--records", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
