"""Command-line front end.

Single pair::

    sgmstereo --algo tmgm16 --dmin -70 --dmax 0 left.png right.png out.pfm \\
        --eval disp0GT.pfm --deltas 1,2,3

Batch over a manifest of ``left right gt d_min d_max`` lines::

    sgmstereo batch pairs.txt --algo tsgm8 --out-dir results/ --jobs 2

Disparity ranges are given in the engine convention (the match pixel of
``(x, y)`` is ``(x + d, y)``). Middlebury ground truth uses the opposite sign
and is negated on load unless ``--gt-sign native`` is passed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from sgmstereo.aggregate import PenaltySchedule
from sgmstereo.hierarchy import ALGORITHMS, HierarchyConfig, match_pair, parse_algorithm
from sgmstereo.imgio import load_gray, read_pfm, render_error_mask, write_mask_png, write_pfm
from sgmstereo.metrics import EvalReport, aggregate_reports, evaluate
from sgmstereo.postproc import RefineConfig

log = logging.getLogger("sgmstereo")

THREADS_ENV = "SGMSTEREO_THREADS"


class StageError(RuntimeError):
    """A pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, err: BaseException):
        super().__init__(f"{stage}: {err}")
        self.stage = stage


@dataclass
class RunConfig:
    algo: str
    d_min: int
    d_max: int
    left: str
    right: str
    out: str
    penalties: PenaltySchedule = field(default_factory=PenaltySchedule)
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    refine: Optional[RefineConfig] = None
    gt: Optional[str] = None
    gt_sign: str = "middlebury"
    mask_prefix: Optional[str] = None
    deltas: List[float] = field(default_factory=lambda: [1.0, 2.0, 3.0])
    match_out: Optional[str] = None

    def __post_init__(self):
        parse_algorithm(self.algo)
        if self.d_min > self.d_max:
            raise ValueError(f"--dmin {self.d_min} exceeds --dmax {self.d_max}")
        if self.hierarchy.s < 1:
            raise ValueError("hierarchical variants need s >= 1")
        if self.gt_sign not in ("middlebury", "native"):
            raise ValueError(f"unknown ground-truth sign convention {self.gt_sign!r}")
        if not self.deltas:
            raise ValueError("at least one delta is required")


@dataclass
class RunResult:
    seconds: float
    report: Optional[EvalReport] = None


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as err:  # noqa: BLE001 - re-raised with the stage attached
        raise StageError(name, err) from err


def load_ground_truth(path, sign: str = "middlebury") -> np.ndarray:
    gt = read_pfm(path)
    return -gt if sign == "middlebury" else gt


def run(cfg: RunConfig) -> RunResult:
    """Match one pair, write outputs and optionally evaluate. Raises StageError."""
    left = _stage("load left image", load_gray, cfg.left)
    right = _stage("load right image", load_gray, cfg.right)
    if left.shape != right.shape:
        raise StageError("load images", ValueError(
            f"image sizes differ: {left.shape[::-1]} vs {right.shape[::-1]}"))
    gt = None
    if cfg.gt is not None:
        gt = _stage("load ground truth", load_ground_truth, cfg.gt, cfg.gt_sign)
        if gt.shape != left.shape:
            raise StageError("load ground truth", ValueError(
                f"ground truth is {gt.shape[::-1]}, images are {left.shape[::-1]}"))
    t0 = time.perf_counter()
    d_b, d_m = _stage("matching", match_pair, left, right, cfg.algo, cfg.d_min, cfg.d_max,
                      cfg.penalties, cfg.hierarchy, cfg.refine)
    seconds = time.perf_counter() - t0
    _stage("write disparity", write_pfm, d_b, cfg.out)
    if cfg.match_out:
        _stage("write match disparity", write_pfm, d_m, cfg.match_out)
    report = None
    if gt is not None:
        report = _stage("evaluation", evaluate, d_b, gt, cfg.deltas)
        prefix = cfg.mask_prefix or str(Path(cfg.out).with_suffix(""))
        for d in report.deltas:
            mask = render_error_mask(d_b, gt, d)
            _stage("write error mask", write_mask_png, mask, f"{prefix}_mask_d{d:g}.png")
        stem = Path(cfg.out).with_suffix("")
        _stage("write report", Path(f"{stem}.report.txt").write_text, report.to_text(cfg.out))
        _stage("write report", Path(f"{stem}.metrics.txt").write_text, report.to_records())
    return RunResult(seconds, report)


def _parse_deltas(text: str) -> List[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad delta list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("delta list is empty")
    return vals


def _add_engine_args(p: argparse.ArgumentParser, with_range: bool):
    g = p.add_argument_group("matching")
    g.add_argument("--algo", choices=ALGORITHMS, default="tmgm16")
    if with_range:
        g.add_argument("--dmin", type=int, required=True, help="lowest disparity")
        g.add_argument("--dmax", type=int, required=True, help="highest disparity")
    g.add_argument("--p1", type=float, default=24.0)
    g.add_argument("--p2-edge", type=float, default=27.0, help="P2 on Canny edges")
    g.add_argument("--p2-flat", type=float, default=96.0, help="P2 elsewhere")
    g.add_argument("--scale", "-s", type=int, default=8, help="coarsest pyramid scale")
    g.add_argument("--eps", type=int, default=4, help="bound relaxation per level")
    g.add_argument("--window", type=int, default=7, help="bound propagation window")
    r = p.add_argument_group("refinement (all off by default)")
    r.add_argument("--subpixel", action="store_true")
    r.add_argument("--peak-removal", action="store_true")
    r.add_argument("--peak-min-region", type=int, default=64)
    r.add_argument("--bilateral", nargs=2, type=float, metavar=("SIGMA_S", "SIGMA_R"),
                   help="joint bilateral filter instead of the 3x3 median")
    r.add_argument("--percentile-bounds", action="store_true")
    r.add_argument("--fill-holes", action="store_true")
    r.add_argument("--adaptive-penalties", action="store_true")
    r.add_argument("--refine-all", action="store_true", help="enable every refinement step")
    e = p.add_argument_group("evaluation")
    e.add_argument("--deltas", type=_parse_deltas, default=[1.0, 2.0, 3.0],
                   help="comma-separated bad-pixel thresholds")
    e.add_argument("--gt-sign", choices=("middlebury", "native"), default="middlebury",
                   help="middlebury ground truth is negated on load")
    p.add_argument("-v", "--verbose", action="store_true")


def _engine_settings(ns):
    pen = PenaltySchedule(ns.p1, ns.p2_edge, ns.p2_flat)
    hier = HierarchyConfig(s=ns.scale, eps=ns.eps, window=ns.window)
    if ns.refine_all:
        refine = RefineConfig.full()
    else:
        refine = RefineConfig(
            subpixel=ns.subpixel,
            peak_removal=ns.peak_removal,
            peak_min_region=ns.peak_min_region,
            bilateral=tuple(ns.bilateral) if ns.bilateral else None,
            percentile_bounds=ns.percentile_bounds,
            fill_holes=ns.fill_holes,
            adaptive_penalties=ns.adaptive_penalties,
        )
        if refine == RefineConfig(peak_min_region=ns.peak_min_region):
            refine = None
    return pen, hier, refine


def build_run_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sgmstereo",
        description="Dense stereo matching (SGM, MGM and their hierarchical variants). "
                    "Use 'sgmstereo batch MANIFEST' for many pairs.",
    )
    p.add_argument("left", help="base image (PGM or PNG)")
    p.add_argument("right", help="match image (PGM or PNG)")
    p.add_argument("out", help="output PFM for the base-referenced map")
    _add_engine_args(p, with_range=True)
    p.add_argument("--eval", metavar="GT_PFM", help="ground truth to evaluate against")
    p.add_argument("--mask-prefix", help="prefix for error-mask PNGs (default: output stem)")
    p.add_argument("--match-out", help="also write the match-referenced map here")
    return p


def build_batch_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sgmstereo batch",
        description="Match and evaluate every pair listed in a manifest "
                    "(one 'left right gt d_min d_max' record per line).",
    )
    p.add_argument("manifest")
    _add_engine_args(p, with_range=False)
    p.add_argument("--out-dir", default=".", help="where per-pair PFMs and masks go")
    p.add_argument("--jobs", "-j", type=int, default=1, help="pairs processed concurrently")
    p.add_argument("--report", help="write the aggregate key-value report here")
    return p


@dataclass
class ManifestEntry:
    left: str
    right: str
    gt: str
    d_min: int
    d_max: int
    line: int


def read_manifest(path) -> List[ManifestEntry]:
    """Parse a manifest; relative paths are resolved against its directory."""
    base = Path(path).parent
    entries = []
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{no}: expected 'left right gt d_min d_max', got {raw!r}")
        left, right, gt = (str(base / q) for q in parts[:3])
        entries.append(ManifestEntry(left, right, gt, int(parts[3]), int(parts[4]), no))
    return entries


def _entry_name(k: int, e: ManifestEntry) -> str:
    parent = Path(e.left).parent.name
    return f"{k:03d}_{parent or Path(e.left).stem}"


def _run_entry(args):
    cfg, name = args
    try:
        return name, run(cfg), None
    except StageError as err:
        return name, None, str(err)
    except Exception as err:  # noqa: BLE001 - reported per pair, batch continues
        return name, None, f"setup: {err}"


def batch(ns) -> int:
    try:
        entries = read_manifest(ns.manifest)
    except (OSError, ValueError) as err:
        print(f"sgmstereo: error: manifest: {err}", file=sys.stderr)
        return 2
    if not entries:
        print(f"sgmstereo: error: manifest {ns.manifest} lists no pairs", file=sys.stderr)
        return 2
    pen, hier, refine = _engine_settings(ns)
    out_dir = Path(ns.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for k, e in enumerate(entries):
        name = _entry_name(k, e)
        try:
            cfg = RunConfig(ns.algo, e.d_min, e.d_max, e.left, e.right,
                            str(out_dir / f"{name}.pfm"), pen, hier, refine, gt=e.gt,
                            gt_sign=ns.gt_sign, deltas=ns.deltas)
        except ValueError as err:
            print(f"warning: skipping manifest line {e.line}: {err}", file=sys.stderr)
            continue
        jobs.append((cfg, name))
    if ns.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=ns.jobs) as pool:
            results = list(pool.map(_run_entry, jobs))
    else:
        results = [_run_entry(j) for j in jobs]
    reports = []
    for name, res, err in results:
        if err is not None:
            print(f"warning: skipping {name}: {err}", file=sys.stderr)
            continue
        print(res.report.to_text(name), end="")
        print(f"match_seconds {res.seconds:.3f}\n")
        reports.append(res.report)
    if not reports:
        print("sgmstereo: error: every pair failed", file=sys.stderr)
        return 1
    agg = aggregate_reports(reports)
    print(agg.to_text(f"aggregate over {len(reports)} of {len(entries)} pairs"), end="")
    if ns.report:
        Path(ns.report).write_text(agg.to_records())
    return 0


def _apply_thread_override():
    val = os.environ.get(THREADS_ENV)
    if not val:
        return
    import numba

    n = max(1, min(int(val), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _apply_thread_override()
    except ValueError:
        print(f"sgmstereo: error: {THREADS_ENV} must be an integer", file=sys.stderr)
        return 2
    if argv and argv[0] == "batch":
        ns = build_batch_parser().parse_args(argv[1:])
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        return batch(ns)
    ns = build_run_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        pen, hier, refine = _engine_settings(ns)
        cfg = RunConfig(ns.algo, ns.dmin, ns.dmax, ns.left, ns.right, ns.out, pen, hier,
                        refine, gt=ns.eval, gt_sign=ns.gt_sign, mask_prefix=ns.mask_prefix,
                        deltas=ns.deltas, match_out=ns.match_out)
    except ValueError as err:
        print(f"sgmstereo: error: configuration: {err}", file=sys.stderr)
        return 2
    try:
        res = run(cfg)
    except StageError as err:
        print(f"sgmstereo: error: {err}", file=sys.stderr)
        return 1
    print(f"match_seconds {res.seconds:.3f}")
    if res.report is not None:
        print(res.report.to_text(cfg.out), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
