"""Middlebury-style disparity error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence

import numpy as np


@dataclass
class EvalReport:
    """Percentages are relative to the number of pixels valid in the ground truth."""

    invalid_pct: float
    bad_pct: Dict[float, float]
    total_pct: Dict[float, float]
    avg_err: float
    counted: Dict[str, int] = field(default_factory=dict)

    @property
    def deltas(self) -> List[float]:
        return sorted(self.bad_pct)

    def to_text(self, name: str = "") -> str:
        lines = []
        if name:
            lines.append(f"# {name}")
        lines.append(f"invalid      {self.invalid_pct:8.3f} %")
        for d in self.deltas:
            lines.append(f"bad   >{d:<5g} {self.bad_pct[d]:8.3f} %")
            lines.append(f"total >{d:<5g} {self.total_pct[d]:8.3f} %")
        lines.append(f"avg_err      {self.avg_err:8.4f} px")
        return "\n".join(lines) + "\n"

    def to_records(self) -> str:
        """One ``name delta value`` record per line; delta is '-' when not applicable."""
        rows = [f"invalid_pct - {self.invalid_pct!r}"]
        for d in self.deltas:
            rows.append(f"bad_pct {d:g} {self.bad_pct[d]!r}")
            rows.append(f"total_pct {d:g} {self.total_pct[d]!r}")
        rows.append(f"avg_err - {self.avg_err!r}")
        for k in sorted(self.counted):
            rows.append(f"count_{k} - {self.counted[k]}")
        return "\n".join(rows) + "\n"

    @classmethod
    def from_records(cls, text: str) -> "EvalReport":
        invalid = avg = float("nan")
        bad, total, counted = {}, {}, {}
        for line in text.splitlines():
            if not line.strip():
                continue
            name, delta, value = line.split()
            if name == "invalid_pct":
                invalid = float(value)
            elif name == "avg_err":
                avg = float(value)
            elif name == "bad_pct":
                bad[float(delta)] = float(value)
            elif name == "total_pct":
                total[float(delta)] = float(value)
            elif name.startswith("count_"):
                counted[name[len("count_"):]] = int(value)
            else:
                raise ValueError(f"unknown metric record {name!r}")
        return cls(invalid, bad, total, avg, counted)


def evaluate(est: np.ndarray, gt: np.ndarray, deltas: Sequence[float] = (1, 2, 3)) -> EvalReport:
    """Invalid, bad(delta), total(delta) and average error of ``est`` against ``gt``.

    Bad pixels exclude pixels already counted as invalid, so
    ``total = invalid + bad`` exactly. The threshold is strict (``> delta``).
    """
    if est.shape != gt.shape:
        raise ValueError(f"shape mismatch: estimate {est.shape} vs ground truth {gt.shape}")
    deltas = list(deltas)
    if not deltas:
        raise ValueError("at least one delta is required")
    gt_ok = np.isfinite(gt)
    n_gt = int(gt_ok.sum())
    if n_gt == 0:
        raise ValueError("ground truth has no valid pixels")
    est_ok = np.isfinite(est)
    both = gt_ok & est_ok
    n_invalid = int((gt_ok & ~est_ok).sum())
    err = np.abs(est[both].astype(np.float64) - gt[both].astype(np.float64))
    invalid_pct = 100.0 * n_invalid / n_gt
    bad, total = {}, {}
    counted = {"gt_valid": n_gt, "invalid": n_invalid, "both_valid": int(both.sum())}
    for d in deltas:
        n_bad = int((err > d).sum())
        bad[float(d)] = 100.0 * n_bad / n_gt
        total[float(d)] = invalid_pct + bad[float(d)]
        counted[f"bad_{d:g}"] = n_bad
    avg = float(err.mean()) if err.size else float("nan")
    return EvalReport(invalid_pct, bad, total, avg, counted)


def aggregate_reports(reports: Iterable[EvalReport]) -> EvalReport:
    """Unweighted mean of every metric across image pairs."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    deltas = reports[0].deltas
    for r in reports[1:]:
        if r.deltas != deltas:
            raise ValueError("reports use different delta sets")
    mean = lambda xs: float(np.mean(xs))  # noqa: E731
    counted = {}
    for key in reports[0].counted:
        counted[key] = int(sum(r.counted.get(key, 0) for r in reports))
    invalid = mean([r.invalid_pct for r in reports])
    bad = {d: mean([r.bad_pct[d] for r in reports]) for d in deltas}
    return EvalReport(
        invalid_pct=invalid,
        bad_pct=bad,
        total_pct={d: invalid + bad[d] for d in deltas},
        avg_err=mean([r.avg_err for r in reports]),
        counted=counted,
    )
