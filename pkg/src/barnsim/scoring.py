"""BARN navigation metric: per-trial score, optimal time and suite aggregation."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

PLATFORM_MAX_SPEED = 2.0
CLIP_LOW = 4.0
CLIP_HIGH = 8.0
SCORE_UPPER = 1.0 / CLIP_LOW

CSV_COLUMNS = ("env_id", "seed", "outcome", "AT", "OT", "score")


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    COLLISION = "collision"
    TIMEOUT = "timeout"
    ERROR = "error"  # planner/controller fault; scored as a failure


def optimal_time(path_length: float, max_speed: float = PLATFORM_MAX_SPEED) -> float:
    if not path_length > 0 or not max_speed > 0:
        raise ValueError("path_length and max_speed must be positive")
    return path_length / max_speed


def score_trial(outcome, at: float, ot: float, clip_low: float = CLIP_LOW, clip_high: float = CLIP_HIGH) -> float:
    """``1[success] * OT / clip(AT, clip_low*OT, clip_high*OT)``."""
    if not at > 0 or not ot > 0:
        raise ValueError("AT and OT must be positive")
    if Outcome(outcome) is not Outcome.SUCCESS:
        return 0.0
    return ot / min(max(at, clip_low * ot), clip_high * ot)


@dataclass(frozen=True)
class TrialRecord:
    env_id: int
    seed: int
    outcome: Outcome
    AT: float
    OT: float
    score: float
    trial_index: int = 0
    diagnostic: str = ""

    @classmethod
    def scored(cls, env_id, seed, outcome, at, ot, trial_index=0, diagnostic="", clip_low=CLIP_LOW, clip_high=CLIP_HIGH):
        outcome = Outcome(outcome)
        # AT may be 0 for an immediate collision; the score is 0 either way
        s = score_trial(outcome, at, ot, clip_low, clip_high) if at > 0 else 0.0
        return cls(env_id, seed, outcome, at, ot, s, trial_index, diagnostic)

    @property
    def success(self) -> bool:
        return self.outcome is Outcome.SUCCESS


@dataclass
class SuiteReport:
    records: list[TrialRecord]
    per_env: dict[int, float]
    overall: float
    success_rate: float
    at_percentiles: dict[str, float]
    outcome_counts: dict[str, int]
    complete: bool = True
    missing: list[tuple[int, int]] = field(default_factory=list)
    skipped_envs: dict[int, str] = field(default_factory=dict)

    def csv_text(self) -> str:
        return records_to_csv(self.records)

    def summary(self) -> dict:
        return {
            "overall_score": _fmt(self.overall),
            "success_rate": _fmt(self.success_rate),
            "trials": len(self.records),
            "outcomes": dict(sorted(self.outcome_counts.items())),
            "per_env_mean": {str(k): _fmt(v) for k, v in sorted(self.per_env.items())},
            "at_percentiles": {k: _fmt(v) for k, v in self.at_percentiles.items()},
            "complete": self.complete,
            "missing": [list(m) for m in self.missing],
            "skipped_envs": {str(k): v for k, v in sorted(self.skipped_envs.items())},
        }

    def summary_text(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "results.csv"
        sum_path = out / "summary.json"
        csv_path.write_text(self.csv_text(), encoding="utf-8")
        sum_path.write_text(self.summary_text(), encoding="utf-8")
        return csv_path, sum_path


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def aggregate(
    records: Iterable[TrialRecord],
    layout: Mapping[int, int] | Sequence[int] | None = None,
    skipped_envs: Mapping[int, str] | None = None,
) -> SuiteReport:
    """Unweighted mean over trials plus per-environment means and coverage flags.

    ``layout`` maps env_id -> expected trial count (a sequence of env ids means
    one trial each is not assumed; pass a mapping for the usual 10 per env).
    """
    recs = sorted(records, key=lambda r: (r.env_id, r.trial_index))
    scores = [r.score for r in recs]
    overall = math.fsum(scores) / len(scores) if scores else 0.0
    per_env: dict[int, list[float]] = {}
    for r in recs:
        per_env.setdefault(r.env_id, []).append(r.score)
    per_env_mean = {k: math.fsum(v) / len(v) for k, v in per_env.items()}
    success = sum(r.success for r in recs) / len(recs) if recs else 0.0
    counts: dict[str, int] = {}
    for r in recs:
        counts[r.outcome.value] = counts.get(r.outcome.value, 0) + 1
    ats = np.array([r.AT for r in recs]) if recs else np.zeros(1)
    pct = {f"p{q}": float(np.percentile(ats, q)) for q in (50, 90, 100)}

    missing: list[tuple[int, int]] = []
    if layout is not None:
        expected = dict(layout) if isinstance(layout, Mapping) else {e: 1 for e in layout}
        seen = {(r.env_id, r.trial_index) for r in recs}
        for env_id, n in sorted(expected.items()):
            for i in range(n):
                if (env_id, i) not in seen:
                    missing.append((env_id, i))
    skipped = dict(skipped_envs or {})
    return SuiteReport(recs, per_env_mean, overall, success, pct, counts, not missing and not skipped, missing, skipped)


def records_to_csv(records: Iterable[TrialRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS + ("trial",))
    for r in records:
        w.writerow([r.env_id, r.seed, r.outcome.value, _fmt(r.AT), _fmt(r.OT), _fmt(r.score), r.trial_index])
    return buf.getvalue()


def records_from_csv(text: str, clip_low: float = CLIP_LOW, clip_high: float = CLIP_HIGH, rescore: bool = True) -> list[TrialRecord]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        at, ot = float(row["AT"]), float(row["OT"])
        idx = int(row.get("trial") or 0)
        if rescore:
            out.append(TrialRecord.scored(int(row["env_id"]), int(row["seed"]), row["outcome"], at, ot, idx, "", clip_low, clip_high))
        else:
            out.append(TrialRecord(int(row["env_id"]), int(row["seed"]), Outcome(row["outcome"]), at, ot, float(row["score"]), idx))
    return out
