"""
Per-track evaluation, outlier thresholds and the aggregate tables.

For every threshold, tracks with RMSE above it (and degenerate tracks) are
removed first; feature-age and error statistics are computed on what is kept.
"""
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from core.exceptions import BehindCamera, InsufficientObservations, NoConvergence, ParseError

from .geometry import Trajectory
from .triangulation import triangulate

logger = logging.getLogger(__name__)

PER_TRACK_FIELDS = ['chain_id', 'age_s', 'rmse_px', 'n_obs', 'degenerate']
SUMMARY_FIELDS = [
    'threshold_px', 'kept', 'total',
    'mean_age_s', 'median_age_s', 'std_age_s',
    'mean_rmse_px', 'median_rmse_px', 'std_rmse_px',
]
SKIPPABLE = (InsufficientObservations, BehindCamera, NoConvergence)


@dataclass(frozen=True)
class TrackEvaluation:
    chain_id: int
    feature_age: float
    rmse: float
    point3d: tuple = (math.nan, math.nan, math.nan)
    n_observations: int = 0
    degenerate: bool = False
    rmse_literal: float = math.nan


@dataclass(frozen=True)
class ThresholdSummary:
    threshold: float
    kept: int
    total: int
    mean_age: float
    median_age: float
    std_age: float
    mean_rmse: float
    median_rmse: float
    std_rmse: float


@dataclass
class EvaluationReport:
    evaluations: list
    summaries: list
    total: int
    skipped: list = field(default_factory=list)


def sample_std(values):
    """Sample standard deviation (n - 1); 0 for a single value, NaN for none."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return math.nan
    if len(values) == 1:
        return 0.0
    return float(np.std(values, ddof=1))


def _mean(values):
    return float(np.mean(values)) if len(values) else math.nan


def _median(values):
    return float(np.median(values)) if len(values) else math.nan


def evaluate_track(track, trajectory, intrinsics):
    result = triangulate(track, trajectory, intrinsics)
    return TrackEvaluation(
        chain_id=track.chain_id,
        feature_age=track.age,
        rmse=result.rmse,
        point3d=tuple(float(v) for v in result.point3d),
        n_observations=result.n_observations,
        degenerate=result.degenerate,
        rmse_literal=result.rmse_literal,
    )


def summarize(evaluations, thresholds, total=None):
    """One ThresholdSummary per threshold, keeping non-degenerate tracks with rmse <= threshold."""
    total = len(evaluations) if total is None else total
    summaries = []
    for threshold in thresholds:
        kept = [e for e in evaluations if not e.degenerate and e.rmse <= threshold]
        ages = [e.feature_age for e in kept]
        errors = [e.rmse for e in kept]
        summaries.append(ThresholdSummary(
            threshold=float(threshold),
            kept=len(kept),
            total=total,
            mean_age=_mean(ages),
            median_age=_median(ages),
            std_age=sample_std(ages),
            mean_rmse=_mean(errors),
            median_rmse=_median(errors),
            std_rmse=sample_std(errors),
        ))
    return summaries


def evaluate_tracks(tracks, poses, intrinsics, thresholds, workers=1):
    """
    Triangulate every track and aggregate per threshold.

    Tracks that cannot be triangulated are logged and skipped (they still
    count in ``total``); a track outside the pose coverage aborts the run.
    """
    thresholds = list(thresholds)
    if not thresholds:
        raise ValueError('At least one threshold is required')
    trajectory = poses if isinstance(poses, Trajectory) else Trajectory(poses)
    for track in tracks:
        trajectory.check_coverage(track.t, chain_id=track.chain_id)

    def attempt(track):
        try:
            return evaluate_track(track, trajectory, intrinsics)
        except SKIPPABLE as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(attempt, tracks))

    evaluations, skipped = [], []
    for track, outcome in zip(tracks, outcomes):
        if isinstance(outcome, Exception):
            logger.warning('Skipping track %s: %s', track.chain_id, outcome)
            skipped.append((track.chain_id, str(outcome)))
        else:
            evaluations.append(outcome)
    summaries = summarize(evaluations, thresholds, total=len(tracks))
    for summary in summaries:
        logger.info(
            'Threshold %.1f px: kept %d/%d tracks, mean age %.3f s, mean rmse %.3f px',
            summary.threshold, summary.kept, summary.total, summary.mean_age, summary.mean_rmse,
        )
    return EvaluationReport(evaluations=evaluations, summaries=summaries, total=len(tracks), skipped=skipped)


def write_per_track(evaluations, path, header='', literal=False):
    fields = PER_TRACK_FIELDS + (['rmse_literal_px'] if literal else [])
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        handle.write(header)
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(fields)
        for e in evaluations:
            row = [e.chain_id, f'{e.feature_age:.9g}', f'{e.rmse:.9g}', e.n_observations, int(e.degenerate)]
            if literal:
                row.append(f'{e.rmse_literal:.9g}')
            writer.writerow(row)


def read_per_track(path):
    evaluations = []
    with open(path, 'r', encoding='utf-8', newline='') as handle:
        reader = csv.DictReader(line for line in handle if not line.startswith('#'))
        missing = set(PER_TRACK_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ParseError(1, f'missing columns: {", ".join(sorted(missing))}')
        for row_no, row in enumerate(reader, start=2):
            try:
                evaluations.append(TrackEvaluation(
                    chain_id=int(row['chain_id']),
                    feature_age=float(row['age_s']),
                    rmse=float(row['rmse_px']),
                    n_observations=int(row['n_obs']),
                    degenerate=bool(int(row['degenerate'])),
                    rmse_literal=float(row.get('rmse_literal_px') or math.nan),
                ))
            except (TypeError, ValueError):
                raise ParseError(row_no, 'malformed per-track row')
    return evaluations


def write_summary(summaries, path, header=''):
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        handle.write(header)
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(SUMMARY_FIELDS)
        for s in summaries:
            writer.writerow([
                f'{s.threshold:g}', s.kept, s.total,
                f'{s.mean_age:.9g}', f'{s.median_age:.9g}', f'{s.std_age:.9g}',
                f'{s.mean_rmse:.9g}', f'{s.median_rmse:.9g}', f'{s.std_rmse:.9g}',
            ])


def average_summaries(per_sequence):
    """
    Average each statistic across sequences, threshold by threshold.

    ``per_sequence`` is a list of summary lists computed with the same
    thresholds; NaN entries (nothing kept) are ignored.
    """
    averaged = []
    for rows in zip(*per_sequence):
        def avg(name):
            values = [getattr(r, name) for r in rows if not math.isnan(getattr(r, name))]
            return float(np.mean(values)) if values else math.nan
        averaged.append(ThresholdSummary(
            threshold=rows[0].threshold,
            kept=sum(r.kept for r in rows),
            total=sum(r.total for r in rows),
            mean_age=avg('mean_age'),
            median_age=avg('median_age'),
            std_age=avg('std_age'),
            mean_rmse=avg('mean_rmse'),
            median_rmse=avg('median_rmse'),
            std_rmse=avg('std_rmse'),
        ))
    return averaged


def percentage_change(current, baseline):
    """Relative change of ``current`` over ``baseline`` in percent."""
    if math.isnan(current) or math.isnan(baseline) or baseline == 0:
        return math.nan
    return (current - baseline) / baseline * 100.0


def compare_summaries(current, baseline):
    """Per threshold: percentage change of the mean and median of age and rmse."""
    return [
        {
            'threshold': c.threshold,
            'mean_age': percentage_change(c.mean_age, b.mean_age),
            'median_age': percentage_change(c.median_age, b.median_age),
            'mean_rmse': percentage_change(c.mean_rmse, b.mean_rmse),
            'median_rmse': percentage_change(c.median_rmse, b.median_rmse),
        }
        for c, b in zip(current, baseline)
    ]


def _cell(value, fmt):
    return 'n/a' if math.isnan(value) else format(value, fmt)


def format_summary(summaries, title=None):
    """Plain-text table of threshold summaries, one row per threshold."""
    lines = [title] if title else []
    lines.append(
        f'{"threshold":>9} {"kept":>11} {"mean age":>9} {"median age":>10} {"std age":>9} '
        f'{"mean rmse":>9} {"median rmse":>11} {"std rmse":>9}'
    )
    for s in summaries:
        lines.append(
            f'{s.threshold:>7g}px {s.kept:>5d}/{s.total:<5d} {_cell(s.mean_age, ".3f"):>9} '
            f'{_cell(s.median_age, ".3f"):>10} {_cell(s.std_age, ".3f"):>9} {_cell(s.mean_rmse, ".3f"):>9} '
            f'{_cell(s.median_rmse, ".3f"):>11} {_cell(s.std_rmse, ".3f"):>9}'
        )
    return '\n'.join(lines)


def format_comparison(rows):
    lines = [f'{"threshold":>9} {"mean age":>9} {"median age":>10} {"mean rmse":>9} {"median rmse":>11}']
    for row in rows:
        lines.append(
            f'{row["threshold"]:>7g}px {_cell(row["mean_age"], "+.1f"):>8}% '
            f'{_cell(row["median_age"], "+.1f"):>9}% {_cell(row["mean_rmse"], "+.1f"):>8}% '
            f'{_cell(row["median_rmse"], "+.1f"):>10}%'
        )
    return '\n'.join(lines)
