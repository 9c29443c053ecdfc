"""PSNR scoring and comparison analytics: profiles, win rates, confusion.

Scores are computed on normalized images clamped to [-0.5, 0.5] with peak
1.0 (the same number as 255-peak PSNR on the 8-bit scale). Denoised outputs
are scored unquantized. Identical images score +inf.

Winner rule everywhere: highest PSNR, ties to the lexicographically
smallest denoiser id.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from . import plots
from .errors import ScoreTableError, ShapeError

log = logging.getLogger(__name__)

ScoreTable = Mapping[str, Mapping[str, float]]

RECORD_COLUMNS = ["image_id", "class", "denoiser", "psnr_db"]
SCORING_NOTE = "psnr on clamped normalized floats, peak 1.0, denoised outputs unquantized; identical images score inf"


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    class_label: str | None
    denoiser_id: str
    psnr_db: float


@dataclass(frozen=True)
class ProfileCurve:
    gains: np.ndarray
    zero_crossing: int


@dataclass
class ConfusionMatrix:
    """Row i: image class; column j: denoiser; entry: fraction of wins."""

    classes: list[str]
    denoisers: list[str]
    matrix: np.ndarray

    def row(self, class_label: str) -> dict[str, float]:
        i = self.classes.index(class_label)
        return dict(zip(self.denoisers, self.matrix[i].tolist()))


@dataclass
class Analytics:
    profiles: dict[str, ProfileCurve] = field(default_factory=dict)
    baseline: str | None = None
    wins: dict[str, float] | None = None
    confusion: ConfusionMatrix | None = None
    class_means: pd.DataFrame | None = None

    def is_empty(self) -> bool:
        return not self.profiles and self.wins is None and self.confusion is None and self.class_means is None


# =============================================================================
# Scores
# =============================================================================

def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"psnr inputs differ in shape: {a.shape} vs {b.shape}")
    a = np.clip(np.asarray(a, dtype=np.float64), -0.5, 0.5)
    b = np.clip(np.asarray(b, dtype=np.float64), -0.5, 0.5)
    mse = float(np.mean(np.square(a - b)))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"rmse inputs differ in shape: {a.shape} vs {b.shape}")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean(np.square(diff))))


def score_table(records: Iterable[EvalRecord]) -> dict[str, dict[str, float]]:
    """image_id -> denoiser_id -> psnr."""
    table: dict[str, dict[str, float]] = {}
    for r in records:
        table.setdefault(r.image_id, {})[r.denoiser_id] = r.psnr_db
    return table


def image_classes(records: Iterable[EvalRecord]) -> dict[str, str | None]:
    return {r.image_id: r.class_label for r in records}


# =============================================================================
# Analytics
# =============================================================================

def performance_profile(gains: Sequence[float]) -> ProfileCurve:
    """Gains sorted ascending and the count of strictly negative gains."""
    values = np.asarray(gains, dtype=np.float64)
    if values.size == 0:
        raise ValueError("performance profile needs at least one gain")
    ordered = np.sort(values, kind="stable")
    return ProfileCurve(ordered, int(np.count_nonzero(ordered < 0)))


def profile_gains(table: ScoreTable, denoiser: str, baseline: str) -> list[float]:
    """Per-image PSNR gain of ``denoiser`` over ``baseline``, in sorted image order."""
    gains = []
    for image_id in sorted(table):
        scores = table[image_id]
        for name in (denoiser, baseline):
            if name not in scores:
                raise ScoreTableError(f"missing score for image {image_id!r}, denoiser {name!r}")
        a, b = scores[denoiser], scores[baseline]
        # both exact reconstructions: a tie, not inf - inf
        gains.append(0.0 if a == b == math.inf else a - b)
    return gains


def winner(scores: Mapping[str, float]) -> str:
    return min(scores, key=lambda name: (-scores[name], name))


def _denoiser_ids(table: ScoreTable) -> list[str]:
    return sorted({name for scores in table.values() for name in scores})


def win_rates(table: ScoreTable, denoisers: Sequence[str] | None = None) -> dict[str, float]:
    """Fraction of images each denoiser wins; fractions sum to 1."""
    if not table:
        raise ScoreTableError("score table is empty")
    names = sorted(denoisers) if denoisers is not None else _denoiser_ids(table)
    counts = dict.fromkeys(names, 0)
    for image_id in sorted(table):
        scores = table[image_id]
        for name in names:
            if name not in scores:
                raise ScoreTableError(f"missing score for image {image_id!r}, denoiser {name!r}")
        counts[winner({name: scores[name] for name in names})] += 1
    return {name: counts[name] / len(table) for name in names}


def cross_class_confusion(
    table: ScoreTable, classes: Mapping[str, str | None], denoisers: Sequence[str] | None = None
) -> ConfusionMatrix:
    for image_id in sorted(table):
        if classes.get(image_id) is None:
            raise ScoreTableError(f"image {image_id!r} has no class label")
    names = sorted(denoisers) if denoisers is not None else _denoiser_ids(table)
    labels = sorted({classes[image_id] for image_id in table})
    matrix = np.zeros((len(labels), len(names)))
    for i, label in enumerate(labels):
        subset = {image_id: scores for image_id, scores in table.items() if classes[image_id] == label}
        rates = win_rates(subset, names)
        matrix[i] = [rates[name] for name in names]
    return ConfusionMatrix(labels, names, matrix)


def class_means(records: Iterable[EvalRecord]) -> pd.DataFrame:
    """Mean PSNR per (class, denoiser); rows sorted by class then denoiser."""
    frame = records_frame(records)
    frame = frame[frame["class"] != ""]
    means = frame.groupby(["class", "denoiser"], sort=True)["psnr_db"].mean().reset_index()
    return means.rename(columns={"psnr_db": "mean_psnr_db"})


def build_analytics(
    records: Sequence[EvalRecord], baseline: str | None = None, exclude: Sequence[str] = ()
) -> Analytics:
    """Profiles vs ``baseline``, win rates and (when labeled) confusion and class means.

    Denoiser ids in ``exclude`` (for example the noisy input) are kept out of
    the win and confusion tallies.
    """
    table = score_table(records)
    names = [name for name in _denoiser_ids(table) if name not in exclude]
    analytics = Analytics(baseline=baseline)
    if baseline is not None:
        for name in _denoiser_ids(table):
            if name != baseline:
                analytics.profiles[name] = performance_profile(profile_gains(table, name, baseline))
    if names:
        analytics.wins = win_rates(table, names)
    classes = image_classes(records)
    if names and classes and all(label is not None for label in classes.values()):
        analytics.confusion = cross_class_confusion(table, classes, names)
        analytics.class_means = class_means(records)
    return analytics


# =============================================================================
# Reports
# =============================================================================

def records_frame(records: Iterable[EvalRecord]) -> pd.DataFrame:
    rows = [(r.image_id, r.class_label or "", r.denoiser_id, r.psnr_db) for r in records]
    frame = pd.DataFrame(rows, columns=RECORD_COLUMNS)
    return frame.sort_values(["image_id", "denoiser"], kind="stable").reset_index(drop=True)


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report {path}: {exc.strerror}") from exc
    return path


def emit_report(records: Sequence[EvalRecord], analytics: Analytics | None, out_dir: str | Path) -> list[Path]:
    """Write CSV tables and SVG plots; byte-identical for identical inputs."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create report directory {out_dir}: {exc.strerror}") from exc

    written = [_write_csv(records_frame(records), out_dir / "records.csv")]
    if analytics is None or analytics.is_empty():
        return written

    written.append(_write_csv(pd.DataFrame({"key": ["scoring", "baseline"],
                                            "value": [SCORING_NOTE, analytics.baseline or ""]}),
                              out_dir / "metadata.csv"))
    if analytics.profiles:
        rows = [
            (name, rank, gain, curve.zero_crossing)
            for name, curve in sorted(analytics.profiles.items())
            for rank, gain in enumerate(curve.gains.tolist())
        ]
        frame = pd.DataFrame(rows, columns=["denoiser", "rank", "gain_db", "zero_crossing"])
        written.append(_write_csv(frame, out_dir / "profile.csv"))
        written.append(plots.profile_plot(analytics.profiles, analytics.baseline or "baseline", out_dir / "profile.svg"))
    if analytics.wins is not None:
        frame = pd.DataFrame(sorted(analytics.wins.items()), columns=["denoiser", "win_fraction"])
        written.append(_write_csv(frame, out_dir / "wins.csv"))
        written.append(plots.wins_plot(analytics.wins, out_dir / "wins.svg"))
    if analytics.confusion is not None:
        confusion = analytics.confusion
        frame = pd.DataFrame(confusion.matrix, columns=confusion.denoisers)
        frame.insert(0, "class", confusion.classes)
        written.append(_write_csv(frame, out_dir / "confusion.csv"))
        written.append(plots.confusion_plot(confusion.classes, confusion.denoisers, confusion.matrix,
                                            out_dir / "confusion.svg"))
    if analytics.class_means is not None and not analytics.class_means.empty:
        written.append(_write_csv(analytics.class_means, out_dir / "class_means.csv"))
        written.append(plots.class_means_plot(analytics.class_means, out_dir / "class_means.svg"))
    return written


def log_summary(records: Sequence[EvalRecord]) -> None:
    frame = records_frame(records)
    for name, mean in frame.groupby("denoiser", sort=True)["psnr_db"].mean().items():
        log.info("%-24s mean PSNR %.3f dB over %d images", name, mean, int((frame["denoiser"] == name).sum()))
