"""Frame-level segmentation scores, attention-weight localization and overlap assignment."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SegmentationScore:
    fa_rate: float
    miss_rate: float
    ser: float
    status: str = "ok"
    counts: dict = field(default_factory=dict)

    def as_dict(self):
        return {"fa": self.fa_rate, "miss": self.miss_rate, "ser": self.ser,
                "status": self.status, **self.counts}


@dataclass
class DetectionScore:
    precision: float
    recall: float
    f1: float
    status: str = "ok"
    counts: dict = field(default_factory=dict)

    def as_dict(self):
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "status": self.status, **self.counts}


def _bool_pair(pred, ref):
    pred = np.asarray(pred, dtype=bool)
    ref = np.asarray(ref, dtype=bool)
    if pred.shape != ref.shape:
        raise ValueError(f"prediction length {pred.shape} differs from reference {ref.shape}")
    return pred, ref


def vad_metrics(pred, ref):
    """False alarm, miss and SER (= FA + miss), all as % of reference speech frames."""
    pred, ref = _bool_pair(pred, ref)
    fa = int(np.sum(pred & ~ref))
    miss = int(np.sum(~pred & ref))
    speech = int(np.sum(ref))
    counts = {"false_alarm_frames": fa, "missed_frames": miss, "speech_frames": speech}
    if speech == 0:
        return SegmentationScore(float("nan"), float("nan"), float("nan"), "no-speech", counts)
    fa_rate = 100.0 * fa / speech
    miss_rate = 100.0 * miss / speech
    return SegmentationScore(fa_rate, miss_rate, fa_rate + miss_rate, "ok", counts)


def detection_score(tp, fp, fn):
    """Precision/recall/F1 (in %) from counts; undefined ratios are flagged in ``status``."""
    counts = {"tp": int(tp), "fp": int(fp), "fn": int(fn)}
    if tp + fn == 0:
        p = 100.0 * tp / (tp + fp) if tp + fp else float("nan")
        return DetectionScore(p, float("nan"), float("nan"), "no-reference-positives", counts)
    recall = 100.0 * tp / (tp + fn)
    if tp + fp == 0:
        return DetectionScore(0.0, recall, 0.0, "no-predicted-positives", counts)
    precision = 100.0 * tp / (tp + fp)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return DetectionScore(precision, recall, f1, "ok", counts)


def osd_metrics(pred, ref):
    pred, ref = _bool_pair(pred, ref)
    return detection_score(int(np.sum(pred & ref)), int(np.sum(pred & ~ref)), int(np.sum(~pred & ref)))


@dataclass
class LocalizationDecision:
    mean_weights: np.ndarray
    threshold: float
    selected: tuple


def default_threshold(P):
    return 2.0 / P


def localize(weights, threshold=None):
    """Average per-frame channel weights over time and keep channels with mean >= threshold."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] == 0:
        raise ValueError("need a nonempty T x P weight map")
    tau = default_threshold(w.shape[1]) if threshold is None else float(threshold)
    if not 0.0 <= tau <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    mean = w.mean(axis=0)
    return LocalizationDecision(mean, tau, tuple(int(p) for p in np.flatnonzero(mean >= tau)))


def nearest_filter(angle, P):
    """Index of the filter whose look direction is closest to ``angle`` (radians)."""
    return int(np.rint(np.mod(angle, 2 * np.pi) / (2 * np.pi / P))) % P


def localization_metrics(selected, truths):
    """Micro-averaged P/R/F1 over all (scenario, filter) decisions."""
    if len(selected) != len(truths):
        raise ValueError("selected and truth lists differ in length")
    tp = fp = fn = 0
    for sel, tru in zip(selected, truths):
        sel, tru = set(int(i) for i in sel), set(int(i) for i in tru)
        tp += len(sel & tru)
        fp += len(sel - tru)
        fn += len(tru - sel)
    return detection_score(tp, fp, fn)


def two_class_f1(selected, truths, P):
    """Micro F1 (in %) over both classes of every per-filter decision.

    Each filter of each scenario counts once, as a hit whether it was rightly selected
    or rightly left out, so the value equals the decision accuracy.
    """
    if len(selected) != len(truths):
        raise ValueError("selected and truth lists differ in length")
    if not selected:
        return float("nan")
    correct = 0
    for sel, tru in zip(selected, truths):
        s = np.zeros(P, dtype=bool)
        s[list(sel)] = True
        t = np.zeros(P, dtype=bool)
        t[list(tru)] = True
        correct += int(np.sum(s == t))
    return 100.0 * correct / (len(selected) * P)


def random_selection_f1(num_scenarios, P, L, rng, mode="coin"):
    """Localization score of a random selector; returns ``(positive_class, two_class)``.

    ``mode="coin"`` selects each filter independently with probability 1/2;
    ``mode="k"`` selects L filters uniformly without replacement.
    ``two_class`` is :func:`two_class_f1` of the same decisions.
    """
    rng = np.random.default_rng(rng)
    selected, truths = [], []
    for _ in range(num_scenarios):
        truth = rng.choice(P, size=L, replace=False)
        if mode == "coin":
            sel = np.flatnonzero(rng.random(P) < 0.5)
        elif mode == "k":
            sel = rng.choice(P, size=L, replace=False)
        else:
            raise ValueError(f"unknown random mode {mode!r}")
        selected.append(sel)
        truths.append(truth)
    return localization_metrics(selected, truths), two_class_f1(selected, truths, P)


def frames_from_segments(segments, n_frames, centers):
    """Per-frame speaker count from ``(onset, offset, speaker)`` segments, by frame center."""
    by_spk = {}
    for on, off, spk in segments:
        by_spk.setdefault(spk, []).append((on, off))
    count = np.zeros(n_frames, dtype=int)
    for intervals in by_spk.values():
        on_mask = np.zeros(n_frames, dtype=bool)
        for a, b in intervals:
            on_mask |= (centers >= a) & (centers < b)
        count += on_mask
    return count


def frames_to_segments(mask, centers, hop):
    """Contiguous runs of True frames as (onset, offset) seconds (frame center +- hop/2)."""
    mask = np.asarray(mask, dtype=bool)
    segs = []
    start = None
    for i, m in enumerate(mask):
        if m and start is None:
            start = i
        elif not m and start is not None:
            segs.append((max(0.0, centers[start] - hop / 2), centers[i - 1] + hop / 2))
            start = None
    if start is not None:
        segs.append((max(0.0, centers[start] - hop / 2), centers[len(mask) - 1] + hop / 2))
    return segs


def _gap(seg, other):
    """Time between two intervals, 0 if they intersect."""
    return max(0.0, other[0] - seg[1], seg[0] - other[1])


def assign_overlap(diarization, overlaps):
    """Add a second speaker to every overlap segment: the closest inactive speaker in time.

    ``diarization`` is a list of ``(onset, offset, speaker)``; ``overlaps`` a list of
    ``(onset, offset)``. Returns ``(augmented, flagged)`` where ``flagged`` lists the
    overlap segments that could not be augmented. Ties go to the smaller speaker label.
    """
    speakers = sorted({s for _, _, s in diarization})
    augmented = list(diarization)
    flagged = []
    if len(speakers) < 2:
        return augmented, list(overlaps)
    by_spk = {s: [(a, b) for a, b, x in diarization if x == s] for s in speakers}
    for ov in overlaps:
        active = {s for s in speakers if any(a < ov[1] and b > ov[0] for a, b in by_spk[s])}
        best, best_d = None, np.inf
        for s in speakers:
            if s in active:
                continue
            d = min(_gap(ov, seg) for seg in by_spk[s])
            if d < best_d:
                best, best_d = s, d
        if best is None:
            flagged.append(ov)
        else:
            augmented.append((ov[0], ov[1], best))
    return augmented, flagged
