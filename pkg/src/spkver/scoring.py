"""Enrollment, cosine trial scoring, score fusion and equal error rate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from spkver.dataio import EmbeddingStore, Label, ScoreSet, Trial
from spkver.errors import InputError


@dataclass(frozen=True)
class EnrollmentModel:
    speaker_id: str
    embedding: np.ndarray
    n_segments: int


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    n_target: int = 0
    n_nontarget: int = 0


# ----------------------------------------------------------------- enrollment


def segment_enrollment(wave: np.ndarray, rng: np.random.Generator, sample_rate: int = 16000,
                       min_s: float = 10.0, max_s: float = 60.0) -> list[np.ndarray]:
    """Cut a recording into consecutive random-length segments.

    Lengths are uniform in [min_s, max_s]; a tail shorter than ``min_s`` joins
    the last segment, so concatenating the segments gives back ``wave``.
    """
    wave = np.asarray(wave)
    if len(wave) == 0:
        raise InputError("cannot segment an empty recording")
    if not 0 < min_s <= max_s:
        raise InputError(f"need 0 < min_s <= max_s, got {min_s}, {max_s}")
    min_n = int(round(min_s * sample_rate))
    segments = []
    pos = 0
    while pos < len(wave):
        length = int(round(rng.uniform(min_s, max_s) * sample_rate))
        if len(wave) - (pos + length) < min_n:
            length = len(wave) - pos
        segments.append(wave[pos : pos + length])
        pos += length
    return segments


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm):
        raise InputError(f"{what} is not finite")
    if norm == 0:
        raise InputError(f"{what} is the zero vector")
    return v / norm


def enroll_speaker(embeddings: Sequence[np.ndarray], speaker_id: str = "") -> EnrollmentModel:
    """Average of the unit-normalized embeddings, renormalized to unit length."""
    if len(embeddings) == 0:
        raise InputError(f"no embeddings to enroll speaker {speaker_id!r}")
    dims = {np.asarray(e).size for e in embeddings}
    if len(dims) != 1:
        raise InputError(f"enrollment embeddings of speaker {speaker_id!r} differ in dim: {sorted(dims)}")
    units = [_unit(e, f"enrollment embedding {i} of {speaker_id!r}") for i, e in enumerate(embeddings)]
    mean = np.mean(units, axis=0)
    return EnrollmentModel(speaker_id, _unit(mean, f"mean enrollment embedding of {speaker_id!r}"),
                           len(embeddings))


# -------------------------------------------------------------------- scoring


def cosine_score(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(np.clip(np.dot(_unit(a, "first vector"), _unit(b, "second vector")), -1.0, 1.0))


def enrollment_models(store: EmbeddingStore, groups: Mapping[str, Iterable[str]]) -> dict[str, EnrollmentModel]:
    """Build one model per speaker from the store ids listed in ``groups``."""
    models = {}
    for spk, ids in groups.items():
        ids = list(ids)
        missing = [i for i in ids if i not in store]
        if missing:
            raise InputError(f"no embedding for enrollment id {missing[0]!r} (speaker {spk!r})")
        models[spk] = enroll_speaker([store[i] for i in ids], spk)
    return models


def score_trials(trials: Iterable[Trial], enrolled: Mapping[str, EnrollmentModel],
                 test: EmbeddingStore) -> ScoreSet:
    rows = []
    for t in trials:
        if t.enroll_id not in enrolled:
            raise InputError(f"trial references unknown enrollment speaker {t.enroll_id!r}")
        if t.test_utt_id not in test:
            raise InputError(f"trial references test utterance {t.test_utt_id!r} with no embedding")
        rows.append((t.enroll_id, t.test_utt_id,
                     cosine_score(enrolled[t.enroll_id].embedding, test[t.test_utt_id])))
    return ScoreSet(rows)


def fuse_scores(sets: Sequence[ScoreSet], weights: Sequence[float] | None = None) -> ScoreSet:
    """Per-trial weighted mean of several systems' scores (uniform by default)."""
    if not sets:
        raise InputError("nothing to fuse")
    if weights is None:
        weights = [1.0] * len(sets)
    weights = [float(w) for w in weights]
    if len(weights) != len(sets):
        raise InputError(f"{len(weights)} weights for {len(sets)} score sets")
    if any(w < 0 for w in weights) or sum(weights) == 0:
        raise InputError("fusion weights must be nonnegative and not all zero")
    first = sets[0].keys()
    maps = [s.as_dict() for s in sets]
    for i, m in enumerate(maps[1:], start=1):
        for key in first:
            if key not in m:
                raise InputError(f"score set {i} is missing trial {key[0]} {key[1]}")
        if len(m) != len(first):
            extra = next(k for k in m if k not in maps[0])
            raise InputError(f"score set 0 is missing trial {extra[0]} {extra[1]}")
    total = sum(weights)
    rows = [(e, t, sum(w * m[(e, t)] for w, m in zip(weights, maps)) / total) for e, t in first]
    return ScoreSet(rows)


# ------------------------------------------------------------------------ EER


def det_curve(target_scores, nontarget_scores):
    """False-acceptance and false-rejection rates at every distinct score.

    A trial is accepted when ``score >= threshold``. Returns ``(thresholds,
    far, frr)`` with thresholds ascending and a final ``+inf`` point where
    everything is rejected.
    """
    tar = np.sort(np.asarray(target_scores, dtype=np.float64))
    non = np.sort(np.asarray(nontarget_scores, dtype=np.float64))
    thresholds = np.unique(np.concatenate([tar, non]))
    thresholds = np.append(thresholds, np.inf)
    frr = np.searchsorted(tar, thresholds, side="left") / len(tar)
    far = 1.0 - np.searchsorted(non, thresholds, side="left") / len(non)
    return thresholds, far, frr


def eer_from_scores(target_scores, nontarget_scores) -> EerResult:
    """EER at the FAR/FRR crossing, linearly interpolated between operating points."""
    n_tar, n_non = len(target_scores), len(nontarget_scores)
    if n_tar == 0 or n_non == 0:
        raise InputError(f"EER needs both classes, got {n_tar} target and {n_non} nontarget trials")
    thr, far, frr = det_curve(target_scores, nontarget_scores)
    diff = frr - far  # -1 at the lowest threshold, +1 at +inf
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0 or i == 0:
        return EerResult(float(far[i]), float(thr[i]), n_tar, n_non)
    alpha = -diff[i - 1] / (diff[i] - diff[i - 1])
    eer = far[i - 1] + alpha * (far[i] - far[i - 1])
    if np.isfinite(thr[i]):
        threshold = thr[i - 1] + alpha * (thr[i] - thr[i - 1])
    else:
        threshold = thr[i - 1]
    return EerResult(float(eer), float(threshold), n_tar, n_non)


def split_by_label(scores: ScoreSet, trials: Iterable[Trial]) -> tuple[np.ndarray, np.ndarray]:
    labels = {}
    for t in trials:
        if t.label is None:
            raise InputError(f"trial {t.enroll_id} {t.test_utt_id} has no label")
        labels[(t.enroll_id, t.test_utt_id)] = t.label
    tar, non = [], []
    for e, t, s in scores.rows:
        label = labels.get((e, t))
        if label is None:
            raise InputError(f"no label for scored trial {e} {t}")
        (tar if label is Label.TARGET else non).append(s)
    return np.asarray(tar), np.asarray(non)


def compute_eer(scores: ScoreSet, trials: Iterable[Trial]) -> EerResult:
    return eer_from_scores(*split_by_label(scores, trials))
