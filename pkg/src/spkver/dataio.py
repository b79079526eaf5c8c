"""Manifests, trial lists, embedding stores and score files.

Formats
-------
manifest   one utterance per line, ``utt_id<TAB>speaker_id<TAB>path<TAB>duration_s``;
           ``#`` lines and blank lines are ignored.
trials     ``enroll_id test_utt_id [target|nontarget]``, whitespace separated.
scores     ``enroll_id test_utt_id score`` with the score printed to 6 decimals.
embeddings binary: magic ``EMBV1``, uint32 LE dim, then per record a uint16 LE
           id byte-length, the UTF-8 id and ``dim`` float32 LE values.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from scipy.io import wavfile

from spkver.errors import FormatError, InputError

EMB_MAGIC = b"EMBV1"
_DIM = struct.Struct("<I")
_IDLEN = struct.Struct("<H")


# ----------------------------------------------------------------- manifests


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    speaker_id: str
    path: str
    duration_s: float


def _lines(text: str) -> Iterator[tuple[int, str]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def parse_manifest(text: str, source: str | None = None) -> list[UtteranceRecord]:
    records = []
    seen: dict[str, int] = {}
    for lineno, line in _lines(text):
        cols = line.split("\t")
        if len(cols) != 4:
            raise FormatError(f"expected 4 tab-separated fields, got {len(cols)}", lineno, source)
        utt_id, spk, path, dur = (c.strip() for c in cols)
        if not utt_id or not spk:
            raise FormatError("empty utt_id or speaker_id", lineno, source)
        try:
            duration = float(dur)
        except ValueError:
            raise FormatError(f"malformed duration {dur!r}", lineno, source) from None
        if not math.isfinite(duration) or duration <= 0:
            raise FormatError(f"duration must be positive and finite, got {dur!r}", lineno, source)
        if utt_id in seen:
            raise FormatError(
                f"duplicate utt_id {utt_id!r} (first seen on line {seen[utt_id]})", lineno, source
            )
        seen[utt_id] = lineno
        records.append(UtteranceRecord(utt_id, spk, path, duration))
    return records


def format_manifest(records: Iterable[UtteranceRecord]) -> str:
    return "".join(
        f"{r.utt_id}\t{r.speaker_id}\t{r.path}\t{r.duration_s:.4f}\n" for r in records
    )


def load_manifest(path) -> list[UtteranceRecord]:
    path = Path(path)
    records = parse_manifest(path.read_text(encoding="utf-8"), source=str(path))
    # relative audio paths are resolved against the manifest's directory
    out = []
    for r in records:
        p = Path(r.path)
        if not p.is_absolute():
            p = path.parent / p
        out.append(UtteranceRecord(r.utt_id, r.speaker_id, str(p), r.duration_s))
    return out


# -------------------------------------------------------------------- trials


class Label(str, enum.Enum):
    TARGET = "target"
    NONTARGET = "nontarget"


@dataclass(frozen=True)
class Trial:
    enroll_id: str
    test_utt_id: str
    label: Label | None = None


def parse_trials(text: str, source: str | None = None) -> list[Trial]:
    trials = []
    for lineno, line in _lines(text):
        cols = line.split()
        if len(cols) not in (2, 3):
            raise FormatError(f"expected 2 or 3 fields, got {len(cols)}", lineno, source)
        label = None
        if len(cols) == 3:
            try:
                label = Label(cols[2])
            except ValueError:
                raise FormatError(
                    f"label must be 'target' or 'nontarget', got {cols[2]!r}", lineno, source
                ) from None
        trials.append(Trial(cols[0], cols[1], label))
    return trials


def format_trials(trials: Iterable[Trial]) -> str:
    out = []
    for t in trials:
        if t.label is None:
            out.append(f"{t.enroll_id} {t.test_utt_id}\n")
        else:
            out.append(f"{t.enroll_id} {t.test_utt_id} {t.label.value}\n")
    return "".join(out)


def load_trials(path) -> list[Trial]:
    path = Path(path)
    return parse_trials(path.read_text(encoding="utf-8"), source=str(path))


# ---------------------------------------------------------------- embeddings


@dataclass
class EmbeddingStore:
    """Ordered id -> float32 vector map with a fixed dimension."""

    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim <= 0:
            raise InputError(f"embedding dim must be positive, got {self.dim}")
        items = list(self.entries.items())
        self.entries = {}
        for key, vec in items:
            self.add(key, vec)

    def add(self, key: str, vec) -> None:
        if key in self.entries:
            raise InputError(f"duplicate embedding id {key!r}")
        arr = np.asarray(vec, dtype=np.float32).reshape(-1)
        if arr.shape[0] != self.dim:
            raise InputError(f"embedding {key!r} has dim {arr.shape[0]}, store dim is {self.dim}")
        if len(key.encode("utf-8")) > 0xFFFF:
            raise InputError(f"embedding id too long: {key[:40]!r}...")
        self.entries[key] = arr.copy()

    def __len__(self):
        return len(self.entries)

    def __contains__(self, key):
        return key in self.entries

    def __getitem__(self, key) -> np.ndarray:
        return self.entries[key]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        if self.dim != other.dim or list(self.entries) != list(other.entries):
            return False
        return all(self.entries[k].tobytes() == other.entries[k].tobytes() for k in self.entries)


def write_embeddings(store: EmbeddingStore) -> bytes:
    parts = [EMB_MAGIC, _DIM.pack(store.dim)]
    for key, vec in store.entries.items():
        raw = key.encode("utf-8")
        parts.append(_IDLEN.pack(len(raw)))
        parts.append(raw)
        parts.append(np.asarray(vec, dtype="<f4").tobytes())
    return b"".join(parts)


def read_embeddings(data: bytes, source: str | None = None) -> EmbeddingStore:
    """Decode an embedding stream. Errors report the record index as the location."""
    if data[: len(EMB_MAGIC)] != EMB_MAGIC:
        raise FormatError("bad magic, not an EMBV1 embedding stream", source=source)
    pos = len(EMB_MAGIC)
    if len(data) < pos + _DIM.size:
        raise FormatError("truncated header", source=source)
    (dim,) = _DIM.unpack_from(data, pos)
    pos += _DIM.size
    if dim == 0:
        raise FormatError("embedding dim is zero", source=source)
    vec_bytes = 4 * dim
    store = EmbeddingStore(dim)
    record = 0
    while pos < len(data):
        record += 1
        where = f"record {record} at byte {pos}"
        if pos + _IDLEN.size > len(data):
            raise FormatError(f"truncated id length in {where}", source=source)
        (n,) = _IDLEN.unpack_from(data, pos)
        pos += _IDLEN.size
        if pos + n + vec_bytes > len(data):
            raise FormatError(f"truncated {where}", source=source)
        try:
            key = data[pos : pos + n].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"id is not valid UTF-8 in {where}", source=source) from None
        pos += n
        if key in store:
            raise FormatError(f"duplicate id {key!r} in {where}", source=source)
        store.entries[key] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).astype(np.float32)
        pos += vec_bytes
    return store


def save_embeddings(store: EmbeddingStore, path) -> None:
    Path(path).write_bytes(write_embeddings(store))


def load_embeddings(path) -> EmbeddingStore:
    path = Path(path)
    return read_embeddings(path.read_bytes(), source=str(path))


# -------------------------------------------------------------------- scores


@dataclass
class ScoreSet:
    rows: list[tuple[str, str, float]] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        rows = []
        for enroll, test, score in self.rows:
            key = (enroll, test)
            if key in seen:
                raise InputError(f"duplicate trial {enroll} {test}")
            score = float(score)
            if not math.isfinite(score):
                raise InputError(f"non-finite score for trial {enroll} {test}")
            seen.add(key)
            rows.append((enroll, test, score))
        self.rows = rows

    def __len__(self):
        return len(self.rows)

    def keys(self) -> list[tuple[str, str]]:
        return [(e, t) for e, t, _ in self.rows]

    def as_dict(self) -> dict[tuple[str, str], float]:
        return {(e, t): s for e, t, s in self.rows}

    def scores(self) -> np.ndarray:
        return np.array([s for _, _, s in self.rows], dtype=np.float64)


def write_scores(scores: ScoreSet) -> str:
    return "".join(f"{e} {t} {s:.6f}\n" for e, t, s in scores.rows)


def parse_scores(text: str, source: str | None = None) -> ScoreSet:
    rows = []
    seen: set[tuple[str, str]] = set()
    for lineno, line in _lines(text):
        cols = line.split()
        if len(cols) != 3:
            raise FormatError(f"expected 3 fields, got {len(cols)}", lineno, source)
        try:
            score = float(cols[2])
        except ValueError:
            raise FormatError(f"non-numeric score {cols[2]!r}", lineno, source) from None
        if not math.isfinite(score):
            raise FormatError(f"score must be finite, got {cols[2]!r}", lineno, source)
        key = (cols[0], cols[1])
        if key in seen:
            raise FormatError(f"duplicate trial {cols[0]} {cols[1]}", lineno, source)
        seen.add(key)
        rows.append((cols[0], cols[1], score))
    return ScoreSet(rows)


def save_scores(scores: ScoreSet, path) -> None:
    Path(path).write_text(write_scores(scores), encoding="utf-8")


def load_scores(path) -> ScoreSet:
    path = Path(path)
    return parse_scores(path.read_text(encoding="utf-8"), source=str(path))


# --------------------------------------------------------------------- audio


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM mono WAV file as float32 samples in [-1, 1)."""
    sr, data = wavfile.read(str(path))
    if data.dtype != np.int16:
        raise FormatError(f"expected 16-bit PCM, got {data.dtype}", source=str(path))
    if data.ndim != 1:
        raise FormatError(f"expected mono audio, got {data.shape[1]} channels", source=str(path))
    return data.astype(np.float32) / 32768.0, int(sr)


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    wavfile.write(str(path), sample_rate, pcm.astype(np.int16))
