"""Deterministic synthetic speaker corpus.

Each speaker is a source-filter voice: a glottal pulse train at a
speaker-specific pitch and spectral tilt, shaped by formant resonators scaled
by a speaker-specific vocal-tract factor. Utterances are sequences of
vowel-like syllables drawn from a per-domain vowel inventory. The ``target``
domain uses other speakers, another vowel inventory and a band-limited
"device" channel, giving a controlled domain shift.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from spkver.dataio import Label, Trial, UtteranceRecord, format_manifest, format_trials, write_wav

SAMPLE_RATE = 16000

_VOWELS = {
    "source": [(730, 1090, 2440), (270, 2290, 3010), (300, 870, 2240), (530, 1840, 2480), (570, 840, 2410)],
    "target": [(660, 1720, 2410), (390, 1990, 2550), (440, 1020, 2240), (490, 1350, 1690), (310, 1240, 2200)],
}
_DOMAIN_SEED = {"source": 0, "target": 1}


@dataclass(frozen=True)
class Voice:
    f0: float
    tract: float  # formant scale factor
    tilt: float  # pole of the one-pole glottal lowpass
    breath: float  # aspiration noise level


def _resonator(freq, bw, sr):
    r = np.exp(-np.pi * bw / sr)
    theta = 2 * np.pi * freq / sr
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return [1 - r], a


def _syllable(voice: Voice, formants, n: int, rng: np.random.Generator, sr: int) -> np.ndarray:
    f0 = voice.f0 * rng.uniform(0.94, 1.06) * (1 + 0.04 * np.linspace(-1, 1, n) * rng.uniform(-1, 1))
    phase = np.cumsum(f0 / sr)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    src = lfilter([1.0], [1.0, -voice.tilt], pulses)
    src += voice.breath * rng.standard_normal(n)
    out = src
    for k, f in enumerate(formants):
        f = f * voice.tract * rng.uniform(0.97, 1.03)
        b, a = _resonator(min(f, 0.45 * sr), 60 + 40 * k, sr)
        out = lfilter(b, a, out)
    env = np.sin(np.linspace(0, np.pi, n)) ** 0.5
    return out * env


def synth_utterance(voice: Voice, vowels, seconds: float, rng: np.random.Generator,
                    sr: int = SAMPLE_RATE, channel=None) -> np.ndarray:
    total = int(seconds * sr)
    out = np.zeros(total)
    pos = int(rng.uniform(0.02, 0.1) * sr)
    while pos < total:
        n = int(rng.uniform(0.12, 0.3) * sr)
        syl = _syllable(voice, vowels[rng.integers(len(vowels))], n, rng, sr)
        end = min(total, pos + n)
        out[pos:end] += syl[: end - pos]
        pos = end + int(rng.uniform(0.02, 0.12) * sr)
    out += 1e-3 * rng.standard_normal(total) * np.max(np.abs(out))
    if channel is not None:
        out = sosfilt(channel, out)
    return 0.5 * out / np.max(np.abs(out))


def make_voices(n: int, rng: np.random.Generator) -> list[Voice]:
    return [Voice(f0=float(rng.uniform(85, 260)), tract=float(rng.uniform(0.85, 1.2)),
                  tilt=float(rng.uniform(0.6, 0.95)), breath=float(rng.uniform(0.0, 0.05)))
            for _ in range(n)]


def make_toy_corpus(out_dir, seed: int = 7, n_speakers: int = 10, train_utts: int = 20,
                    test_utts: int = 5, enroll_seconds: float = 25.0,
                    utt_seconds: tuple[float, float] = (2.0, 4.0),
                    domains=("source", "target")) -> dict[str, dict[str, Path]]:
    """Write WAVs, manifests and trial lists under ``out_dir/<domain>/``.

    Per domain: ``train.lst`` (``train_utts`` per speaker), ``enroll.lst``
    (one long recording per speaker), ``test.lst`` (``test_utts`` held-out
    utterances per speaker) and ``trials.txt`` (every speaker against every
    test utterance). Manifest audio paths are relative to the manifest.
    """
    out_dir = Path(out_dir)
    written = {}
    for domain in domains:
        rng = np.random.default_rng([seed, _DOMAIN_SEED[domain]])
        root = out_dir / domain
        (root / "wav").mkdir(parents=True, exist_ok=True)
        voices = make_voices(n_speakers, rng)
        vowels = _VOWELS[domain]
        channel = butter(4, [300, 3400], btype="bandpass", fs=SAMPLE_RATE, output="sos") if domain == "target" else None
        prefix = "s" if domain == "source" else "t"
        lists = {"train": [], "enroll": [], "test": []}
        for si, voice in enumerate(voices):
            spk = f"{prefix}spk{si:02d}"
            plan = [("train", i, rng.uniform(*utt_seconds)) for i in range(train_utts)]
            plan.append(("enroll", 0, enroll_seconds))
            plan += [("test", i, rng.uniform(*utt_seconds)) for i in range(test_utts)]
            for part, i, secs in plan:
                utt = f"{spk}-{part}{i:02d}"
                wave = synth_utterance(voice, vowels, secs, rng, channel=channel)
                rel = Path("wav") / f"{utt}.wav"
                write_wav(root / rel, wave, SAMPLE_RATE)
                lists[part].append(UtteranceRecord(utt, spk, str(rel), len(wave) / SAMPLE_RATE))
        speakers = [r.speaker_id for r in lists["enroll"]]
        trials = [Trial(spk, r.utt_id, Label.TARGET if r.speaker_id == spk else Label.NONTARGET)
                  for spk in speakers for r in lists["test"]]
        paths = {}
        for part, records in lists.items():
            paths[part] = root / f"{part}.lst"
            paths[part].write_text(format_manifest(records), encoding="utf-8")
        paths["trials"] = root / "trials.txt"
        paths["trials"].write_text(format_trials(trials), encoding="utf-8")
        written[domain] = paths
    return written
