"""Audio chunk I/O, annotation manifests, fold splitting, and synthetic corpora.

Chunks are 4-second mono recordings carrying chunk-level tag sets drawn from
the 7-letter alphabet ``b c f m o p v``.  Annotation manifests are plain CSV
lines ``chunk_id,label_string`` where the label string concatenates tag
letters (``"cmv"``); fold assignments are ``chunk_id,fold`` lines with folds
in 1..5.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError, ManifestError

TAGS: tuple[str, ...] = ("b", "c", "f", "m", "o", "p", "v")

CANONICAL_SAMPLE_RATE = 16000
CANONICAL_DURATION_S = 4.0

_INT16_SCALE = 32768.0


@dataclass
class AudioChunk:
    """Mono PCM samples for one recording, normalized to [-1, 1]."""

    id: str
    samples: np.ndarray
    sample_rate: int = CANONICAL_SAMPLE_RATE

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"chunk {self.id!r}: samples must be 1-D, got {self.samples.ndim}-D")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"chunk {self.id!r}: samples contain non-finite values")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class ChunkLabel:
    """Weak (chunk-level) tag set for one chunk; empty sets are allowed."""

    chunk_id: str
    tags: frozenset[str]

    def __post_init__(self) -> None:
        unknown = set(self.tags) - set(TAGS)
        if unknown:
            raise ManifestError(
                f"chunk {self.chunk_id!r}: unknown tag letters {sorted(unknown)}"
            )


@dataclass
class FoldSplit:
    """One cross-validation fold: disjoint train/eval chunk id sets."""

    fold_index: int
    train_ids: set[str]
    eval_ids: set[str]


def read_wav(path: str | Path) -> AudioChunk:
    """Read a mono 16-bit PCM WAV file into an AudioChunk.

    Samples are scaled to [-1, 1] by dividing by 32768.  Raises FormatError
    for malformed headers and for unsupported layouts (stereo, non-16-bit),
    naming the offending field.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            sample_rate = wf.getframerate()
            n_frames = wf.getnframes()
            if n_channels != 1:
                raise FormatError(f"{path}: unsupported channel count {n_channels} (mono required)")
            if sampwidth != 2:
                raise FormatError(
                    f"{path}: unsupported sample width {8 * sampwidth} bit (16-bit PCM required)"
                )
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        raise FormatError(f"{path}: malformed WAV header ({exc})") from exc
    except EOFError as exc:
        raise FormatError(f"{path}: truncated WAV file") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _INT16_SCALE
    return AudioChunk(id=path.stem, samples=samples, sample_rate=sample_rate)


def write_wav(path: str | Path, chunk: AudioChunk) -> None:
    """Write an AudioChunk as mono 16-bit PCM, quantizing by round(x * 32768)."""
    quantized = np.clip(np.rint(chunk.samples * _INT16_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(chunk.sample_rate)
        wf.writeframes(quantized.tobytes())


def parse_label_string(text: str) -> frozenset[str]:
    """Parse a concatenated-letter label string such as ``"cmv"``.

    Duplicate letters collapse; letters outside the alphabet raise ManifestError.
    """
    letters = set(text.strip())
    unknown = letters - set(TAGS)
    if unknown:
        raise ManifestError(f"unknown tag letters {sorted(unknown)} in label {text!r}")
    return frozenset(letters)


def load_annotations(path: str | Path) -> list[ChunkLabel]:
    """Load an annotation manifest: one ``chunk_id,label_string`` line per chunk."""
    labels: list[ChunkLabel] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if "," not in line:
                raise ManifestError(f"{path}:{lineno}: expected 'chunk_id,label_string'")
            chunk_id, label_string = line.split(",", 1)
            chunk_id = chunk_id.strip()
            if not chunk_id:
                raise ManifestError(f"{path}:{lineno}: empty chunk id")
            if chunk_id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate entry for chunk {chunk_id!r}")
            seen.add(chunk_id)
            try:
                tags = parse_label_string(label_string)
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            labels.append(ChunkLabel(chunk_id=chunk_id, tags=tags))
    return labels


def load_fold_assignments(path: str | Path) -> dict[str, int]:
    """Load a fold-assignment manifest: ``chunk_id,fold`` lines, folds in 1..5."""
    assignments: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ManifestError(f"{path}:{lineno}: expected 'chunk_id,fold'")
            chunk_id = parts[0].strip()
            try:
                fold = int(parts[1])
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: fold must be an integer") from exc
            if not 1 <= fold <= 5:
                raise ManifestError(f"{path}:{lineno}: fold {fold} outside 1..5")
            if chunk_id in assignments and assignments[chunk_id] != fold:
                raise ManifestError(
                    f"{path}:{lineno}: chunk {chunk_id!r} assigned to folds "
                    f"{assignments[chunk_id]} and {fold}"
                )
            assignments[chunk_id] = fold
    return assignments


def split_folds(
    labels: Sequence[ChunkLabel], fold_assignments: Mapping[str, int]
) -> list[FoldSplit]:
    """Build cross-validation splits from fold assignments.

    For fold k the evaluation set is the chunks assigned to k; the training
    set is every other labeled chunk, including chunks absent from the
    assignment manifest (those act as train-only extras in every fold).
    """
    all_ids = {lab.chunk_id for lab in labels}
    for chunk_id, fold in fold_assignments.items():
        if chunk_id not in all_ids:
            raise ManifestError(f"fold assignment references unknown chunk {chunk_id!r}")
        if not 1 <= fold <= 5:
            raise ManifestError(f"chunk {chunk_id!r}: fold {fold} outside 1..5")
    folds = sorted(set(fold_assignments.values()))
    splits = []
    for fold in folds:
        eval_ids = {cid for cid, f in fold_assignments.items() if f == fold}
        splits.append(
            FoldSplit(fold_index=fold, train_ids=all_ids - eval_ids, eval_ids=eval_ids)
        )
    return splits


@dataclass
class SynthConfig:
    """Generator settings for a separable synthetic corpus.

    Each tag is a fixed-frequency sinusoid (tag index i -> 300*(i+1) Hz by
    default) gated over a random sub-interval of the chunk; active tags are
    mixed over Gaussian background noise.
    """

    n_chunks: int = 100
    sample_rate: int = CANONICAL_SAMPLE_RATE
    duration_s: float = CANONICAL_DURATION_S
    activation_prob: dict[str, float] = field(
        default_factory=lambda: {t: 0.3 for t in TAGS}
    )
    tone_freqs: dict[str, float] = field(
        default_factory=lambda: {t: 300.0 * (i + 1) for i, t in enumerate(TAGS)}
    )
    tone_amplitude: float = 0.1
    noise_level: float = 0.02
    min_gate_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.n_chunks < 0:
            raise ConfigError("n_chunks must be non-negative")
        for tag, p in self.activation_prob.items():
            if tag not in TAGS:
                raise ConfigError(f"activation probability for unknown tag {tag!r}")
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"tag {tag!r}: activation probability {p} outside [0, 1]")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be non-negative")
        if not 0.0 < self.min_gate_fraction <= 1.0:
            raise ConfigError("min_gate_fraction must be in (0, 1]")


def synthesize_corpus(
    config: SynthConfig, seed: int
) -> tuple[list[AudioChunk], list[ChunkLabel]]:
    """Generate a labeled corpus deterministically from (config, seed).

    Every chunk mixes the sinusoid templates of its sampled tag set with
    background noise; the label records exactly the active tags.
    """
    rng = np.random.default_rng(seed)
    n_samples = int(round(config.duration_s * config.sample_rate))
    t = np.arange(n_samples) / config.sample_rate
    chunks: list[AudioChunk] = []
    labels: list[ChunkLabel] = []
    for i in range(config.n_chunks):
        chunk_id = f"synth{i:05d}"
        active = [tag for tag in TAGS if rng.random() < config.activation_prob.get(tag, 0.0)]
        samples = rng.normal(0.0, config.noise_level, size=n_samples)
        for tag in active:
            frac = rng.uniform(config.min_gate_fraction, 1.0)
            gate_len = int(round(frac * n_samples))
            start = int(rng.integers(0, n_samples - gate_len + 1))
            phase = rng.uniform(0.0, 2.0 * np.pi)
            tone = config.tone_amplitude * np.sin(
                2.0 * np.pi * config.tone_freqs[tag] * t[start : start + gate_len] + phase
            )
            samples[start : start + gate_len] += tone
        np.clip(samples, -1.0, 1.0, out=samples)
        chunks.append(AudioChunk(id=chunk_id, samples=samples, sample_rate=config.sample_rate))
        labels.append(ChunkLabel(chunk_id=chunk_id, tags=frozenset(active)))
    return chunks, labels


def round_robin_folds(chunk_ids: Iterable[str], n_folds: int = 5) -> dict[str, int]:
    """Assign chunks to folds 1..n_folds cyclically (for synthetic corpora)."""
    return {cid: (i % n_folds) + 1 for i, cid in enumerate(chunk_ids)}


def write_annotations(path: str | Path, labels: Sequence[ChunkLabel]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(f"{lab.chunk_id},{''.join(sorted(lab.tags))}\n")


def write_fold_assignments(path: str | Path, assignments: Mapping[str, int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cid in sorted(assignments):
            fh.write(f"{cid},{assignments[cid]}\n")
