"""Core data types, the synthetic factorized dataset, smoothing and alignment.

The synthetic generator stands in for a real emotional talking-face corpus.
It is factorized by construction: lip-region blendshape channels are a pure
function of the spoken content, brow/eye channels are a pure function of the
emotion and its level. That factorization gives exact ground truth for every
cross combination of content and emotion, which is what makes the
cross-reconstruction training objective verifiable down to the bit.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import wave
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.signal import savgol_filter

SAMPLE_RATE = 16000
FPS = 30
N_CHANNELS = 52

# Channel regions (recorded in mask files so the rig shares the convention):
# 0-27 lip, 28-43 brow/eye, 44-51 other.
LIP_CHANNELS = np.arange(0, 28)
BROW_CHANNELS = np.arange(28, 44)
OTHER_CHANNELS = np.arange(44, 52)

CHANNEL_NAMES = (
    [f"lip_{i:02d}" for i in range(28)]
    + [f"brow_{i:02d}" for i in range(16)]
    + [f"other_{i:02d}" for i in range(8)]
)


class NoValidPairError(RuntimeError):
    """Raised when a dataset cannot supply a cross-reconstruction pair."""


@dataclass
class AudioClip:
    """Mono waveform at 16 kHz with its factor labels."""

    samples: np.ndarray
    content_id: int
    emotion_id: int
    level: int
    speaker_id: int
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise ValueError("samples must be a 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")
        if len(self.samples) < SAMPLE_RATE // FPS:
            raise ValueError("clip shorter than one frame of audio")
        for name in ("content_id", "emotion_id", "level", "speaker_id"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.level not in (0, 1):
            raise ValueError("level must be 0 or 1")

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass
class BlendshapeSequence:
    """T x 52 coefficient matrix at a fixed frame rate."""

    coeffs: np.ndarray
    fps: int = FPS

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != N_CHANNELS:
            raise ValueError(f"coeffs must be T x {N_CHANNELS}, got {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coeffs must be finite")

    @property
    def n_frames(self) -> int:
        return self.coeffs.shape[0]


@dataclass
class FeatureSequence:
    """T x D frame-aligned feature matrix."""

    values: np.ndarray
    fps: float = FPS

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError("values must be a T x D matrix with T >= 1")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class CrossPair:
    """Two clips sharing a speaker, plus ground truth for all four
    (content, emotion) combinations they span.

    audio_a carries (c1, e2), audio_b carries (c2, e1)."""

    audio_a: AudioClip
    audio_b: AudioClip
    gt_c1e1: BlendshapeSequence
    gt_c2e2: BlendshapeSequence
    gt_c1e2: BlendshapeSequence
    gt_c2e1: BlendshapeSequence

    def __post_init__(self):
        if self.audio_a.speaker_id != self.audio_b.speaker_id:
            raise ValueError("cross pairs must share a speaker")
        if self.audio_a.content_id == self.audio_b.content_id:
            raise ValueError("cross pairs need distinct contents")
        if self.audio_a.emotion_id == self.audio_b.emotion_id:
            raise ValueError("cross pairs need distinct emotions")


def frames_for_audio(n_samples: int, sample_rate: int = SAMPLE_RATE, fps: int = FPS) -> int:
    """Number of visual frames aligned to an audio length, floored at 1."""
    if n_samples <= 0 or sample_rate <= 0 or fps <= 0:
        raise ValueError("all arguments must be positive")
    return max(1, int(round(n_samples * fps / sample_rate)))


def savgol_smooth(seq: BlendshapeSequence, window: int = 5, order: int = 2) -> BlendshapeSequence:
    """Savitzky-Golay smoothing per channel.

    Edges are handled by fitting a polynomial to the boundary window, which
    keeps the filter exact on polynomial tracks of degree <= order over the
    whole sequence, endpoints included.
    """
    if window % 2 != 1:
        raise ValueError("window must be odd")
    if order >= window:
        raise ValueError("order must be < window")
    if seq.n_frames < window:
        raise ValueError(f"need at least {window} frames, got {seq.n_frames}")
    smoothed = savgol_filter(seq.coeffs, window, order, axis=0, mode="interp")
    return BlendshapeSequence(coeffs=smoothed, fps=seq.fps)


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def synth_blendshapes(content_id: int, emotion_id: int, level: int, n_frames: int,
                      fps: int = FPS) -> BlendshapeSequence:
    """Ground-truth coefficients for a (content, emotion, level) cell.

    Lip channels depend only on (content_id, t); brow/eye channels only on
    (emotion_id, level, t); the remainder is a fixed idle motion. All values
    stay inside [0, 1].
    """
    t = np.arange(n_frames) / fps
    coeffs = np.empty((n_frames, N_CHANNELS))
    for k in LIP_CHANNELS:
        rng = _rng(11, content_id, k)
        freq = rng.uniform(0.5, 3.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.15, 0.4)
        coeffs[:, k] = 0.5 + amp * np.sin(2.0 * np.pi * freq * t + phase)
    for k in BROW_CHANNELS:
        rng = _rng(22, emotion_id, k)
        freq = rng.uniform(0.2, 1.5)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        base = rng.uniform(0.35, 0.65)
        amp = rng.uniform(0.1, 0.25) * (0.5 + 0.5 * level)
        coeffs[:, k] = base + amp * np.sin(2.0 * np.pi * freq * t + phase)
    for k in OTHER_CHANNELS:
        coeffs[:, k] = 0.5 + 0.1 * np.sin(2.0 * np.pi * 0.7 * t + k)
    return BlendshapeSequence(coeffs=np.clip(coeffs, 0.0, 1.0), fps=fps)


def synth_clip(content_id: int, emotion_id: int, level: int, speaker_id: int,
               duration_s: float, seed: int,
               n_contents: int | None = None, n_emotions: int | None = None,
               n_speakers: int | None = None) -> tuple[AudioClip, BlendshapeSequence]:
    """Generate one synthetic clip and its exact blendshape ground truth.

    The audio is a content-coded harmonic carrier (short-term spectrum carries
    content) modulated by an emotion-coded low-frequency amplitude envelope
    (long-term dynamics carry emotion), with speaker-dependent timbre and a
    small seed-dependent noise floor. Pure function of its arguments.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    for name, value, bound in (
        ("content_id", content_id, n_contents),
        ("emotion_id", emotion_id, n_emotions),
        ("speaker_id", speaker_id, n_speakers),
    ):
        if value < 0:
            raise ValueError(f"{name} must be nonnegative")
        if bound is not None and value >= bound:
            raise ValueError(f"{name}={value} out of range [0, {bound})")
    if level not in (0, 1):
        raise ValueError("level must be 0 or 1")

    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    f0 = 150.0 + 35.0 * content_id
    timbre = _rng(33, speaker_id)
    weights = timbre.uniform(0.3, 1.0, size=3)
    weights /= weights.sum()
    carrier = np.zeros(n)
    for h, w in enumerate(weights, start=1):
        phase = _rng(34, content_id, h).uniform(0.0, 2.0 * np.pi)
        carrier += w * np.sin(2.0 * np.pi * f0 * h * t + phase)

    erng = _rng(44, emotion_id)
    rate = erng.uniform(1.0, 4.0)
    depth = erng.uniform(0.3, 0.6) * (0.5 + 0.5 * level)
    offset = erng.uniform(-0.2, 0.2)
    psi = erng.uniform(0.0, 2.0 * np.pi)
    envelope = 1.0 + offset + depth * np.sin(2.0 * np.pi * rate * t + psi)

    noise = 0.01 * _rng(55, seed, content_id, emotion_id, level, speaker_id).standard_normal(n)
    samples = np.clip(0.3 * envelope * carrier + noise, -1.0, 1.0)

    clip = AudioClip(samples=samples, content_id=content_id, emotion_id=emotion_id,
                     level=level, speaker_id=speaker_id)
    gt = synth_blendshapes(content_id, emotion_id, level, frames_for_audio(n))
    return clip, gt


@dataclass
class DatasetSpec:
    """Factor grid for a synthetic dataset."""

    n_contents: int = 3
    n_emotions: int = 3
    n_speakers: int = 2
    clips_per_cell: int = 2
    duration_s: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_contents", "n_emotions", "n_speakers", "clips_per_cell"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")


@dataclass
class ClipRecord:
    clip: AudioClip
    gt: BlendshapeSequence
    clip_index: int = 0


class ClipDataset:
    """In-memory collection of clips with ground truth."""

    def __init__(self, records: list[ClipRecord]):
        self.records = list(records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @classmethod
    def generate(cls, spec: DatasetSpec) -> "ClipDataset":
        records = []
        for s in range(spec.n_speakers):
            for c in range(spec.n_contents):
                for e in range(spec.n_emotions):
                    for k in range(spec.clips_per_cell):
                        clip, gt = synth_clip(
                            c, e, k % 2, s, spec.duration_s,
                            seed=spec.seed * 100003 + k,
                            n_contents=spec.n_contents,
                            n_emotions=spec.n_emotions,
                            n_speakers=spec.n_speakers,
                        )
                        records.append(ClipRecord(clip=clip, gt=gt, clip_index=k))
        return cls(records)

    def split(self, holdout_per_cell: int = 1) -> tuple["ClipDataset", "ClipDataset"]:
        """Hold out the highest-index clips of every factor cell."""
        max_index = max(r.clip_index for r in self.records)
        cut = max_index - holdout_per_cell + 1
        train = [r for r in self.records if r.clip_index < cut]
        test = [r for r in self.records if r.clip_index >= cut]
        if not train or not test:
            raise ValueError("split would leave an empty partition")
        return ClipDataset(train), ClipDataset(test)


def sample_cross_pair(dataset: ClipDataset, rng: np.random.Generator) -> CrossPair:
    """Draw a same-speaker pair with distinct contents and distinct emotions.

    Ground truth for the two swapped combinations is synthesized exactly: the
    emotion factor (and its level) comes from the other clip of the pair.
    """
    candidates = []
    for i, a in enumerate(dataset.records):
        for j, b in enumerate(dataset.records):
            if i == j:
                continue
            if (a.clip.speaker_id == b.clip.speaker_id
                    and a.clip.content_id != b.clip.content_id
                    and a.clip.emotion_id != b.clip.emotion_id):
                candidates.append((i, j))
    if not candidates:
        raise NoValidPairError(
            "dataset has no same-speaker pair with distinct contents and emotions")
    i, j = candidates[int(rng.integers(len(candidates)))]
    return make_cross_pair(dataset.records[i], dataset.records[j])


def make_cross_pair(rec_a: ClipRecord, rec_b: ClipRecord) -> CrossPair:
    a, b = rec_a.clip, rec_b.clip
    gt_c1e1 = synth_blendshapes(a.content_id, b.emotion_id, b.level, rec_a.gt.n_frames)
    gt_c2e2 = synth_blendshapes(b.content_id, a.emotion_id, a.level, rec_b.gt.n_frames)
    return CrossPair(audio_a=a, audio_b=b,
                     gt_c1e1=gt_c1e1, gt_c2e2=gt_c2e2,
                     gt_c1e2=rec_a.gt, gt_c2e1=rec_b.gt)


# ---------------------------------------------------------------------------
# File formats: 16 kHz mono PCM16 WAV, blendshape CSV, plain-text masks.

def write_wav(path: str | os.PathLike, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype(np.int16)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(clip.sample_rate)
        f.writeframes(pcm.tobytes())


def read_wav(path: str | os.PathLike, content_id: int = 0, emotion_id: int = 0,
             level: int = 0, speaker_id: int = 0) -> AudioClip:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValueError("expected mono PCM16 WAV")
        if f.getframerate() != SAMPLE_RATE:
            raise ValueError(f"expected {SAMPLE_RATE} Hz, got {f.getframerate()}")
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype=np.int16).astype(np.float64) / 32767.0
    return AudioClip(samples=samples, content_id=content_id, emotion_id=emotion_id,
                     level=level, speaker_id=speaker_id)


def write_blendshape_csv(path: str | os.PathLike, seq: BlendshapeSequence) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# fps={seq.fps}\n")
        writer = csv.writer(f)
        writer.writerow(CHANNEL_NAMES)
        for row in seq.coeffs:
            writer.writerow([repr(float(v)) for v in row])


def read_blendshape_csv(path: str | os.PathLike) -> BlendshapeSequence:
    with open(path, newline="") as f:
        first = f.readline()
        if not first.startswith("# fps="):
            raise ValueError("missing '# fps=' header line")
        fps = int(first.strip().split("=", 1)[1])
        reader = csv.reader(f)
        header = next(reader)
        if header != CHANNEL_NAMES:
            raise ValueError("unexpected channel header")
        rows = [[float(v) for v in row] for row in reader if row]
    return BlendshapeSequence(coeffs=np.array(rows), fps=fps)


def write_mask(path: str | os.PathLike, indices: np.ndarray) -> None:
    with open(path, "w") as f:
        for i in np.asarray(indices).ravel():
            f.write(f"{int(i)}\n")


def read_mask(path: str | os.PathLike) -> np.ndarray:
    with open(path) as f:
        return np.array([int(line) for line in f if line.strip()], dtype=np.int64)


def write_dataset(out_dir: str | os.PathLike, spec: DatasetSpec,
                  smooth: bool = False) -> dict:
    """Materialize a dataset as WAV + CSV files plus a manifest JSON."""
    out_dir = str(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    dataset = ClipDataset.generate(spec)
    clips = []
    for rec in dataset:
        c = rec.clip
        stem = (f"clip_c{c.content_id:02d}_e{c.emotion_id:02d}_l{c.level}"
                f"_s{c.speaker_id:02d}_k{rec.clip_index}")
        gt = savgol_smooth(rec.gt) if smooth else rec.gt
        write_wav(os.path.join(out_dir, stem + ".wav"), c)
        write_blendshape_csv(os.path.join(out_dir, stem + ".csv"), gt)
        clips.append({
            "wav": stem + ".wav", "csv": stem + ".csv",
            "content_id": c.content_id, "emotion_id": c.emotion_id,
            "level": c.level, "speaker_id": c.speaker_id,
            "clip_index": rec.clip_index,
        })
    manifest = {
        "sample_rate": SAMPLE_RATE, "fps": FPS, "smooth": smooth,
        "spec": asdict(spec), "clips": clips,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def load_dataset(data_dir: str | os.PathLike) -> tuple[ClipDataset, dict]:
    """Read a dataset directory written by write_dataset."""
    data_dir = str(data_dir)
    with open(os.path.join(data_dir, "manifest.json")) as f:
        manifest = json.load(f)
    records = []
    for entry in manifest["clips"]:
        clip = read_wav(os.path.join(data_dir, entry["wav"]),
                        content_id=entry["content_id"], emotion_id=entry["emotion_id"],
                        level=entry["level"], speaker_id=entry["speaker_id"])
        gt = read_blendshape_csv(os.path.join(data_dir, entry["csv"]))
        records.append(ClipRecord(clip=clip, gt=gt, clip_index=entry["clip_index"]))
    return ClipDataset(records), manifest


def manifest_hash(manifest: dict) -> str:
    blob = json.dumps(manifest, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
