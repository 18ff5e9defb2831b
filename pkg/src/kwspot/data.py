"""Data pipeline: manifests, keyword-clip construction, augmentation
policy, batch samplers, and the on-disk feature dataset.

Keyword occurrences arrive as manifest files (one JSON record per line)
produced by an external forced aligner; this module never runs alignment
itself.  Clips are cut to exactly 1 s with the keyword midpoint at the
clip midpoint, in two variants: silence-padded and with surrounding
audio context.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .audio import CANONICAL_RATE, AudioClip
from .augment import RESAMPLE_RANGE, SHIFT_RANGE, apply_rir, mix_at_snr, resample_rate, time_shift

CLIP_SECONDS = 1.0
MIN_WORD_CHARS = 4          # "more than three characters"
MANIFEST_FIELDS = ("audio_path", "word", "language", "start", "end", "speaker", "split")


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: str
    word: str
    language: str
    start: float
    end: float
    speaker: str
    split: str = "train"

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"word interval [{self.start}, {self.end}] is empty or reversed")
        if self.split not in ("train", "val"):
            raise ValueError(f"split must be 'train' or 'val', got {self.split!r}")

    @property
    def word_duration(self) -> float:
        return self.end - self.start

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)


def parse_manifest_line(line: str, lineno: int = 0) -> ManifestEntry:
    try:
        rec = json.loads(line)
        return ManifestEntry(
            audio_path=str(rec["audio_path"]),
            word=str(rec["word"]).lower(),
            language=str(rec["language"]),
            start=float(rec["start"]),
            end=float(rec["end"]),
            speaker=str(rec["speaker"]),
            split=str(rec.get("split", "train")),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ValueError(f"manifest line {lineno}: {e}") from e


def load_manifest(path):
    """Parse a manifest; returns (entries, n_filtered).

    Malformed lines raise with their line number.  Entries failing the
    ingest filters (word length <= 3 characters, duration > 1 s) are
    dropped and counted, mirroring the corpus-construction rules.
    """
    entries = []
    filtered = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            entry = parse_manifest_line(line, lineno)
            if len(entry.word) < MIN_WORD_CHARS or entry.word_duration > CLIP_SECONDS:
                filtered += 1
                continue
            entries.append(entry)
    return entries, filtered


def write_manifest(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(json.dumps({
                "audio_path": e.audio_path, "word": e.word, "language": e.language,
                "start": e.start, "end": e.end, "speaker": e.speaker, "split": e.split,
            }) + "\n")


# --------------------------------------------------------------------- clips


@dataclass
class KeywordClip:
    clip: AudioClip
    label: str
    variant: str        # "silence" | "context"


def extract_clip(source: AudioClip, entry: ManifestEntry, variant: str) -> KeywordClip:
    """Cut a 1 s keyword clip with the keyword centered at 0.5 s.

    silence: keyword samples centered, zeros elsewhere.
    context: the source window [mid - 0.5 s, mid + 0.5 s), zero-padded
    where it runs past the ends of the source.
    """
    if variant not in ("silence", "context"):
        raise ValueError(f"unknown clip variant {variant!r}")
    if entry.word_duration > CLIP_SECONDS:
        raise ValueError(f"word duration {entry.word_duration:.3f} s exceeds {CLIP_SECONDS} s")
    sr = source.sample_rate
    target = int(round(CLIP_SECONDS * sr))
    s = int(round(entry.start * sr))
    e = int(round(entry.end * sr))
    if s < 0 or e > len(source):
        raise ValueError(f"word interval [{entry.start}, {entry.end}] outside source audio")
    out = np.zeros(target, dtype=np.float64)
    if variant == "silence":
        word = source.samples[s:e]
        off = (target - len(word)) // 2
        out[off : off + len(word)] = word
    else:
        mid = int(round(entry.midpoint * sr))
        s0 = mid - target // 2
        lo = max(s0, 0)
        hi = min(s0 + target, len(source))
        out[lo - s0 : hi - s0] = source.samples[lo:hi]
    return KeywordClip(AudioClip(out, sr), entry.word, variant)


# --------------------------------------------------------------- augmentation

AUGMENT_CATEGORIES = ("speech", "music", "noise", "room", "none")

DEFAULT_SNR_RANGES = {
    "speech": (13.0, 20.0),
    "music": (5.0, 15.0),
    "noise": (0.0, 15.0),
}


@dataclass
class AugmentPolicy:
    """Category weights plus parameter ranges for the augmentation pipeline."""

    weights: dict = field(default_factory=lambda: {
        "speech": 0.2, "music": 0.2, "noise": 0.2, "room": 0.2, "none": 0.2})
    resample_range: tuple = RESAMPLE_RANGE
    shift_range: tuple = SHIFT_RANGE
    snr_ranges: dict = field(default_factory=lambda: dict(DEFAULT_SNR_RANGES))
    asset_dirs: dict = field(default_factory=dict)   # category -> directory of wavs
    synthetic_fallback: bool = True

    def __post_init__(self):
        unknown = set(self.weights) - set(AUGMENT_CATEGORIES)
        if unknown:
            raise ValueError(f"unknown augmentation categories: {sorted(unknown)}")
        vals = [self.weights.get(c, 0.0) for c in AUGMENT_CATEGORIES]
        if min(vals) < 0 or not math.isclose(sum(vals), 1.0, abs_tol=1e-9):
            raise ValueError("category weights must be nonnegative and sum to 1")

    def category_probs(self):
        return np.array([self.weights.get(c, 0.0) for c in AUGMENT_CATEGORIES])


def synthetic_noise(category: str, n: int, rng, rate: int = CANONICAL_RATE) -> AudioClip:
    """Seeded stand-in noise when no corpus directory is configured.

    noise: white; music: 1/f-shaped ("pink"); speech: amplitude-modulated
    pink noise (babble-like envelope).
    """
    white = rng.standard_normal(n)
    if category == "noise":
        out = white
    else:
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, d=1.0 / rate)
        shaping = 1.0 / np.sqrt(np.maximum(freqs, 1.0))
        out = np.fft.irfft(spec * shaping, n=n)
        if category == "speech":
            envelope = 0.5 + 0.5 * np.abs(np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * np.arange(n) / rate))
            out = out * envelope
    out = out / (np.max(np.abs(out)) + 1e-12) * 0.5
    return AudioClip(out, rate)


def synthetic_rir(rng, rate: int = CANONICAL_RATE) -> AudioClip:
    """Exponentially decaying random reflections after a unit direct path."""
    decay = rng.uniform(0.03, 0.08)
    n = int(decay * 4 * rate)
    t = np.arange(n) / rate
    h = rng.standard_normal(n) * np.exp(-t / decay) * 0.3
    h[0] = 1.0
    return AudioClip(h, rate)


def _random_asset(directory, rng, loader):
    import os

    names = sorted(x for x in os.listdir(directory) if x.lower().endswith(".wav"))
    if not names:
        raise ValueError(f"no wav assets in {directory}")
    return loader(os.path.join(directory, str(rng.choice(names))))


def _fit_length(samples: np.ndarray, target: int) -> np.ndarray:
    """Center-crop if long, symmetric zero-pad if short."""
    n = len(samples)
    if n == target:
        return samples
    if n > target:
        off = (n - target) // 2
        return samples[off : off + target]
    out = np.zeros(target, dtype=samples.dtype)
    off = (target - n) // 2
    out[off : off + n] = samples
    return out


def augment(kc: KeywordClip, policy: AugmentPolicy, seed) -> KeywordClip:
    """resample -> refit to 1 s -> time shift -> one category effect.

    Deterministic for a given seed.  Every step preserves the 1 s length.
    """
    from .audio import load_clip

    rng = np.random.default_rng(seed)
    target = len(kc.clip)
    factor = rng.uniform(*policy.resample_range)
    clip = resample_rate(kc.clip, factor)
    clip = AudioClip(_fit_length(clip.samples, target), clip.sample_rate)
    clip = time_shift(clip, rng.uniform(*policy.shift_range))

    category = AUGMENT_CATEGORIES[rng.choice(len(AUGMENT_CATEGORIES), p=policy.category_probs())]
    if category != "none":
        directory = policy.asset_dirs.get(category)
        if directory:
            asset = _random_asset(directory, rng, load_clip)
        elif policy.synthetic_fallback:
            asset = (synthetic_rir(rng, clip.sample_rate) if category == "room"
                     else synthetic_noise(category, target, rng, clip.sample_rate))
        else:
            raise ValueError(f"augmentation category {category!r} has no assets and no fallback")
        if category == "room":
            clip = apply_rir(clip, asset)
        else:
            snr = rng.uniform(*policy.snr_ranges[category])
            clip = mix_at_snr(clip, asset, snr)
    return KeywordClip(clip, kc.label, kc.variant)


# ------------------------------------------------------------------ samplers


def balanced_batches(labels, batch_size: int = 128, seed=0):
    """Uniform-over-classes batches (classes drawn with replacement, one
    uniformly drawn sample per drawn class).  ceil(N / batch_size) batches."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    by_class = {c: np.flatnonzero(labels == c) for c in classes}
    n_batches = -(-labels.size // batch_size)
    for _ in range(n_batches):
        picked = rng.choice(classes, size=batch_size, replace=True)
        yield np.array([by_class[c][rng.integers(len(by_class[c]))] for c in picked])


def pk_batches(labels, samples_per_class: int = 32, n_classes: int = 5, seed=0):
    """P-K sampling: each batch holds n_classes distinct classes with
    samples_per_class items each (with replacement only when a class is
    smaller than samples_per_class)."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    if len(classes) < n_classes:
        raise ValueError(f"need at least {n_classes} classes, got {len(classes)}")
    by_class = {c: np.flatnonzero(labels == c) for c in classes}
    batch_items = samples_per_class * n_classes
    n_batches = max(1, -(-labels.size // batch_items))
    for _ in range(n_batches):
        chosen = rng.choice(classes, size=n_classes, replace=False)
        idx = []
        for c in chosen:
            pool = by_class[c]
            replace_draw = len(pool) < samples_per_class
            idx.append(rng.choice(pool, size=samples_per_class, replace=replace_draw))
        batch = np.concatenate(idx)
        yield batch[rng.permutation(len(batch))]


# ------------------------------------------------------------------- dataset


@dataclass
class FeatureDataset:
    """In-memory feature corpus: stacked log-mel maps plus metadata."""

    features: np.ndarray          # (N, n_mels, T) float32
    labels: np.ndarray            # (N,) int64 word ids
    words: list                   # word id -> string
    is_val: np.ndarray            # (N,) bool
    languages: np.ndarray = None  # (N,) object/str, optional
    speakers: np.ndarray = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.is_val = np.asarray(self.is_val, dtype=bool)
        n = len(self.features)
        if not (len(self.labels) == len(self.is_val) == n):
            raise ValueError("features/labels/is_val length mismatch")

    @property
    def n_classes(self) -> int:
        return len(self.words)

    def train_indices(self):
        return np.flatnonzero(~self.is_val)

    def val_indices(self):
        return np.flatnonzero(self.is_val)

    def save(self, path):
        np.savez_compressed(
            path, features=self.features, labels=self.labels,
            words=np.array(self.words, dtype=object), is_val=self.is_val,
            languages=self.languages if self.languages is not None else np.array([]),
            speakers=self.speakers if self.speakers is not None else np.array([]))

    @classmethod
    def load(cls, path):
        z = np.load(path, allow_pickle=True)
        langs = z["languages"] if z["languages"].size else None
        speakers = z["speakers"] if z["speakers"].size else None
        return cls(z["features"], z["labels"], list(z["words"]), z["is_val"], langs, speakers)
