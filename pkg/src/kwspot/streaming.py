"""Streaming keyword detector.

Slides a 1 s window with 0.1 s stride over continuous audio, embeds each
window, scores it against the enrolled profiles, and emits detection
events under strict-threshold + per-keyword suppression rules.  Event
timestamps are window centers.

When the stride is a whole number of feature hops (the default 0.1 s /
0.01 s is), mel energies are computed once over the whole stream and each
window is a slice re-normalized on its own max, which is sample-exact
equivalent to running the frontend per window.
"""

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .features import FrontendConfig, compute_logmel, frame_count, mel_energies, normalize_log


@dataclass(frozen=True)
class StreamConfig:
    window: float = 1.0
    stride: float = 0.1
    suppression: float = 1.0
    threshold: float = 0.5

    def __post_init__(self):
        if self.window <= 0:
            raise ValueError("window must be positive")
        if not (0 < self.stride <= self.window):
            raise ValueError("require 0 < stride <= window")
        if self.suppression < 0:
            raise ValueError("suppression must be >= 0")
        if not (-1.0 <= self.threshold <= 1.0):
            raise ValueError("threshold must be in [-1, 1]")


@dataclass
class DetectionEvent:
    keyword: str
    time: float         # window center, seconds
    score: float


_SPACING_EPS = 1e-9


def n_windows(n_samples: int, rate: int, cfg: StreamConfig) -> int:
    """Windows at t = 0, stride, 2*stride, ... while t + window <= duration."""
    win = int(round(cfg.window * rate))
    hop = int(round(cfg.stride * rate))
    if n_samples < win:
        raise ValueError("audio shorter than one window")
    return (n_samples - win) // hop + 1


def window_centers(n_samples: int, rate: int, cfg: StreamConfig) -> np.ndarray:
    n = n_windows(n_samples, rate, cfg)
    return np.arange(n) * cfg.stride + cfg.window / 2.0


def window_feature_maps(audio: AudioClip, cfg: StreamConfig,
                        frontend: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """(n_windows, n_mels, T_win) log-mel maps, one per sliding window."""
    rate = audio.sample_rate
    win = int(round(cfg.window * rate))
    hop = int(round(cfg.stride * rate))
    n_win = n_windows(len(audio), rate, cfg)
    feat_hop = frontend.hop_samples(rate)
    t_win = frame_count(win, frontend.window_samples(rate), feat_hop)
    out = np.empty((n_win, frontend.n_mels, t_win), dtype=np.float32)
    if hop % feat_hop == 0:
        step = hop // feat_hop
        energies = mel_energies(audio, frontend)
        for i in range(n_win):
            sl = energies[:, i * step : i * step + t_win]
            out[i] = normalize_log(sl, frontend.floor_eps)
    else:
        for i in range(n_win):
            seg = AudioClip(audio.samples[i * hop : i * hop + win], rate)
            out[i] = compute_logmel(seg, frontend).values
    return out


def score_traces(audio: AudioClip, model, profiles, cfg: StreamConfig,
                 frontend: FrontendConfig = FrontendConfig(), chunk: int = 128):
    """Per-window, per-profile cosine scores: (times, scores[k, i])."""
    from .enroll import score_matrix

    if not profiles:
        raise ValueError("no profiles enrolled")
    feats = window_feature_maps(audio, cfg, frontend)
    times = window_centers(len(audio), audio.sample_rate, cfg)
    scores = np.empty((len(profiles), len(feats)))
    for lo in range(0, len(feats), chunk):
        emb = model.embed(feats[lo : lo + chunk])
        scores[:, lo : lo + emb.shape[0]] = score_matrix(profiles, emb)
    return times, scores


def score_trace(audio: AudioClip, model, profile, cfg: StreamConfig,
                frontend: FrontendConfig = FrontendConfig()):
    """Single-profile trace: (times, scores) with one score per window."""
    times, scores = score_traces(audio, model, [profile], cfg, frontend)
    return times, scores[0]


def detect_from_scores(times, scores, keywords, cfg: StreamConfig):
    """Threshold + per-keyword suppression over a score trace.

    Per window the best-scoring keyword is considered; it is emitted when
    its score strictly exceeds the threshold and that keyword's previous
    emission lies at least ``suppression`` seconds back.
    """
    times = np.asarray(times, dtype=np.float64)
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if scores.shape != (len(keywords), len(times)):
        raise ValueError(f"scores shape {scores.shape} != (n_keywords, n_windows)")
    last = {}
    events = []
    for i, t in enumerate(times):
        k = int(np.argmax(scores[:, i]))
        s = scores[k, i]
        if s <= cfg.threshold:
            continue
        kw = keywords[k]
        prev = last.get(kw)
        if prev is None or t - prev >= cfg.suppression - _SPACING_EPS:
            events.append(DetectionEvent(kw, float(t), float(s)))
            last[kw] = t
    return events


def stream_detect(audio: AudioClip, model, profiles, cfg: StreamConfig,
                  frontend: FrontendConfig = FrontendConfig()):
    """Run the full streaming pipeline and return detection events."""
    times, scores = score_traces(audio, model, profiles, cfg, frontend)
    return detect_from_scores(times, scores, [p.keyword for p in profiles], cfg)


# ------------------------------------------------------------------ exporters


def format_event(e: DetectionEvent) -> str:
    return f"{e.keyword}\t{e.time:.3f}\t{e.score:.4f}"


def events_to_text(events) -> str:
    return "".join(format_event(e) + "\n" for e in events)


def trace_to_csv(times, scores) -> str:
    """Comma-separated (time, score) rows for DET tooling."""
    return "".join(f"{t:.3f},{s:.6f}\n" for t, s in zip(times, scores))


def trace_from_csv(text: str):
    times, scores = [], []
    for line in text.strip().splitlines():
        t, s = line.split(",")
        times.append(float(t))
        scores.append(float(s))
    return np.asarray(times), np.asarray(scores)
