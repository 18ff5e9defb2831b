"""Evaluation: EER / DET curves, streaming event matching, FNR at an
FA-per-hour budget, and the three test-protocol builders (few-shot
classification, keyword-spotting streams, keyword-search streams)."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip
from .enroll import enroll, score_matrix
from .streaming import StreamConfig, detect_from_scores

# ------------------------------------------------------------------ EER / DET


def det_points(pos_scores, neg_scores):
    """Operating points over the union of scores (decision: score > t).

    Returns (thresholds, fpr, fnr) with a leading below-minimum threshold,
    so the curve always spans (fpr=1, fnr=0) ... (fpr=0, fnr=1).
    """
    pos = np.sort(np.asarray(pos_scores, dtype=np.float64))
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need both positive and negative scores")
    taus = np.unique(np.concatenate([pos, neg]))
    taus = np.concatenate([[taus[0] - 1.0], taus])
    fnr = np.searchsorted(pos, taus, side="right") / pos.size
    fpr = 1.0 - np.searchsorted(neg, taus, side="right") / neg.size
    return taus, fpr, fnr


def compute_eer(pos_scores, neg_scores):
    """Equal error rate and its threshold.

    Sweeps the union of scores and linearly interpolates between the two
    adjacent operating points where FNR crosses FPR.
    """
    taus, fpr, fnr = det_points(pos_scores, neg_scores)
    diff = fnr - fpr
    i = int(np.argmax(diff >= 0))           # first crossing; diff[0] = -1
    d0, d1 = diff[i - 1], diff[i]
    t = 0.0 if d1 == d0 else -d0 / (d1 - d0)
    eer = fnr[i - 1] + t * (fnr[i] - fnr[i - 1])
    threshold = taus[i - 1] + t * (taus[i] - taus[i - 1])
    return float(eer), float(threshold)


# --------------------------------------------------------------- event match


def match_events(detection_times, truth_times, tolerance: float = 0.75):
    """Greedy one-to-one matching in time order.

    Each detection (ascending time) claims the earliest unmatched truth
    within ``tolerance`` seconds.  Returns (tp, fn, fa).
    """
    det = np.asarray(detection_times, dtype=np.float64)
    tru = np.asarray(truth_times, dtype=np.float64)
    if np.any(np.diff(det) < 0):
        raise ValueError("detections must be time-sorted")
    if np.any(np.diff(tru) < 0):
        raise ValueError("ground truths must be time-sorted")
    matched = np.zeros(tru.size, dtype=bool)
    tp = fa = 0
    for t in det:
        cand = np.flatnonzero(~matched & (np.abs(tru - t) <= tolerance))
        if cand.size:
            matched[cand[0]] = True
            tp += 1
        else:
            fa += 1
    return tp, int(tru.size - tp), fa


def fa_per_hour(fa_count: int, duration_hours: float) -> float:
    if duration_hours <= 0:
        raise ValueError("duration must be positive")
    return fa_count / duration_hours


# ------------------------------------------------------- few-shot protocols


@dataclass
class KeywordEvalResult:
    keyword: str
    eer: float
    threshold: float
    top1: float
    n_pos: int
    n_neg: int


@dataclass
class ProtocolResult:
    results: list
    skipped: list
    mean_eer: float
    mean_top1: float


def classification_protocol(recordings, embed_fn, n_examples: int = 5, seed=0,
                            languages=None) -> ProtocolResult:
    """Each word once as target: enroll n random examples, score the rest
    as positives against all other same-language words as negatives.

    ``recordings`` maps word -> (n_i, n_mels, T) feature arrays;
    ``embed_fn`` maps a feature batch to (n_i, D) embeddings;
    ``languages`` (optional) maps word -> language tag.
    """
    words = sorted(recordings)
    rng = np.random.default_rng(seed)
    embeddings = {w: np.asarray(embed_fn(np.asarray(recordings[w]))) for w in words}
    lang_of = (lambda w: languages[w]) if languages else (lambda w: "")

    examples, positives = {}, {}
    skipped = []
    for w in words:
        n = len(embeddings[w])
        if n <= n_examples:
            skipped.append(w)
            warnings.warn(f"keyword {w!r} skipped: {n} recordings <= {n_examples} examples",
                          stacklevel=2)
            continue
        pick = rng.choice(n, size=n_examples, replace=False)
        rest = np.setdiff1d(np.arange(n), pick)
        examples[w] = pick
        positives[w] = rest
    usable = [w for w in words if w not in skipped]
    profiles = {w: enroll(w, embeddings[w][examples[w]]) for w in usable}

    results = []
    for w in usable:
        same_lang = [v for v in usable if v != w and lang_of(v) == lang_of(w)]
        pos_emb = embeddings[w][positives[w]]
        pos = score_matrix([profiles[w]], pos_emb)[0]
        neg_emb = [embeddings[v] for v in words if v != w and lang_of(v) == lang_of(w)]
        if not neg_emb:
            skipped.append(w)
            warnings.warn(f"keyword {w!r} skipped: no same-language negatives", stacklevel=2)
            continue
        neg = score_matrix([profiles[w]], np.concatenate(neg_emb))[0]
        eer, thr = compute_eer(pos, neg)
        if same_lang:
            distract = score_matrix([profiles[v] for v in same_lang], pos_emb)
            top1 = float(np.mean(pos > distract.max(axis=0)))
        else:
            top1 = 1.0
        results.append(KeywordEvalResult(w, eer, thr, top1, len(pos), len(neg)))
    mean_eer = float(np.mean([r.eer for r in results])) if results else float("nan")
    mean_top1 = float(np.mean([r.top1 for r in results])) if results else float("nan")
    return ProtocolResult(results, skipped, mean_eer, mean_top1)


def mean_few_shot_eer(embeddings, labels, n_examples: int = 5, seed=0) -> float:
    """Mean per-class enrollment EER over precomputed embeddings."""
    embeddings = np.asarray(embeddings)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    eers = []
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        if rows.size <= n_examples:
            continue
        pick = rng.choice(rows, size=n_examples, replace=False)
        rest = np.setdiff1d(rows, pick)
        profile = enroll(str(c), embeddings[pick])
        pos = score_matrix([profile], embeddings[rest])[0]
        neg = score_matrix([profile], embeddings[labels != c])[0]
        eers.append(compute_eer(pos, neg)[0])
    if not eers:
        raise ValueError("no class has more recordings than n_examples")
    return float(np.mean(eers))


# ------------------------------------------------------------ stream builders


@dataclass
class GroundTruthEvent:
    keyword: str
    time: float


@dataclass
class StreamTestSet:
    audio: AudioClip
    truths: list
    duration_hours: float

    def __post_init__(self):
        times = [t.time for t in self.truths]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("truth times must be strictly increasing")
        if times and (times[0] < 0 or times[-1] > self.audio.duration):
            raise ValueError("truth time outside the stream")

    @property
    def truth_times(self):
        return np.array([t.time for t in self.truths])


def _concat_stream(keyword, items, seed):
    """items: list of (clip, truth_offset_or_None); random interleave."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(items))
    rate = items[0][0].sample_rate
    segments, truths = [], []
    offset = 0.0
    for i in order:
        clip, mark = items[i]
        if clip.sample_rate != rate:
            raise ValueError("all stream material must share one sample rate")
        segments.append(clip.samples)
        if mark is not None:
            truths.append(GroundTruthEvent(keyword, offset + mark))
        offset += clip.duration
    audio = AudioClip(np.concatenate(segments), rate)
    truths.sort(key=lambda t: t.time)
    return StreamTestSet(audio, truths, audio.duration / 3600.0)


def build_kws_stream(keyword: str, target_clips, filler_sentences, seed=0) -> StreamTestSet:
    """Wake-word style stream: isolated keyword clips interleaved with
    filler sentences; truth time is the center of each target clip."""
    if not target_clips:
        raise ValueError("need at least one target clip")
    items = [(c, c.duration / 2.0) for c in target_clips]
    items += [(c, None) for c in filler_sentences]
    return _concat_stream(keyword, items, seed)


def build_search_stream(keyword: str, sentences_with_keyword, filler_sentences,
                        seed=0) -> StreamTestSet:
    """Keyword-search stream: sentences containing the keyword (given as
    (clip, keyword_midpoint_seconds)) interleaved with fillers."""
    if not sentences_with_keyword:
        raise ValueError("need at least one sentence containing the keyword")
    items = []
    for clip, mid in sentences_with_keyword:
        if mid is None or not (0 <= mid <= clip.duration):
            raise ValueError("keyword alignment missing or outside its sentence")
        items.append((clip, mid))
    items += [(c, None) for c in filler_sentences]
    return _concat_stream(keyword, items, seed)


# ---------------------------------------------------------------- FNR @ FA/h


@dataclass
class TraceSet:
    """One stream's score trace plus its ground truth."""

    times: np.ndarray
    scores: np.ndarray
    truth_times: np.ndarray
    duration_hours: float


@dataclass
class FnrAtFaResult:
    fnr: float
    threshold: float
    fa_per_hour: float
    target_met: bool


def _counts_at(threshold: float, trace_sets, suppression: float, tolerance: float):
    cfg = StreamConfig(threshold=threshold, suppression=suppression)
    tp = fn = fa = 0
    for ts in trace_sets:
        events = detect_from_scores(ts.times, ts.scores[None, :], ["kw"], cfg)
        a, b, c = match_events([e.time for e in events], ts.truth_times, tolerance)
        tp, fn, fa = tp + a, fn + b, fa + c
    return tp, fn, fa


def fnr_at_fa(trace_sets, target_fa_per_hour: float, suppression: float = 1.0,
              tolerance: float = 0.75) -> FnrAtFaResult:
    """FNR at the lowest threshold reachable without the false-alarm rate
    exceeding the budget.

    Sweeps candidate thresholds (the union of trace scores) from high to
    low, applying suppression and truth matching at each; stops just above
    the first threshold whose FA/h exceeds the target.
    """
    trace_sets = list(trace_sets)
    hours = sum(ts.duration_hours for ts in trace_sets)
    if hours <= 0:
        raise ValueError("total duration must be positive")
    n_truth = sum(len(ts.truth_times) for ts in trace_sets)
    candidates = np.unique(np.concatenate([ts.scores for ts in trace_sets]))[::-1]
    best = None
    for tau in candidates:
        tp, fn, fa = _counts_at(float(tau), trace_sets, suppression, tolerance)
        rate = fa_per_hour(fa, hours)
        if rate > target_fa_per_hour:
            break
        fnr = fn / n_truth if n_truth else 0.0
        best = FnrAtFaResult(fnr, float(tau), rate, True)
    if best is None:
        return FnrAtFaResult(1.0, float(candidates[0]), float("inf"), False)
    return best


def det_csv(taus, fpr, fnr) -> str:
    return "".join(f"{t:.6f},{a:.6f},{b:.6f}\n" for t, a, b in zip(taus, fpr, fnr))


def fa_fnr_csv(entries) -> str:
    """(threshold, fa_per_hour, fnr) rows for streaming DET export."""
    return "".join(f"{t:.6f},{a:.6f},{b:.6f}\n" for t, a, b in entries)


def streaming_det_points(trace_sets, suppression: float = 1.0, tolerance: float = 0.75):
    """(threshold, fa_per_hour, fnr) at every candidate threshold."""
    trace_sets = list(trace_sets)
    hours = sum(ts.duration_hours for ts in trace_sets)
    n_truth = sum(len(ts.truth_times) for ts in trace_sets)
    out = []
    for tau in np.unique(np.concatenate([ts.scores for ts in trace_sets]))[::-1]:
        tp, fn, fa = _counts_at(float(tau), trace_sets, suppression, tolerance)
        out.append((float(tau), fa_per_hour(fa, hours), fn / n_truth if n_truth else 0.0))
    return out
