"""Command-line entry point.

One binary, subcommand style.  Options may come from a plain-text config
file (``key = value``); explicit flags win.  Artifacts are written
atomically (temp file + rename); rerunning any verb with identical inputs
and ``--seed`` reproduces byte-identical artifacts.  Diagnostics go to
stderr, data to stdout.  Exit codes: 0 success, 1 validation error,
2 runtime error.
"""

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .audio import AudioClip, load_clip, read_wav
from .backend import NUMBA_ENABLED, backend_name
from .checkpoint import atomic_write_text
from .data import (
    AugmentPolicy,
    FeatureDataset,
    KeywordClip,
    augment,
    extract_clip,
    load_manifest,
)
from .enroll import enroll, enroll_from_phonemes, load_profiles, save_profiles
from .features import FrontendConfig, compute_logmel
from .losses import CircleParams
from .metrics import (
    TraceSet,
    classification_protocol,
    det_csv,
    det_points,
    fa_fnr_csv,
    fnr_at_fa,
    build_kws_stream,
    build_search_stream,
    streaming_det_points,
)
from .models import (
    ClassifierHead,
    EmbeddingModelSpec,
    EmbeddingNet,
    P2ESpec,
    PhonemeEncoder,
    load_embedding_model,
    load_p2e_model,
    save_embedding_model,
    save_p2e_model,
)
from .streaming import StreamConfig, events_to_text, score_trace, stream_detect, trace_to_csv
from .training import (
    TrainConfig,
    baseline_config,
    circle_config,
    classifier_config,
    finetune_baseline3,
    finetune_circle,
    load_config_file,
    train_classifier,
    train_config_from_dict,
    train_p2e,
)


class UsageError(Exception):
    """Bad options or invalid input files; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _progress(quiet: bool):
    def emit(record: dict):
        if quiet:
            return
        line = " ".join(f"{k}={_fmt(v)}" for k, v in record.items())
        print(line, file=sys.stderr)

    return emit


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _atomic_npz(path, save_fn):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".npz")
    os.close(fd)
    try:
        save_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require_files(*paths):
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise UsageError(f"input not found: {p}")


def _model_spec_from(cfg_dict, args) -> EmbeddingModelSpec:
    def pick(flag, key):
        return flag if flag is not None else cfg_dict.get(key)

    kw = {}
    channels = pick(getattr(args, "channels", None), "channels")
    blocks = pick(getattr(args, "blocks", None), "blocks")
    if channels:
        kw["stage_channels"] = tuple(int(x) for x in str(channels).split(","))
    if blocks:
        kw["stage_blocks"] = tuple(int(x) for x in str(blocks).split(","))
    return EmbeddingModelSpec(**kw)


def _train_cfg(args, base: TrainConfig) -> TrainConfig:
    values = load_config_file(args.config) if args.config else {}
    cfg = train_config_from_dict(values, base)
    overrides = {}
    for key in ("epochs", "initial_lr", "batch_size", "seed"):
        v = getattr(args, key.replace("initial_lr", "lr"), None)
        if v is not None:
            overrides[key if key != "initial_lr" else "initial_lr"] = v
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg, values


def _write_report(args, report):
    if getattr(args, "report", None):
        atomic_write_text(args.report, report.to_jsonl())


# ---------------------------------------------------------------------- verbs


def cmd_prepare(args) -> int:
    _require_files(args.manifest)
    if not os.path.isdir(args.audio_root):
        raise UsageError(f"audio root is not a directory: {args.audio_root}")
    entries, filtered = load_manifest(args.manifest)
    if not entries:
        raise UsageError("manifest has no usable entries")
    variants = args.variants.split(",")
    for v in variants:
        if v not in ("silence", "context"):
            raise UsageError(f"unknown variant {v!r}")
    policy = AugmentPolicy()
    frontend = FrontendConfig()
    progress = _progress(args.quiet)
    words = sorted({e.word for e in entries})
    word_id = {w: i for i, w in enumerate(words)}
    rng = np.random.default_rng(args.seed)

    feats, labels, is_val, langs, speakers = [], [], [], [], []
    cache = {}
    for e in entries:
        path = os.path.join(args.audio_root, e.audio_path)
        if path not in cache:
            _require_files(path)
            cache[path] = load_clip(path)
        for variant in variants:
            kc = extract_clip(cache[path], e, variant)
            versions = [kc.clip]
            if e.split == "train":
                versions += [augment(kc, policy, seed=rng.integers(2**63)).clip
                             for _ in range(args.augment_copies)]
            for clip in versions:
                feats.append(compute_logmel(clip, frontend).values)
                labels.append(word_id[e.word])
                is_val.append(e.split == "val")
                langs.append(e.language)
                speakers.append(e.speaker)
    data = FeatureDataset(np.stack(feats).astype(np.float32), np.array(labels), words,
                          np.array(is_val), np.array(langs, dtype=object),
                          np.array(speakers, dtype=object))
    _atomic_npz(args.out, data.save)
    progress({"entries": len(entries), "filtered": filtered, "samples": len(feats),
              "words": len(words), "out": args.out})
    return 0


def cmd_train_classifier(args) -> int:
    _require_files(args.data, args.config)
    cfg, cfg_values = _train_cfg(args, classifier_config())
    data = FeatureDataset.load(args.data)
    spec = _model_spec_from(cfg_values, args)
    model = EmbeddingNet(spec, seed=cfg.seed)
    head = ClassifierHead(data.n_classes, spec.embedding_dim, seed=cfg.seed)
    report = train_classifier(model, head, data, cfg, progress=_progress(args.quiet))
    save_embedding_model(args.out, model, head)
    _write_report(args, report)
    return 0


def cmd_finetune_circle(args) -> int:
    _require_files(args.data, args.model, args.config)
    cfg, _ = _train_cfg(args, circle_config())
    data = FeatureDataset.load(args.data)
    model, _head = load_embedding_model(args.model)   # head detached here
    report = finetune_circle(model, data, cfg, progress=_progress(args.quiet))
    save_embedding_model(args.out, model)
    _write_report(args, report)
    return 0


def _read_lexicon(path):
    lex = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise UsageError(f"{path}:{lineno}: expected 'word PH1 PH2 ...'")
            lex[parts[0].lower()] = parts[1:]
    return lex


def _read_inventory(path):
    with open(path, encoding="utf-8") as f:
        symbols = [line.strip() for line in f if line.strip()]
    if len(symbols) != len(set(symbols)):
        raise UsageError(f"{path}: duplicate phoneme symbols")
    return {s: i + 1 for i, s in enumerate(symbols)}


def cmd_train_p2e(args) -> int:
    _require_files(args.data, args.model, args.lexicon, args.phonemes, args.config)
    cfg, _ = _train_cfg(args, TrainConfig(epochs=60, anneal_start_epoch=20, batch_size=32))
    data = FeatureDataset.load(args.data)
    model, _ = load_embedding_model(args.model)
    lexicon = _read_lexicon(args.lexicon)
    inventory = _read_inventory(args.phonemes)
    progress = _progress(args.quiet)

    sequences, targets, used_words = [], [], []
    for wid, word in enumerate(data.words):
        if word not in lexicon:
            continue
        try:
            ids = [inventory[p] for p in lexicon[word]]
        except KeyError as e:
            raise UsageError(f"lexicon uses phoneme {e.args[0]!r} missing from inventory")
        rows = np.flatnonzero(data.labels == wid)
        if rows.size == 0:
            continue
        emb = model.embed(data.features[rows])
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)
        target = emb.mean(axis=0)
        sequences.append(ids)
        targets.append(target / np.linalg.norm(target))
        used_words.append(word)
    if len(sequences) < 2:
        raise UsageError("need at least 2 words covered by the lexicon")
    rng = np.random.default_rng(cfg.seed)
    n_val = min(args.val_words, len(sequences) - 1)
    val_rows = rng.choice(len(sequences), size=n_val, replace=False) if n_val else np.array([], int)
    val_mask = np.zeros(len(sequences), bool)
    val_mask[val_rows] = True
    train_seq = [s for s, v in zip(sequences, val_mask) if not v]
    train_tgt = np.array([t for t, v in zip(targets, val_mask) if not v])
    val_seq = [s for s, v in zip(sequences, val_mask) if v] or None
    val_tgt = (np.array([t for t, v in zip(targets, val_mask) if v]) if n_val else None)

    p2e = PhonemeEncoder(P2ESpec(phoneme_vocab_size=len(inventory)), seed=cfg.seed)
    report = train_p2e(p2e, train_seq, train_tgt, cfg, val_seq, val_tgt, progress=progress)
    save_p2e_model(args.out, p2e)
    _write_report(args, report)
    progress({"words": len(sequences), "val_words": int(n_val), "out": args.out})
    return 0


def cmd_finetune_baseline(args) -> int:
    _require_files(args.manifest, args.model, args.config)
    cfg, _ = _train_cfg(args, baseline_config())
    model, _ = load_embedding_model(args.model)
    entries, _f = load_manifest(args.manifest)
    keyword = args.keyword.lower()
    rng = np.random.default_rng(cfg.seed)
    cache = {}

    def clip_of(entry):
        path = os.path.join(args.audio_root, entry.audio_path)
        if path not in cache:
            _require_files(path)
            cache[path] = load_clip(path)
        return extract_clip(cache[path], entry, "silence")

    target_entries = [e for e in entries if e.word == keyword and e.split == "train"]
    if len(target_entries) < args.examples:
        raise UsageError(f"keyword {keyword!r} has {len(target_entries)} train recordings, "
                         f"need {args.examples}")
    picks = rng.choice(len(target_entries), size=args.examples, replace=False)
    target_examples = [clip_of(target_entries[i]) for i in picks]
    nontarget = [clip_of(e) for e in entries if e.word != keyword and e.split == "train"]
    if not nontarget:
        raise UsageError("no non-target material in manifest")
    bg_rng = np.random.default_rng([cfg.seed, 999])
    from .data import synthetic_noise

    background = [synthetic_noise("noise", 16000, bg_rng) for _ in range(32)]
    tuned, head, report = finetune_baseline3(
        model, target_examples, nontarget, background, cfg, seed=cfg.seed,
        progress=_progress(args.quiet))
    save_embedding_model(args.out, tuned, head)
    _write_report(args, report)
    return 0


def cmd_enroll(args) -> int:
    _require_files(args.model, *(args.wavs or []))
    model, _ = load_embedding_model(args.model)
    keyword = args.keyword.lower()
    frontend = FrontendConfig()
    if args.phoneme_seq:
        if not args.p2e:
            raise UsageError("--phoneme-seq requires --p2e")
        _require_files(args.p2e, args.phonemes)
        inventory = _read_inventory(args.phonemes)
        try:
            ids = [inventory[p] for p in args.phoneme_seq.split()]
        except KeyError as e:
            raise UsageError(f"phoneme {e.args[0]!r} not in inventory")
        profile = enroll_from_phonemes(keyword, ids, load_p2e_model(args.p2e))
    else:
        if not args.wavs:
            raise UsageError("provide example wav files or --phoneme-seq")
        embeddings = []
        for path in args.wavs:
            clip = load_clip(path)
            embeddings.append(model.embed(compute_logmel(clip, frontend).values))
        profile = enroll(keyword, embeddings)
    profiles = load_profiles(args.out) if (args.append and os.path.exists(args.out)) else []
    profiles = [p for p in profiles if p.keyword != keyword] + [profile]
    save_profiles(args.out, profiles)
    _progress(args.quiet)({"keyword": keyword, "source": profile.source,
                           "n_examples": profile.n_examples, "out": args.out})
    return 0


def cmd_spot(args) -> int:
    _require_files(args.model, args.profiles, args.audio)
    model, _ = load_embedding_model(args.model)
    profiles = load_profiles(args.profiles)
    audio = load_clip(args.audio)
    cfg = StreamConfig(window=args.window, stride=args.stride,
                       suppression=args.suppression, threshold=args.threshold)
    events = stream_detect(audio, model, profiles, cfg)
    text = events_to_text(events)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval_class(args) -> int:
    _require_files(args.data, args.model)
    data = FeatureDataset.load(args.data)
    model, _ = load_embedding_model(args.model)
    progress = _progress(args.quiet)
    val = data.val_indices()
    rows = val if val.size else np.arange(len(data.features))
    recordings = {}
    languages = {} if data.languages is not None else None
    for wid, word in enumerate(data.words):
        sel = rows[data.labels[rows] == wid]
        if sel.size:
            recordings[word] = data.features[sel]
            if languages is not None:
                languages[word] = str(data.languages[sel[0]])
    result = classification_protocol(recordings, model.embed, args.examples, args.seed,
                                     languages)
    lines = []
    for r in result.results:
        progress({"keyword": r.keyword, "eer": r.eer, "top1": r.top1})
        lines.append(json.dumps({"keyword": r.keyword, "eer": round(r.eer, 6),
                                 "threshold": round(r.threshold, 6),
                                 "top1": round(r.top1, 6),
                                 "n_pos": r.n_pos, "n_neg": r.n_neg}))
    summary = json.dumps({"mean_eer": round(result.mean_eer, 6),
                          "mean_top1": round(result.mean_top1, 6),
                          "skipped": sorted(result.skipped)})
    text = "\n".join(lines + [summary]) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    if args.save_scores:
        rng = np.random.default_rng(args.seed)
        # recompute per-keyword scores for DET export
        arrays = {}
        embeddings = {w: model.embed(np.asarray(recordings[w])) for w in sorted(recordings)}
        for w in sorted(recordings):
            n = len(embeddings[w])
            if n <= args.examples:
                continue
            pick = rng.choice(n, size=args.examples, replace=False)
            rest = np.setdiff1d(np.arange(n), pick)
            prof = enroll(w, embeddings[w][pick])
            pos = (embeddings[w][rest] / np.linalg.norm(embeddings[w][rest], axis=1, keepdims=True)) @ prof.embedding
            neg_stack = np.concatenate([embeddings[v] for v in sorted(recordings) if v != w])
            neg = (neg_stack / np.linalg.norm(neg_stack, axis=1, keepdims=True)) @ prof.embedding
            arrays[f"pos_{w}"] = pos
            arrays[f"neg_{w}"] = neg
        _atomic_npz(args.save_scores, lambda p: np.savez_compressed(p, **arrays))
    return 0


def cmd_eval_stream(args) -> int:
    _require_files(args.manifest, args.model)
    if not os.path.isdir(args.audio_root):
        raise UsageError(f"audio root is not a directory: {args.audio_root}")
    model, _ = load_embedding_model(args.model)
    entries, _f = load_manifest(args.manifest)
    keyword = args.keyword.lower()
    frontend = FrontendConfig()
    progress = _progress(args.quiet)
    rng = np.random.default_rng(args.seed)
    cache = {}

    def audio_of(entry):
        path = os.path.join(args.audio_root, entry.audio_path)
        if path not in cache:
            _require_files(path)
            cache[path] = load_clip(path)
        return cache[path]

    kw_entries = [e for e in entries if e.word == keyword]
    if len(kw_entries) < args.targets + args.examples:
        raise UsageError(f"insufficient material: {len(kw_entries)} recordings of {keyword!r}, "
                         f"need {args.targets + args.examples}")
    picks = rng.permutation(len(kw_entries))
    example_entries = [kw_entries[i] for i in picks[: args.examples]]
    stream_entries = [kw_entries[i] for i in picks[args.examples : args.examples + args.targets]]

    kw_files = {e.audio_path for e in kw_entries}
    filler_files = sorted({e.audio_path for e in entries} - kw_files)
    if len(filler_files) < args.fillers:
        raise UsageError(f"insufficient material: {len(filler_files)} filler sentences, "
                         f"need {args.fillers}")
    filler_pick = rng.choice(len(filler_files), size=args.fillers, replace=False)
    fillers = [load_clip(os.path.join(args.audio_root, filler_files[i])) for i in filler_pick]

    profile_emb = [model.embed(compute_logmel(extract_clip(audio_of(e), e, "silence").clip,
                                              frontend).values)
                   for e in example_entries]
    profile = enroll(keyword, profile_emb)

    if args.mode == "kws":
        targets = [extract_clip(audio_of(e), e, "silence").clip for e in stream_entries]
        test_set = build_kws_stream(keyword, targets, fillers, seed=args.seed)
    else:
        containing = [(audio_of(e), e.midpoint) for e in stream_entries]
        test_set = build_search_stream(keyword, containing, fillers, seed=args.seed)

    cfg = StreamConfig(window=args.window, stride=args.stride, suppression=args.suppression)
    times, scores = score_trace(test_set.audio, model, profile, cfg)
    trace = TraceSet(times, scores, test_set.truth_times, test_set.duration_hours)
    result = fnr_at_fa([trace], args.target_fa, args.suppression, args.tolerance)
    progress({"keyword": keyword, "mode": args.mode, "hours": test_set.duration_hours,
              "truths": len(test_set.truths)})
    out = json.dumps({"keyword": keyword, "fnr": round(result.fnr, 6),
                      "threshold": round(result.threshold, 6),
                      "fa_per_hour": round(result.fa_per_hour, 6),
                      "target_fa_per_hour": args.target_fa,
                      "target_met": result.target_met}) + "\n"
    sys.stdout.write(out)
    if args.save_traces:
        os.makedirs(args.save_traces, exist_ok=True)
        trace_path = os.path.join(args.save_traces, "stream000.trace.csv")
        atomic_write_text(trace_path, trace_to_csv(times, scores))
        meta = {"streams": [{"trace": "stream000.trace.csv",
                             "duration_hours": test_set.duration_hours,
                             "truths": [round(t.time, 6) for t in test_set.truths]}]}
        atomic_write_text(os.path.join(args.save_traces, "streams.json"),
                          json.dumps(meta, indent=2) + "\n")
    return 0


def cmd_export_det(args) -> int:
    if bool(args.scores) == bool(args.streams):
        raise UsageError("provide exactly one of --scores or --streams")
    if args.scores:
        _require_files(args.scores)
        z = np.load(args.scores)
        words = sorted({k[4:] for k in z.files if k.startswith("pos_")})
        if args.keyword:
            if args.keyword not in words:
                raise UsageError(f"keyword {args.keyword!r} not in scores file")
            words = [args.keyword]
        pos = np.concatenate([z[f"pos_{w}"] for w in words])
        neg = np.concatenate([z[f"neg_{w}"] for w in words])
        taus, fpr, fnr = det_points(pos, neg)
        atomic_write_text(args.out, det_csv(taus, fpr, fnr))
    else:
        _require_files(args.streams)
        base = os.path.dirname(args.streams)
        with open(args.streams, encoding="utf-8") as f:
            meta = json.load(f)
        from .streaming import trace_from_csv

        sets = []
        for s in meta["streams"]:
            with open(os.path.join(base, s["trace"]), encoding="utf-8") as f:
                times, scores = trace_from_csv(f.read())
            sets.append(TraceSet(times, scores, np.asarray(s["truths"], dtype=np.float64),
                                 float(s["duration_hours"])))
        points = streaming_det_points(sets, args.suppression, args.tolerance)
        atomic_write_text(args.out, fa_fnr_csv(points))
    return 0


# ---------------------------------------------------------------------- main


def build_parser() -> _Parser:
    p = _Parser(prog="kwspot", description="query-by-example keyword spotting")
    p.add_argument("--version", action="version", version=f"kwspot {__version__}")
    sub = p.add_subparsers(dest="verb", metavar="verb")

    def common(sp, seed=True):
        sp.add_argument("--quiet", action="store_true", help="suppress progress lines")
        sp.add_argument("--jobs", type=int, default=None, help="cap worker threads")
        if seed:
            sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("prepare", help="manifest + audio -> feature dataset")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--audio-root", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--variants", default="silence,context")
    sp.add_argument("--augment-copies", type=int, default=0)
    common(sp)
    sp.set_defaults(fn=cmd_prepare, seed_default=0)

    for name, fn, extra in (
        ("train-classifier", cmd_train_classifier, "classifier"),
        ("finetune-circle", cmd_finetune_circle, "circle"),
    ):
        sp = sub.add_parser(name)
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--config", default=None)
        sp.add_argument("--report", default=None)
        sp.add_argument("--epochs", type=int, default=None)
        sp.add_argument("--lr", type=float, default=None)
        sp.add_argument("--batch-size", type=int, default=None)
        if extra == "classifier":
            sp.add_argument("--channels", default=None, help="stage channels, e.g. 16,16,32,64,128")
            sp.add_argument("--blocks", default=None, help="stage blocks, e.g. 3,4,6,3")
        else:
            sp.add_argument("--model", required=True)
        common(sp)
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("train-p2e")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--lexicon", required=True)
    sp.add_argument("--phonemes", required=True, help="phoneme inventory, one symbol per line")
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--report", default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--val-words", type=int, default=0)
    common(sp)
    sp.set_defaults(fn=cmd_train_p2e)

    sp = sub.add_parser("finetune-baseline")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--audio-root", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--keyword", required=True)
    sp.add_argument("--examples", type=int, default=5)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--report", default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    common(sp)
    sp.set_defaults(fn=cmd_finetune_baseline)

    sp = sub.add_parser("enroll")
    sp.add_argument("--model", required=True)
    sp.add_argument("--keyword", required=True)
    sp.add_argument("wavs", nargs="*", help="example recordings")
    sp.add_argument("--phoneme-seq", default=None, help="space-separated phoneme symbols")
    sp.add_argument("--p2e", default=None)
    sp.add_argument("--phonemes", default=None, help="phoneme inventory file")
    sp.add_argument("--out", required=True)
    sp.add_argument("--append", action="store_true")
    common(sp, seed=False)
    sp.set_defaults(fn=cmd_enroll)

    sp = sub.add_parser("spot")
    sp.add_argument("--model", required=True)
    sp.add_argument("--profiles", required=True)
    sp.add_argument("--audio", required=True)
    sp.add_argument("--threshold", type=float, required=True)
    sp.add_argument("--window", type=float, default=1.0)
    sp.add_argument("--stride", type=float, default=0.1)
    sp.add_argument("--suppression", type=float, default=1.0)
    sp.add_argument("--out", default=None)
    common(sp, seed=False)
    sp.set_defaults(fn=cmd_spot)

    sp = sub.add_parser("eval-class")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--examples", type=int, default=5)
    sp.add_argument("--out", default=None)
    sp.add_argument("--save-scores", default=None)
    common(sp)
    sp.set_defaults(fn=cmd_eval_class)

    sp = sub.add_parser("eval-stream")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--audio-root", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--keyword", required=True)
    sp.add_argument("--mode", choices=("kws", "search"), default="kws")
    sp.add_argument("--targets", type=int, default=20)
    sp.add_argument("--fillers", type=int, default=200)
    sp.add_argument("--examples", type=int, default=5)
    sp.add_argument("--target-fa", type=float, default=0.1)
    sp.add_argument("--window", type=float, default=1.0)
    sp.add_argument("--stride", type=float, default=0.1)
    sp.add_argument("--suppression", type=float, default=1.0)
    sp.add_argument("--tolerance", type=float, default=0.75)
    sp.add_argument("--save-traces", default=None)
    common(sp)
    sp.set_defaults(fn=cmd_eval_stream)

    sp = sub.add_parser("export-det")
    sp.add_argument("--scores", default=None, help="npz from eval-class --save-scores")
    sp.add_argument("--streams", default=None, help="streams.json from eval-stream --save-traces")
    sp.add_argument("--keyword", default=None)
    sp.add_argument("--suppression", type=float, default=1.0)
    sp.add_argument("--tolerance", type=float, default=0.75)
    sp.add_argument("--out", required=True)
    common(sp, seed=False)
    sp.set_defaults(fn=cmd_export_det)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verb is None:
            raise UsageError("missing verb")
        if getattr(args, "seed", None) is None and hasattr(args, "seed"):
            args.seed = getattr(args, "seed_default", 0)
        if getattr(args, "jobs", None):
            if args.jobs < 1:
                raise UsageError("--jobs must be >= 1")
            if NUMBA_ENABLED:
                import numba

                numba.set_num_threads(min(args.jobs, numba.config.NUMBA_NUM_THREADS))
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError, KeyError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
