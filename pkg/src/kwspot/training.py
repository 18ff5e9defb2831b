"""Training procedures.

Four regimes: word-classifier pre-training (cross-entropy, balanced
batches, cosine-annealed lr), circle-loss fine-tuning of conv5+fc with
conv1..conv4 frozen (P-K batches), phoneme-to-embedding regression
(cosine loss), and the few-shot 3-class baseline (target / unknown /
background).  Every run is bit-reproducible for a fixed seed.
"""

import copy
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Adam, Tensor, backward, no_grad
from .data import AugmentPolicy, FeatureDataset, augment, balanced_batches, pk_batches
from .features import FrontendConfig, compute_logmel
from .losses import CircleParams, circle_loss, cosine_loss, cross_entropy
from .models import ClassifierHead, EmbeddingNet, PhonemeEncoder, classify


@dataclass
class TrainConfig:
    epochs: int = 40
    initial_lr: float = 0.001
    anneal_start_epoch: int = 10
    batch_size: int = 128
    pk_samples: int = 32        # P: samples per class
    pk_classes: int = 5         # K: classes per batch
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    gamma: float = 80.0
    margin: float = 0.4
    step_decay: float = 0.7     # baseline per-epoch lr factor

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")


def classifier_config(**kw) -> TrainConfig:
    return TrainConfig(**{"epochs": 40, "anneal_start_epoch": 10, "batch_size": 128, **kw})


def circle_config(**kw) -> TrainConfig:
    return TrainConfig(**{"epochs": 10, "anneal_start_epoch": 3, **kw})


def baseline_config(**kw) -> TrainConfig:
    return TrainConfig(**{"epochs": 10, "batch_size": 12, **kw})


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Flat at initial_lr through anneal_start_epoch, then cosine to 0."""
    if not (1 <= epoch <= cfg.epochs):
        raise ValueError(f"epoch {epoch} outside [1, {cfg.epochs}]")
    start = cfg.anneal_start_epoch
    if epoch <= start or cfg.epochs == start:
        return cfg.initial_lr
    frac = (epoch - start) / (cfg.epochs - start)
    return cfg.initial_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def baseline_lr(epoch: int, cfg: TrainConfig) -> float:
    """Geometric decay: initial_lr * step_decay^(epoch - 1)."""
    if epoch < 1:
        raise ValueError("epoch starts at 1")
    return cfg.initial_lr * cfg.step_decay ** (epoch - 1)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    metric: float
    lr: float
    wall_s: float


@dataclass
class TrainReport:
    procedure: str
    metric_name: str
    records: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def add(self, **kw):
        self.records.append(EpochRecord(**kw))

    def final_loss(self) -> float:
        return self.records[-1].loss

    def to_jsonl(self) -> str:
        lines = [json.dumps({"procedure": self.procedure, "metric": self.metric_name,
                             **self.extras})]
        for r in self.records:
            lines.append(json.dumps({"epoch": r.epoch, "loss": round(r.loss, 6),
                                     "metric": round(r.metric, 6), "lr": r.lr,
                                     "wall_s": round(r.wall_s, 3)}))
        return "\n".join(lines) + "\n"


def _check_finite(loss_value: float, procedure: str, epoch: int):
    if not np.isfinite(loss_value):
        raise RuntimeError(
            f"{procedure}: loss diverged to {loss_value} at epoch {epoch}; "
            "lower the learning rate or check the input features")


def _batched_embed(forward, n, chunk=256):
    outs = [forward(sl) for sl in np.array_split(np.arange(n), max(1, -(-n // chunk)))]
    return np.concatenate(outs, axis=0)


# ------------------------------------------------------------ classification


def train_classifier(model: EmbeddingNet, head: ClassifierHead, data: FeatureDataset,
                     cfg: TrainConfig = None, progress=None) -> TrainReport:
    """Cross-entropy pre-training of the full network plus classifier head."""
    cfg = cfg or classifier_config()
    frozen = [p.name for p in model.parameters() + head.parameters() if not p.trainable]
    if frozen:
        raise ValueError(f"classification pre-training expects all parameters trainable; frozen: {frozen[:3]}")
    train_idx = data.train_indices()
    val_idx = data.val_indices()
    if train_idx.size == 0:
        raise ValueError("no training samples")
    labels = data.labels[train_idx]
    opt = Adam(model.parameters() + head.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    report = TrainReport("train_classifier", "val_top1")
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, cfg)
        losses = []
        for batch in balanced_batches(labels, cfg.batch_size, seed=[cfg.seed, epoch]):
            idx = train_idx[batch]
            x = Tensor(data.features[idx])
            loss = cross_entropy(classify(model, head, x, training=True), data.labels[idx])
            _check_finite(loss.item(), "train_classifier", epoch)
            backward(loss)
            opt.step(lr)
            opt.zero_grad()
            losses.append(loss.item())
        acc = validation_accuracy(model, head, data) if val_idx.size else float("nan")
        rec = dict(epoch=epoch, loss=float(np.mean(losses)), metric=acc, lr=lr,
                   wall_s=time.perf_counter() - t0)
        report.add(**rec)
        if progress:
            progress(rec)
    return report


def validation_accuracy(model: EmbeddingNet, head: ClassifierHead, data: FeatureDataset) -> float:
    val_idx = data.val_indices()

    def fwd(rows):
        with no_grad():
            return classify(model, head, data.features[val_idx[rows]], training=False).data

    logits = _batched_embed(fwd, val_idx.size)
    return float((logits.argmax(axis=1) == data.labels[val_idx]).mean())


# ---------------------------------------------------------------- circle loss


def finetune_circle(model: EmbeddingNet, data: FeatureDataset,
                    cfg: TrainConfig = None, progress=None) -> TrainReport:
    """Circle-loss fine-tuning of conv5 and fc; conv1..conv4 frozen.

    The frozen prefix runs once in eval mode (running statistics) and its
    activations are cached, so only the suffix is touched per step.
    """
    cfg = cfg or circle_config()
    model.set_trainable(["conv1", "conv2", "conv3", "conv4"], False)
    if not any(p.trainable for p in model.parameters()):
        raise ValueError("no trainable parameters")
    params = CircleParams(cfg.gamma, cfg.margin)

    def prefix(rows):
        with no_grad():
            return model.forward_prefix(data.features[rows], training=False).data

    acts = _batched_embed(lambda rows: prefix(np.arange(len(data.features))[rows]),
                          len(data.features), chunk=128)
    train_idx = data.train_indices()
    val_idx = data.val_indices()
    labels = data.labels[train_idx]
    opt = Adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    report = TrainReport("finetune_circle", "val_eer",
                         extras={"gamma": cfg.gamma, "margin": cfg.margin})
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, cfg)
        losses = []
        for batch in pk_batches(labels, cfg.pk_samples, cfg.pk_classes, seed=[cfg.seed, epoch]):
            idx = train_idx[batch]
            emb = model.forward_suffix(Tensor(acts[idx]), training=True)
            loss = circle_loss(emb, data.labels[idx], params)
            if not loss._parents:       # degenerate batch, no signal
                continue
            _check_finite(loss.item(), "finetune_circle", epoch)
            backward(loss)
            opt.step(lr)
            opt.zero_grad()
            losses.append(loss.item())
        if val_idx.size:
            from .metrics import mean_few_shot_eer

            def suffix(rows):
                with no_grad():
                    return model.forward_suffix(Tensor(acts[val_idx[rows]]), training=False).data

            val_labels = data.labels[val_idx]
            smallest = np.bincount(val_labels).min()
            n_ex = min(5, smallest - 1)
            if n_ex >= 1:
                val_emb = _batched_embed(suffix, val_idx.size)
                eer = mean_few_shot_eer(val_emb, val_labels, n_examples=n_ex, seed=cfg.seed)
            else:
                eer = float("nan")
        else:
            eer = float("nan")
        rec = dict(epoch=epoch, loss=float(np.mean(losses)) if losses else 0.0,
                   metric=eer, lr=lr, wall_s=time.perf_counter() - t0)
        report.add(**rec)
        if progress:
            progress(rec)
    return report


# ------------------------------------------------------------------------ p2e


def train_p2e(model: PhonemeEncoder, sequences, targets, cfg: TrainConfig = None,
              val_sequences=None, val_targets=None, progress=None) -> TrainReport:
    """Cosine-loss regression from phoneme sequences onto word embeddings."""
    cfg = cfg or TrainConfig(epochs=60, anneal_start_epoch=20, batch_size=32)
    sequences = [np.asarray(s, dtype=np.int64) for s in sequences]
    for s in sequences:
        if s.size < 1:
            raise ValueError("empty phoneme sequence")
        if s.min() < 1 or s.max() > model.spec.phoneme_vocab_size:
            raise ValueError(
                f"unseen phoneme id at train time (vocabulary is [1, {model.spec.phoneme_vocab_size}])")
    targets = np.asarray(targets, dtype=np.float64)
    targets = targets / np.linalg.norm(targets, axis=1, keepdims=True)
    opt = Adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    report = TrainReport("train_p2e", "val_cosine_loss")
    n = len(sequences)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, cfg)
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            rows = order[lo : lo + cfg.batch_size]
            ids = pad_sequences([sequences[i] for i in rows])
            pred = model.forward(ids)
            loss = cosine_loss(pred, targets[rows].astype(model.dtype))
            _check_finite(loss.item(), "train_p2e", epoch)
            backward(loss)
            opt.step(lr)
            opt.zero_grad()
            losses.append(loss.item())
        metric = (p2e_eval_loss(model, val_sequences, val_targets)
                  if val_sequences is not None else float("nan"))
        rec = dict(epoch=epoch, loss=float(np.mean(losses)), metric=metric, lr=lr,
                   wall_s=time.perf_counter() - t0)
        report.add(**rec)
        if progress:
            progress(rec)
    return report


def pad_sequences(seqs) -> np.ndarray:
    """Right-pad id sequences with 0 into a (B, T_max) batch."""
    t_max = max(len(s) for s in seqs)
    out = np.zeros((len(seqs), t_max), dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def p2e_eval_loss(model: PhonemeEncoder, sequences, targets) -> float:
    targets = np.asarray(targets, dtype=np.float64)
    targets = targets / np.linalg.norm(targets, axis=1, keepdims=True)
    with no_grad():
        pred = model.forward(pad_sequences([np.asarray(s) for s in sequences])).data
    pred = pred / np.linalg.norm(pred, axis=1, keepdims=True)
    return float(np.mean(1.0 - np.sum(pred * targets, axis=1)))


# ------------------------------------------------------------------- baseline


BASELINE_TARGET = 0
BASELINE_UNKNOWN = 1
BASELINE_BACKGROUND = 2

BASELINE_MIX = (115, 115, 26)   # target / non-target / background of 256


def finetune_baseline3(model: EmbeddingNet, target_examples, nontarget_bank,
                       background_bank, cfg: TrainConfig = None,
                       policy: AugmentPolicy = None,
                       frontend: FrontendConfig = FrontendConfig(),
                       seed: int = 0, progress=None):
    """Few-shot 3-class baseline: target / unknown / background.

    Builds a fixed 256-sample training set (115 augmented target, 115
    augmented non-target, 26 background), attaches a 3-way softmax head to
    a copy of the pre-trained model, and fine-tunes everything for 10
    epochs at batch 12 with lr 0.001 * 0.7^(epoch-1).

    Returns (model_copy, head, report).
    """
    cfg = cfg or baseline_config()
    policy = policy or AugmentPolicy()
    if len(target_examples) < 1:
        raise ValueError("need at least one target example")
    if not nontarget_bank or not background_bank:
        raise ValueError("non-target and background banks must be non-empty")
    rng = np.random.default_rng(seed)
    n_tgt, n_unk, n_bg = BASELINE_MIX

    feats, labels = [], []
    for i in range(n_tgt):
        kc = target_examples[i % len(target_examples)]
        aug = augment(kc, policy, seed=rng.integers(2**63))
        feats.append(compute_logmel(aug.clip, frontend).values)
        labels.append(BASELINE_TARGET)
    bank_draw = rng.choice(len(nontarget_bank), size=n_unk, replace=len(nontarget_bank) < n_unk)
    for j in bank_draw:
        aug = augment(nontarget_bank[j], policy, seed=rng.integers(2**63))
        feats.append(compute_logmel(aug.clip, frontend).values)
        labels.append(BASELINE_UNKNOWN)
    bg_draw = rng.choice(len(background_bank), size=n_bg, replace=len(background_bank) < n_bg)
    for j in bg_draw:
        feats.append(compute_logmel(background_bank[j], frontend).values)
        labels.append(BASELINE_BACKGROUND)

    features = np.stack(feats).astype(np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    assert len(features) == sum(BASELINE_MIX)

    tuned = copy.deepcopy(model)
    tuned.set_trainable(list(tuned.STAGES), True)
    head = ClassifierHead(3, tuned.spec.embedding_dim, seed=seed)
    opt = Adam(tuned.parameters() + head.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    report = TrainReport("finetune_baseline3", "train_loss",
                         extras={"mix": list(BASELINE_MIX)})
    n = len(features)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = baseline_lr(epoch, cfg)
        order = np.random.default_rng([seed, epoch]).permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            rows = order[lo : lo + cfg.batch_size]
            loss = cross_entropy(classify(tuned, head, Tensor(features[rows]), training=True),
                                 labels[rows])
            _check_finite(loss.item(), "finetune_baseline3", epoch)
            backward(loss)
            opt.step(lr)
            opt.zero_grad()
            losses.append(loss.item())
        rec = dict(epoch=epoch, loss=float(np.mean(losses)), metric=float(np.mean(losses)),
                   lr=lr, wall_s=time.perf_counter() - t0)
        report.add(**rec)
        if progress:
            progress(rec)
    return tuned, head, report


def baseline_scores(model: EmbeddingNet, head: ClassifierHead, features) -> np.ndarray:
    """P(target) of the 3-class baseline for a feature batch."""
    with no_grad():
        logits = classify(model, head, np.asarray(features, dtype=model.dtype),
                          training=False).data
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    return p[:, BASELINE_TARGET]


# ---------------------------------------------------------------- config file


CONFIG_KEYS = {
    "epochs": int, "initial_lr": float, "anneal_start_epoch": int,
    "batch_size": int, "pk_samples": int, "pk_classes": int, "seed": int,
    "beta1": float, "beta2": float, "adam_eps": float,
    "gamma": float, "margin": float, "step_decay": float,
}


def load_config_file(path) -> dict:
    """Plain-text ``key = value`` pairs; '#' starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            k, v = (part.strip() for part in line.split("=", 1))
            out[k] = v
    return out


def train_config_from_dict(values: dict, base: TrainConfig = None) -> TrainConfig:
    cfg = base or TrainConfig()
    known = {k: CONFIG_KEYS[k](v) for k, v in values.items() if k in CONFIG_KEYS}
    return replace(cfg, **known)
