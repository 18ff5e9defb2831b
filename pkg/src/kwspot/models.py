"""Model zoo: the residual embedding network, its classifier head, and the
phoneme-to-embedding LSTM regressor.

The embedding network is the small-footprint 34-layer residual design:
stage channels (16, 16, 32, 64, 128), block counts (3, 4, 6, 3), a 7x7
stem with stride 2 on the frequency axis only, frequency-mean and temporal
average pooling, and a 256-d fully-connected output (about 1.4 M weights).
Embeddings are L2-normalized by consumers, not inside the network.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter, Tensor, no_grad, ops
from .checkpoint import atomic_write_text, load_archive, save_archive

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


@dataclass(frozen=True)
class EmbeddingModelSpec:
    n_mels: int = 40
    embedding_dim: int = 256
    stage_channels: tuple = (16, 16, 32, 64, 128)   # conv1..conv5
    stage_blocks: tuple = (3, 4, 6, 3)              # conv2..conv5
    stage_strides: tuple = ((1, 1), (2, 2), (2, 2), (1, 1))
    conv1_kernel: int = 7
    conv1_stride: tuple = (2, 1)

    def __post_init__(self):
        if len(self.stage_channels) != 5 or len(self.stage_blocks) != 4 or len(self.stage_strides) != 4:
            raise ValueError("spec needs 5 stage channels and 4 block/stride entries")


@dataclass(frozen=True)
class P2ESpec:
    phoneme_vocab_size: int = 69
    phoneme_embed_dim: int = 128
    lstm_hidden: int = 256
    lstm_layers: int = 2
    output_dim: int = 256


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class EmbeddingNet:
    """Residual word-embedding network over (B, 1, n_mels, T) log-mel maps."""

    STAGES = ("conv1", "conv2", "conv3", "conv4", "conv5", "fc")

    def __init__(self, spec: EmbeddingModelSpec = EmbeddingModelSpec(), seed: int = 0,
                 dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Parameter] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True
        rng = np.random.default_rng(seed)

        c1 = spec.stage_channels[0]
        k = spec.conv1_kernel
        self._add_conv(rng, "conv1.w", (k, k, 1, c1))
        self._add_bn("conv1.bn", c1)
        in_ch = c1
        for si, (out_ch, blocks) in enumerate(zip(spec.stage_channels[1:], spec.stage_blocks)):
            stage = f"conv{si + 2}"
            for bi in range(blocks):
                prefix = f"{stage}.block{bi + 1}"
                stride = spec.stage_strides[si] if bi == 0 else (1, 1)
                self._add_conv(rng, f"{prefix}.conv1.w", (3, 3, in_ch, out_ch))
                self._add_bn(f"{prefix}.bn1", out_ch)
                self._add_conv(rng, f"{prefix}.conv2.w", (3, 3, out_ch, out_ch))
                self._add_bn(f"{prefix}.bn2", out_ch)
                if in_ch != out_ch or stride != (1, 1):
                    self._add_conv(rng, f"{prefix}.shortcut.w", (1, 1, in_ch, out_ch))
                    self._add_bn(f"{prefix}.shortcut_bn", out_ch)
                in_ch = out_ch
        self.params["fc.w"] = Parameter(
            "fc.w", _he_uniform(rng, (in_ch, spec.embedding_dim), in_ch, self.dtype))
        self.params["fc.b"] = Parameter("fc.b", np.zeros(spec.embedding_dim, dtype=self.dtype))

    def _add_conv(self, rng, name, shape):
        # NHWC weights: (KH, KW, C_in, C_out)
        fan_in = shape[0] * shape[1] * shape[2]
        self.params[name] = Parameter(name, _he_uniform(rng, shape, fan_in, self.dtype))

    def _add_bn(self, prefix, ch):
        self.params[f"{prefix}.gamma"] = Parameter(f"{prefix}.gamma", np.ones(ch, dtype=self.dtype))
        self.params[f"{prefix}.beta"] = Parameter(f"{prefix}.beta", np.zeros(ch, dtype=self.dtype))
        self.buffers[f"{prefix}.mean"] = np.zeros(ch, dtype=self.dtype)
        self.buffers[f"{prefix}.var"] = np.ones(ch, dtype=self.dtype)

    # ------------------------------------------------------------- forward

    def _bn(self, x, prefix, training):
        return ops.batch_norm(
            x, self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"],
            self.buffers[f"{prefix}.mean"], self.buffers[f"{prefix}.var"],
            training, momentum=BN_MOMENTUM, eps=BN_EPS)

    def _block(self, x, prefix, stride, training):
        out = ops.conv2d(x, self.params[f"{prefix}.conv1.w"], stride=stride, padding=(1, 1))
        out = ops.relu(self._bn(out, f"{prefix}.bn1", training))
        out = ops.conv2d(out, self.params[f"{prefix}.conv2.w"], stride=(1, 1), padding=(1, 1))
        out = self._bn(out, f"{prefix}.bn2", training)
        if f"{prefix}.shortcut.w" in self.params:
            sc = ops.conv2d(x, self.params[f"{prefix}.shortcut.w"], stride=stride, padding=(0, 0))
            sc = self._bn(sc, f"{prefix}.shortcut_bn", training)
        else:
            sc = x
        return ops.relu(ops.residual_add(out, sc))

    def _as_input(self, x) -> Tensor:
        # accepts (B, n_mels, T) or (B, 1, n_mels, T); runs NHWC internally
        if not isinstance(x, Tensor):
            x = Tensor(np.ascontiguousarray(np.asarray(x, dtype=self.dtype)))
        if x.data.ndim == 4 and x.data.shape[1] == 1:
            x = ops.reshape(x, (x.data.shape[0], x.data.shape[2], x.data.shape[3]))
        if x.data.ndim != 3:
            raise ValueError(f"expected input (B, n_mels, T) or (B, 1, n_mels, T), got {x.data.shape}")
        if x.data.shape[1] != self.spec.n_mels:
            raise ValueError(f"expected {self.spec.n_mels} mel bins, got {x.data.shape[1]}")
        return ops.reshape(x, (*x.data.shape, 1))

    def _stage(self, x, si, training):
        stage = f"conv{si + 2}"
        for bi in range(self.spec.stage_blocks[si]):
            stride = self.spec.stage_strides[si] if bi == 0 else (1, 1)
            x = self._block(x, f"{stage}.block{bi + 1}", stride, training)
        return x

    def forward_prefix(self, x, training=None) -> Tensor:
        """conv1 through conv4 (the stages frozen during fine-tuning)."""
        training = self.training if training is None else training
        x = self._as_input(x)
        pad = self.spec.conv1_kernel // 2
        x = ops.conv2d(x, self.params["conv1.w"], stride=self.spec.conv1_stride, padding=(pad, pad))
        x = ops.relu(self._bn(x, "conv1.bn", training))
        for si in range(3):                       # conv2..conv4
            x = self._stage(x, si, training)
        return x

    def forward_suffix(self, x, training=None) -> Tensor:
        """conv5, frequency mean, temporal average pooling, fc."""
        training = self.training if training is None else training
        x = self._stage(x, 3, training)
        x = ops.mean_axis(x, axis=1, keepdims=True)    # mean across frequency
        x = ops.mean_axis(x, axis=2, keepdims=True)    # temporal average pooling
        x = ops.reshape(x, (x.data.shape[0], x.data.shape[3]))
        return ops.linear(x, self.params["fc.w"], self.params["fc.b"])

    def forward(self, x, training=None) -> Tensor:
        return self.forward_suffix(self.forward_prefix(x, training), training)

    def stage_outputs(self, x) -> dict:
        """Per-stage output shapes as (B, C, H, W), for architecture checks."""

        def chw(shape):
            return (shape[0], shape[3], shape[1], shape[2])

        shapes = {}
        with no_grad():
            x = self._as_input(x)
            pad = self.spec.conv1_kernel // 2
            x = ops.conv2d(x, self.params["conv1.w"], stride=self.spec.conv1_stride, padding=(pad, pad))
            x = ops.relu(self._bn(x, "conv1.bn", False))
            shapes["conv1"] = chw(x.data.shape)
            for si in range(4):
                x = self._stage(x, si, False)
                shapes[f"conv{si + 2}"] = chw(x.data.shape)
            x = ops.mean_axis(x, axis=1, keepdims=True)
            shapes["freq_mean"] = chw(x.data.shape)
            x = ops.mean_axis(x, axis=2, keepdims=True)
            x = ops.reshape(x, (x.data.shape[0], x.data.shape[3]))
            shapes["tap"] = x.data.shape
            x = ops.linear(x, self.params["fc.w"], self.params["fc.b"])
            shapes["fc"] = x.data.shape
        return shapes

    def embed(self, features) -> np.ndarray:
        """Eval-mode embeddings for (40, T), (B, 40, T), or a list of maps."""
        if isinstance(features, (list, tuple)):
            return np.stack([self.embed(f) for f in features])
        arr = np.asarray(features, dtype=self.dtype)
        single = arr.ndim == 2
        if single:
            arr = arr[None]
        with no_grad():
            out = self.forward(arr, training=False).data
        return out[0] if single else out

    # ---------------------------------------------------------- bookkeeping

    def parameters(self):
        return list(self.params.values())

    def param_count(self, trainable_only=False) -> int:
        return sum(p.data.size for p in self.params.values()
                   if p.trainable or not trainable_only)

    def set_trainable(self, stage_names, trainable: bool):
        """Toggle the trainable flag of whole stages (conv1..conv5, fc)."""
        if isinstance(stage_names, str):
            stage_names = [stage_names]
        for s in stage_names:
            if s not in self.STAGES:
                raise ValueError(f"unknown stage {s!r}; stages are {self.STAGES}")
        for s in stage_names:
            for p in self.params.values():
                if p.name == s or p.name.startswith(s + "."):
                    p.trainable = trainable

    def trainable_stage_names(self):
        return sorted({p.name.split(".")[0] for p in self.params.values() if p.trainable})

    def state_dict(self) -> dict:
        state = {name: p.data for name, p in self.params.items()}
        state.update({f"buffer.{k}": v for k, v in self.buffers.items()})
        return state

    def load_state_dict(self, state: dict):
        for name, p in self.params.items():
            p.data = np.asarray(state[name], dtype=self.dtype).reshape(p.data.shape)
        for name in self.buffers:
            self.buffers[name] = np.asarray(state[f"buffer.{name}"], dtype=self.dtype)


class ClassifierHead:
    """Detachable fully-connected layer on top of the 256-d embedding."""

    def __init__(self, n_classes: int, embedding_dim: int = 256, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.n_classes = n_classes
        self.dtype = np.dtype(dtype)
        self.params = {
            "head.w": Parameter("head.w", _he_uniform(rng, (embedding_dim, n_classes), embedding_dim, self.dtype)),
            "head.b": Parameter("head.b", np.zeros(n_classes, dtype=self.dtype)),
        }

    def logits(self, embedding: Tensor) -> Tensor:
        if embedding.data.shape[-1] != self.params["head.w"].data.shape[0]:
            raise ValueError(
                f"head expects embedding dim {self.params['head.w'].data.shape[0]}, "
                f"got {embedding.data.shape[-1]}")
        return ops.linear(embedding, self.params["head.w"], self.params["head.b"])

    def parameters(self):
        return list(self.params.values())


def classify(model: EmbeddingNet, head: ClassifierHead, features, training=None) -> Tensor:
    """Logits of the classifier head applied to the unnormalized embedding."""
    return head.logits(model.forward(features, training))


class PhonemeEncoder:
    """Phoneme-id sequence to word-embedding regressor (2-layer LSTM)."""

    def __init__(self, spec: P2ESpec = P2ESpec(), seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.training = True
        rng = np.random.default_rng(seed)
        H = spec.lstm_hidden
        table = rng.uniform(-0.1, 0.1, size=(spec.phoneme_vocab_size + 1, spec.phoneme_embed_dim))
        table[0] = 0.0                      # padding row stays zero
        self.params = {"embed.table": Parameter("embed.table", table.astype(self.dtype))}
        in_dim = spec.phoneme_embed_dim
        for layer in range(1, spec.lstm_layers + 1):
            lim = 1.0 / np.sqrt(H)
            wx = rng.uniform(-lim, lim, size=(in_dim, 4 * H)).astype(self.dtype)
            wh = rng.uniform(-lim, lim, size=(H, 4 * H)).astype(self.dtype)
            b = np.zeros(4 * H, dtype=self.dtype)
            b[H : 2 * H] = 1.0              # forget-gate bias
            self.params[f"lstm{layer}.wx"] = Parameter(f"lstm{layer}.wx", wx)
            self.params[f"lstm{layer}.wh"] = Parameter(f"lstm{layer}.wh", wh)
            self.params[f"lstm{layer}.b"] = Parameter(f"lstm{layer}.b", b)
            in_dim = H
        self.params["fc.w"] = Parameter("fc.w", _he_uniform(rng, (H, spec.output_dim), H, self.dtype))
        self.params["fc.b"] = Parameter("fc.b", np.zeros(spec.output_dim, dtype=self.dtype))

    def _validate_ids(self, ids: np.ndarray, allow_padding: bool):
        lo = 0 if allow_padding else 1
        if ids.min() < lo or ids.max() > self.spec.phoneme_vocab_size:
            raise ValueError(
                f"phoneme id out of vocabulary [1, {self.spec.phoneme_vocab_size}]"
                + (" (0 allowed as right padding)" if allow_padding else ""))

    def _lstm_layer(self, xs, layer: int):
        wx = self.params[f"lstm{layer}.wx"]
        wh = self.params[f"lstm{layer}.wh"]
        b = self.params[f"lstm{layer}.b"]
        B = xs[0].data.shape[0]
        H = self.spec.lstm_hidden
        h = Tensor(np.zeros((B, H), dtype=self.dtype))
        c = Tensor(np.zeros((B, H), dtype=self.dtype))
        states = []
        for x_t in xs:
            z = ops.add(ops.linear(x_t, wx, b), ops.matmul(h, wh))
            i, f, g, o = ops.split(z, 4, axis=1)
            c = ops.add(ops.mul(ops.sigmoid(f), c), ops.mul(ops.sigmoid(i), ops.tanh(g)))
            h = ops.mul(ops.sigmoid(o), ops.tanh(c))
            states.append(h)
        return states

    def forward(self, ids) -> Tensor:
        """(B, T) right-padded id batch (0 = pad) -> (B, output_dim)."""
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        self._validate_ids(ids, allow_padding=True)
        mask = ids > 0
        lengths = mask.sum(axis=1)
        if (lengths == 0).any():
            raise ValueError("empty phoneme sequence in batch")
        if not np.all(mask[:, :-1] >= mask[:, 1:]):
            raise ValueError("padding must be on the right")
        T = ids.shape[1]
        xs = [ops.lookup(self.params["embed.table"], ids[:, t]) for t in range(T)]
        for layer in range(1, self.spec.lstm_layers + 1):
            xs = self._lstm_layer(xs, layer)
        acc = None
        for t in range(T):
            col = Tensor(mask[:, t : t + 1].astype(self.dtype))
            term = ops.mul(xs[t], col)
            acc = term if acc is None else ops.add(acc, term)
        inv_len = Tensor((1.0 / lengths[:, None]).astype(self.dtype))
        mean = ops.mul(acc, inv_len)
        return ops.linear(mean, self.params["fc.w"], self.params["fc.b"])

    def p2e_embed(self, phonemes) -> np.ndarray:
        """Predicted 256-d embedding for one unpadded phoneme-id sequence."""
        ids = np.asarray(list(phonemes), dtype=np.int64)
        if ids.size < 1:
            raise ValueError("need at least one phoneme")
        self._validate_ids(ids, allow_padding=False)
        with no_grad():
            return self.forward(ids[None, :]).data[0]

    def forward_states(self, ids) -> dict:
        """Intermediate stage outputs (numpy), for architecture checks."""
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        self._validate_ids(ids, allow_padding=True)
        out = {}
        with no_grad():
            xs = [ops.lookup(self.params["embed.table"], ids[:, t]) for t in range(ids.shape[1])]
            out["lookup"] = np.stack([x.data for x in xs], axis=2)
            for layer in range(1, self.spec.lstm_layers + 1):
                xs = self._lstm_layer(xs, layer)
                out[f"lstm{layer}"] = np.stack([x.data for x in xs], axis=2)
            out["output"] = self.forward(ids).data
        return out

    def parameters(self):
        return list(self.params.values())

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.params.items()}

    def load_state_dict(self, state: dict):
        for name, p in self.params.items():
            p.data = np.asarray(state[name], dtype=self.dtype).reshape(p.data.shape)
        self.params["embed.table"].data[0] = 0.0


# ----------------------------------------------------------------- model I/O


def _card_lines(pairs) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs)


def save_embedding_model(path, model: EmbeddingNet, head: ClassifierHead = None) -> None:
    """KWSM checkpoint plus a text model card recording hyperparameters."""
    tensors = dict(model.state_dict())
    pairs = [
        ("kind", "embedding"),
        ("n_mels", model.spec.n_mels),
        ("embedding_dim", model.spec.embedding_dim),
        ("stage_channels", ",".join(map(str, model.spec.stage_channels))),
        ("stage_blocks", ",".join(map(str, model.spec.stage_blocks))),
        ("stage_strides", ";".join(f"{a},{b}" for a, b in model.spec.stage_strides)),
        ("conv1_kernel", model.spec.conv1_kernel),
        ("conv1_stride", f"{model.spec.conv1_stride[0]},{model.spec.conv1_stride[1]}"),
    ]
    if head is not None:
        tensors.update({name: p.data for name, p in head.params.items()})
        pairs.append(("head_classes", head.n_classes))
    save_archive(path, tensors)
    atomic_write_text(str(path) + ".card", _card_lines(pairs))


def save_p2e_model(path, model: PhonemeEncoder) -> None:
    save_archive(path, model.state_dict())
    pairs = [
        ("kind", "p2e"),
        ("phoneme_vocab_size", model.spec.phoneme_vocab_size),
        ("phoneme_embed_dim", model.spec.phoneme_embed_dim),
        ("lstm_hidden", model.spec.lstm_hidden),
        ("lstm_layers", model.spec.lstm_layers),
        ("output_dim", model.spec.output_dim),
    ]
    atomic_write_text(str(path) + ".card", _card_lines(pairs))


def read_model_card(path) -> dict:
    card = {}
    with open(str(path) + ".card", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                card[k.strip()] = v.strip()
    return card


def load_embedding_model(path):
    """Load (EmbeddingNet, ClassifierHead | None) from a KWSM checkpoint."""
    card = read_model_card(path)
    if card.get("kind") != "embedding":
        raise ValueError(f"{path}: model card kind is {card.get('kind')!r}, expected 'embedding'")
    strides = tuple(tuple(int(x) for x in s.split(",")) for s in card["stage_strides"].split(";"))
    spec = EmbeddingModelSpec(
        n_mels=int(card["n_mels"]),
        embedding_dim=int(card["embedding_dim"]),
        stage_channels=tuple(int(x) for x in card["stage_channels"].split(",")),
        stage_blocks=tuple(int(x) for x in card["stage_blocks"].split(",")),
        stage_strides=strides,
        conv1_kernel=int(card["conv1_kernel"]),
        conv1_stride=tuple(int(x) for x in card["conv1_stride"].split(",")),
    )
    state = load_archive(path)
    model = EmbeddingNet(spec)
    model.load_state_dict(state)
    head = None
    if "head_classes" in card:
        head = ClassifierHead(int(card["head_classes"]), spec.embedding_dim)
        head.params["head.w"].data = state["head.w"].astype(head.dtype)
        head.params["head.b"].data = state["head.b"].astype(head.dtype)
    return model, head


def load_p2e_model(path) -> PhonemeEncoder:
    card = read_model_card(path)
    if card.get("kind") != "p2e":
        raise ValueError(f"{path}: model card kind is {card.get('kind')!r}, expected 'p2e'")
    spec = P2ESpec(
        phoneme_vocab_size=int(card["phoneme_vocab_size"]),
        phoneme_embed_dim=int(card["phoneme_embed_dim"]),
        lstm_hidden=int(card["lstm_hidden"]),
        lstm_layers=int(card["lstm_layers"]),
        output_dim=int(card["output_dim"]),
    )
    model = PhonemeEncoder(spec)
    model.load_state_dict(load_archive(path))
    return model
