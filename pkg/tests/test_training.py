import numpy as np
import pytest

from kwspot.audio import AudioClip
from kwspot.data import AugmentPolicy, FeatureDataset, KeywordClip, synthetic_noise
from kwspot.models import ClassifierHead, EmbeddingModelSpec, EmbeddingNet
from kwspot.training import (
    BASELINE_MIX,
    TrainConfig,
    baseline_config,
    baseline_lr,
    baseline_scores,
    circle_config,
    classifier_config,
    finetune_baseline3,
    finetune_circle,
    load_config_file,
    lr_schedule,
    train_classifier,
    train_config_from_dict,
    train_p2e,
)

TINY = EmbeddingModelSpec(stage_channels=(4, 4, 8, 8, 8), stage_blocks=(1, 1, 1, 1))


def tiny_dataset(n_classes=6, per_class=12, T=40, seed=0, val=4):
    # trivially separable features: class-specific band patterns
    rng = np.random.default_rng(seed)
    feats, labels, is_val = [], [], []
    means = np.zeros((n_classes, 40, 1))
    for c in range(n_classes):
        means[c, c * 6 : c * 6 + 6] = 4.0
    for c in range(n_classes):
        for k in range(per_class):
            feats.append(means[c] + 0.3 * rng.standard_normal((40, T)))
            labels.append(c)
            is_val.append(k >= per_class - val)
    return FeatureDataset(np.stack(feats).astype(np.float32), np.array(labels),
                          [f"w{c}" for c in range(n_classes)], np.array(is_val))


class TestLrSchedule:
    def test_flat_phase(self):
        cfg = classifier_config()        # epochs 40, anneal at 10
        assert lr_schedule(5, cfg) == 0.001
        assert lr_schedule(10, cfg) == 0.001

    def test_cosine_endpoint_zero(self):
        cfg = classifier_config()
        assert np.isclose(lr_schedule(40, cfg), 0.0, atol=1e-12)

    def test_circle_schedule(self):
        cfg = circle_config()            # epochs 10, anneal at 3
        assert lr_schedule(3, cfg) == 0.001
        assert np.isclose(lr_schedule(10, cfg), 0.0, atol=1e-12)

    def test_non_increasing_and_continuous(self):
        cfg = TrainConfig(epochs=25, anneal_start_epoch=7)
        values = [lr_schedule(e, cfg) for e in range(1, 26)]
        assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))
        # continuity at the boundary: first annealed epoch is cos(pi/(n-start)) scale
        frac = 1.0 / (25 - 7)
        assert np.isclose(values[7], 0.001 * 0.5 * (1 + np.cos(np.pi * frac)))

    def test_epoch_out_of_range(self):
        cfg = classifier_config()
        with pytest.raises(ValueError):
            lr_schedule(0, cfg)
        with pytest.raises(ValueError):
            lr_schedule(41, cfg)

    def test_baseline_step_decay(self):
        cfg = baseline_config()
        assert np.isclose(baseline_lr(1, cfg), 0.001)
        assert np.isclose(baseline_lr(4, cfg), 0.001 * 0.7**3)
        assert np.isclose(baseline_lr(4, cfg), 3.43e-4)


class TestTrainClassifier:
    def test_loss_decreases_and_validates(self):
        data = tiny_dataset()
        model = EmbeddingNet(TINY, seed=0)
        head = ClassifierHead(data.n_classes, seed=0)
        cfg = TrainConfig(epochs=15, anneal_start_epoch=8, batch_size=16,
                          initial_lr=0.003, seed=0)
        report = train_classifier(model, head, data, cfg)
        assert len(report.records) == 15
        assert report.final_loss() < 0.2 * report.records[0].loss
        assert report.records[-1].metric > 0.9

    def test_zero_epochs_rejected(self):
        with pytest.raises(ValueError, match="epochs"):
            TrainConfig(epochs=0)

    def test_frozen_parameters_rejected(self):
        data = tiny_dataset()
        model = EmbeddingNet(TINY, seed=0)
        model.set_trainable(["conv1"], False)
        head = ClassifierHead(data.n_classes, seed=0)
        with pytest.raises(ValueError, match="trainable"):
            train_classifier(model, head, data, TrainConfig(epochs=1, batch_size=8))

    def test_bit_reproducible(self):
        data = tiny_dataset()
        cfg = TrainConfig(epochs=2, anneal_start_epoch=1, batch_size=16, seed=7)
        states = []
        for _ in range(2):
            model = EmbeddingNet(TINY, seed=3)
            head = ClassifierHead(data.n_classes, seed=3)
            train_classifier(model, head, data, cfg)
            states.append(b"".join(p.data.tobytes() for p in model.parameters())
                          + b"".join(p.data.tobytes() for p in head.parameters()))
        assert states[0] == states[1]

    def test_divergence_aborts(self):
        data = tiny_dataset()
        model = EmbeddingNet(TINY, seed=0)
        model.params["fc.w"].data *= np.float32(1e30)  # force non-finite loss
        head = ClassifierHead(data.n_classes, seed=0)
        head.params["head.w"].data *= np.float32(1e8)
        with pytest.raises(RuntimeError, match="diverged"):
            train_classifier(model, head, data, TrainConfig(epochs=1, batch_size=8))


class TestFinetuneCircle:
    def test_freezes_prefix_and_reports_hyperparams(self):
        data = tiny_dataset()
        model = EmbeddingNet(TINY, seed=1)
        before = {n: p.data.tobytes() for n, p in model.params.items()
                  if n.split(".")[0] in ("conv1", "conv2", "conv3", "conv4")}
        cfg = TrainConfig(epochs=2, anneal_start_epoch=1, pk_samples=4, pk_classes=5, seed=0)
        report = finetune_circle(model, data, cfg)
        assert report.extras == {"gamma": 80.0, "margin": 0.4}
        for name, blob in before.items():
            assert model.params[name].data.tobytes() == blob, name
        assert model.trainable_stage_names() == ["conv5", "fc"]

    def test_suffix_actually_changes(self):
        data = tiny_dataset()
        model = EmbeddingNet(TINY, seed=1)
        before = model.params["fc.w"].data.tobytes()
        cfg = TrainConfig(epochs=1, anneal_start_epoch=1, pk_samples=4, pk_classes=5, seed=0)
        finetune_circle(model, data, cfg)
        assert model.params["fc.w"].data.tobytes() != before

    def test_all_frozen_rejected(self):
        data = tiny_dataset()
        model = EmbeddingNet(TINY, seed=1)
        model.set_trainable(list(model.STAGES), False)
        with pytest.raises(ValueError, match="no trainable parameters"):
            finetune_circle(model, data, TrainConfig(epochs=1, pk_samples=2, pk_classes=5))


class TestTrainP2E:
    def test_fits_single_pair(self):
        from kwspot.models import P2ESpec, PhonemeEncoder

        model = PhonemeEncoder(P2ESpec(phoneme_vocab_size=10, phoneme_embed_dim=16,
                                       lstm_hidden=24, output_dim=24), seed=0)
        target = np.random.default_rng(1).standard_normal((1, 24))
        cfg = TrainConfig(epochs=120, anneal_start_epoch=100, batch_size=1,
                          initial_lr=0.005, seed=0)
        report = train_p2e(model, [[3, 1, 7]], target, cfg)
        assert report.final_loss() < 0.01

    def test_unseen_phoneme_rejected(self):
        from kwspot.models import P2ESpec, PhonemeEncoder

        model = PhonemeEncoder(P2ESpec(phoneme_vocab_size=10), seed=0)
        with pytest.raises(ValueError, match="unseen phoneme"):
            train_p2e(model, [[3, 11]], np.ones((1, 256)), TrainConfig(epochs=1))

    def test_deterministic(self):
        from kwspot.models import P2ESpec, PhonemeEncoder

        seqs = [[1, 2, 3], [4, 5], [2, 2, 6, 1]]
        targets = np.random.default_rng(2).standard_normal((3, 16))
        cfg = TrainConfig(epochs=3, anneal_start_epoch=1, batch_size=2, seed=4)
        states = []
        for _ in range(2):
            model = PhonemeEncoder(P2ESpec(phoneme_vocab_size=8, phoneme_embed_dim=8,
                                           lstm_hidden=16, output_dim=16), seed=5)
            train_p2e(model, seqs, targets, cfg)
            states.append(b"".join(p.data.tobytes() for p in model.parameters()))
        assert states[0] == states[1]


class TestBaseline3:
    @pytest.fixture(scope="class")
    def material(self):
        rng = np.random.default_rng(0)

        def clip(seed):
            samples = np.zeros(16000)
            t = np.arange(8000) / 16000
            samples[4000:12000] = 0.4 * np.sin(2 * np.pi * (400 + 50 * seed % 7) * t)
            return KeywordClip(AudioClip(samples), "w", "silence")

        examples = [clip(s) for s in range(5)]
        bank = [clip(s) for s in range(5, 25)]
        background = [synthetic_noise("noise", 16000, np.random.default_rng(9))
                      for _ in range(8)]
        return examples, bank, background

    def test_mixture_and_head(self, material):
        examples, bank, background = material
        model = EmbeddingNet(TINY, seed=0)
        cfg = baseline_config(epochs=1)
        tuned, head, report = finetune_baseline3(model, examples, bank, background,
                                                 cfg, seed=0)
        assert head.n_classes == 3
        assert report.extras["mix"] == [115, 115, 26]
        assert sum(BASELINE_MIX) == 256
        # tuned copy trains everything; the original model stays untouched
        assert all(p.trainable for p in tuned.parameters())
        assert tuned is not model
        assert model.params["fc.w"].data.tobytes() != tuned.params["fc.w"].data.tobytes()

    def test_lr_trace(self, material):
        examples, bank, background = material
        model = EmbeddingNet(TINY, seed=0)
        tuned, head, report = finetune_baseline3(model, examples, bank, background,
                                                 baseline_config(epochs=4), seed=0)
        lrs = [r.lr for r in report.records]
        assert np.allclose(lrs, [0.001 * 0.7**k for k in range(4)])

    def test_requires_target_example(self, material):
        _, bank, background = material
        model = EmbeddingNet(TINY, seed=0)
        with pytest.raises(ValueError, match="target example"):
            finetune_baseline3(model, [], bank, background, baseline_config(epochs=1))

    def test_scores_are_probabilities(self, material):
        examples, bank, background = material
        model = EmbeddingNet(TINY, seed=0)
        tuned, head, _ = finetune_baseline3(model, examples, bank, background,
                                            baseline_config(epochs=1), seed=0)
        feats = np.random.default_rng(3).standard_normal((4, 40, 98)).astype(np.float32)
        p = baseline_scores(tuned, head, feats)
        assert p.shape == (4,)
        assert np.all((0 <= p) & (p <= 1))


class TestConfigFile:
    def test_parse_and_overrides(self, tmp_path):
        p = tmp_path / "t.cfg"
        p.write_text("epochs = 7\ninitial_lr = 0.002   # comment\n\nmargin = 0.3\n")
        values = load_config_file(p)
        cfg = train_config_from_dict(values, classifier_config())
        assert cfg.epochs == 7
        assert cfg.initial_lr == 0.002
        assert cfg.margin == 0.3
        assert cfg.batch_size == 128  # untouched default

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("epochs 7\n")
        with pytest.raises(ValueError, match="key = value"):
            load_config_file(p)

    def test_report_jsonl(self):
        from kwspot.training import TrainReport

        rep = TrainReport("train_classifier", "val_top1", extras={"note": 1})
        rep.add(epoch=1, loss=1.5, metric=0.5, lr=0.001, wall_s=2.0)
        lines = rep.to_jsonl().strip().split("\n")
        assert len(lines) == 2
        import json

        header = json.loads(lines[0])
        assert header["procedure"] == "train_classifier"
        row = json.loads(lines[1])
        assert row["epoch"] == 1 and row["loss"] == 1.5
