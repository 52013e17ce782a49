import math

import pytest
import torch

from entformer.dataset import build_dataset, load_split, read_manifest
from entformer.model import MaskedTransformer, ModelConfig
from entformer.training import (
    ArtifactMismatch,
    TrainConfig,
    _check_split,
    classification_report,
    cosine_lr,
    evaluate,
    finetune_classifier,
    format_report,
    pretrain,
    reconstruction_report,
)

SMALL = {"embed_dim": 8, "n_heads": 2, "n_layers": 1, "ffn_dim": 16, "dropout": 0.0}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    counts = {"sep": 200, "general-ent": 100, "werner-ent": 100, "max-ent": 100}
    build_dataset(root, (2, 2), "classify", 3, counts=counts)
    return read_manifest(root / "manifest.json")


def small_model(seed=0):
    torch.manual_seed(seed)
    return MaskedTransformer(ModelConfig(n_tokens=16, **SMALL))


class Identity(MaskedTransformer):
    """Returns the input tokens unchanged, so reconstructions are exact."""

    def forward(self, tokens, mask=None):
        return tokens


class CoinFlip(MaskedTransformer):
    """Ignores its input and guesses uniformly at random."""

    def __init__(self, cfg):
        super().__init__(cfg)
        self.gen = torch.Generator().manual_seed(0)

    def logits(self, tokens):
        return torch.randn(len(tokens), 2, generator=self.gen)


class TestCosine:
    def test_endpoints(self):
        assert cosine_lr(0, 100, 1e-3, 1e-6) == 1e-3
        assert cosine_lr(100, 100, 1e-3, 1e-6) == pytest.approx(1e-6)
        assert cosine_lr(50, 100, 1e-3, 1e-6) == pytest.approx(0.5 * (1e-3 + 1e-6))

    def test_monotone(self):
        lrs = [cosine_lr(s, 40, 1.0, 0.0) for s in range(41)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            cosine_lr(11, 10, 1.0, 0.0)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"batch_size": 0}, {"epochs": 0}, {"lr_min": 1.0, "lr_max": 0.1},
                                    {"optimizer": "rmsprop"}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestPretrain:
    def test_zero_lr_leaves_parameters(self, corpus):
        model = small_model()
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        cfg = TrainConfig(epochs=1, lr_max=0.0, lr_min=0.0, seed=1, optimizer="sgd", momentum=0.0)
        res = pretrain(corpus, train_cfg=cfg, model=model)
        for n, p in res.model.named_parameters():
            assert torch.equal(p, before[n]), n

    def test_report_groups_and_history(self, corpus):
        res = pretrain(corpus, train_cfg=TrainConfig(epochs=2, seed=1), model=small_model())
        assert list(res.report["groups"]) == list(corpus["groups"])
        assert len(res.history) == 2
        assert res.report["split"] == "test"
        for g, r in res.report["groups"].items():
            assert r["count"] == int((load_split(corpus, "test")["groups"] == g).sum())
        assert "untrained h" in format_report(res.report)

    def test_loss_decreases(self, corpus):
        res = pretrain(corpus, train_cfg=TrainConfig(epochs=3, lr_max=3e-3, seed=2), model=small_model())
        assert res.history[-1]["val_mse"] < res.history[0]["val_mse"]

    def test_deterministic(self, corpus):
        cfg = TrainConfig(epochs=1, seed=4, deterministic=True)
        a = pretrain(corpus, train_cfg=cfg, model=small_model())
        b = pretrain(corpus, train_cfg=cfg, model=small_model())
        for (_, p), (_, q) in zip(a.model.named_parameters(), b.model.named_parameters()):
            assert torch.equal(p, q)
        assert a.report == b.report

    def test_mismatched_n(self, corpus):
        model = MaskedTransformer(ModelConfig(n_tokens=36, **SMALL))
        with pytest.raises(ArtifactMismatch):
            pretrain(corpus, train_cfg=TrainConfig(epochs=1), model=model)


@pytest.fixture(scope="module")
def probed(corpus):
    base = small_model(3)
    res = finetune_classifier(base, corpus, TrainConfig(epochs=2, seed=5, freeze_encoder=True))
    return base, res


class TestFinetune:
    def test_frozen_tensors_unchanged(self, probed):
        base, res = probed
        before = dict(base.named_parameters())
        changed = []
        for name, p in res.model.named_parameters():
            if name.startswith("classifier."):
                changed.append(not torch.equal(p, before[name]))
            else:
                assert torch.equal(p, before[name]), name
        assert any(changed)

    def test_input_model_untouched(self, corpus):
        base = small_model(6)
        snapshot = {n: p.detach().clone() for n, p in base.named_parameters()}
        finetune_classifier(base, corpus, TrainConfig(epochs=1, seed=6))
        for n, p in base.named_parameters():
            assert torch.equal(p, snapshot[n])

    def test_report(self, probed, corpus):
        _, res = probed
        rep = res.report
        assert rep["kind"] == "probe"
        assert list(rep["groups"]) == list(corpus["groups"])
        assert sum(map(sum, rep["confusion"])) == len(load_split(corpus, "test")["labels"])
        assert 0.0 <= rep["overall_accuracy"] <= 1.0

    def test_full_finetune_updates_encoder(self, corpus):
        base = small_model(7)
        res = finetune_classifier(base, corpus, TrainConfig(epochs=1, seed=7))
        assert res.report["kind"] == "finetune"
        assert not torch.equal(res.model.token_embed.weight, base.token_embed.weight)


class TestEvaluate:
    def test_identity_reconstruction(self, corpus):
        model = Identity(ModelConfig(n_tokens=16, **SMALL))
        rep = evaluate(model, corpus, "reconstruction")
        for r in rep["groups"].values():
            assert r["mse"] == 0.0
            assert r["hermitian_distance"] == pytest.approx(0.0, abs=1e-3)

    def test_coin_flip_accuracy(self, tmp_path):
        build_dataset(tmp_path, (2, 2), "eval", 1, counts={"sep": 40_000, "max-ent": 40_000})
        manifest = read_manifest(tmp_path / "manifest.json")
        model = CoinFlip(ModelConfig(n_tokens=16, **SMALL))
        rep = evaluate(model, manifest, "classification")
        assert rep["overall_accuracy"] == pytest.approx(0.5, abs=0.02)

    def test_only_test_split(self, corpus):
        model = small_model()
        rep = evaluate(model, corpus, "classification")
        n_test = len(load_split(corpus, "test")["labels"])
        assert sum(r["count"] for r in rep["groups"].values()) == n_test
        assert rep["split"] == "test"

    def test_rejects_foreign_split(self, corpus):
        data = load_split(corpus, "train")
        with pytest.raises(ArtifactMismatch):
            _check_split(data, "test")

    def test_unknown_mode(self, corpus):
        with pytest.raises(ValueError):
            evaluate(small_model(), corpus, "bogus")

    def test_reports_agree(self, corpus):
        model = small_model()
        data = load_split(corpus, "test")
        groups, confusion, overall = classification_report(model, data)
        rep = evaluate(model, corpus, "classification")
        assert rep["groups"] == groups and rep["confusion"] == confusion
        assert math.isclose(rep["overall_accuracy"], overall)
        rec = reconstruction_report(model, data, 4, seed=0)
        assert evaluate(model, corpus, "reconstruction", seed=0)["groups"] == rec
