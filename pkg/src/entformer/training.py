"""Pretraining, fine-tuning, probing and evaluation loops."""

import copy
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

from . import config
from .dataset import decode_tokens, load_split
from .linalg import dagger, frobenius_norm
from .model import MaskedTransformer, ModelConfig, loss_ce, loss_mse, random_mask

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


class ArtifactMismatch(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = config.PRETRAIN_DEFAULTS["epochs"]
    batch_size: int = config.PRETRAIN_DEFAULTS["batch_size"]
    lr_max: float = config.PRETRAIN_DEFAULTS["lr_max"]
    lr_min: float = config.PRETRAIN_DEFAULTS["lr_min"]
    seed: int = 0
    deterministic: bool = False
    freeze_encoder: bool = False
    optimizer: str = config.PRETRAIN_DEFAULTS["optimizer"]
    momentum: float = config.PRETRAIN_DEFAULTS["momentum"]

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    model: MaskedTransformer
    report: dict
    history: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def cosine_lr(step, total_steps, lr_max, lr_min):
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def config_digest(cfg):
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _setup(train_cfg):
    if train_cfg.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
    torch.manual_seed(train_cfg.seed)


def _tensor(tokens):
    return torch.as_tensor(np.asarray(tokens, dtype=np.float32))


def _optimizer(params, cfg):
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=cfg.lr_max, momentum=cfg.momentum)
    return torch.optim.Adam(params, lr=cfg.lr_max)


def _batches(n, batch_size, generator):
    order = torch.randperm(n, generator=generator)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _check_split(data, split):
    if not np.all(data["split"] == split):
        raise ArtifactMismatch(f"records outside the {split} split were consumed")


def _check_n(model, manifest):
    if model.cfg.n_tokens != manifest["n"] ** 2:
        raise ArtifactMismatch(
            f"model expects {model.cfg.n_tokens} tokens, corpus has N={manifest['n']}")


@torch.no_grad()
def reconstruct_tokens(model, tokens, mask, batch_size=1024):
    model.eval()
    out = [model(tokens[i:i + batch_size], mask[i:i + batch_size])
           for i in range(0, len(tokens), batch_size)]
    return torch.cat(out) if out else tokens.new_zeros(tokens.shape)


@torch.no_grad()
def predict_logits(model, tokens, batch_size=1024):
    model.eval()
    out = [model.logits(tokens[i:i + batch_size]) for i in range(0, len(tokens), batch_size)]
    return torch.cat(out) if out else tokens.new_zeros((0, 2))


def _hermitian_distances(recon, n):
    mats = decode_tokens(recon.double().numpy(), n)
    return np.sqrt(frobenius_norm(mats - dagger(mats)))


def reconstruction_report(model, data, n, seed):
    """Per-group MSE and Hermitian distance of reconstructions under a fresh mask."""
    tokens = _tensor(data["tokens"])
    gen = torch.Generator().manual_seed(seed)
    mask = random_mask(len(tokens), model.cfg.n_tokens, model.cfg.mask_fraction, gen)
    recon = reconstruct_tokens(model, tokens, mask)
    per_sample_mse = ((recon - tokens) ** 2).mean(dim=(1, 2)).double().numpy()
    dist = _hermitian_distances(recon, n)
    groups = {}
    for g in dict.fromkeys(data["groups"]):
        sel = data["groups"] == g
        groups[g] = {
            "count": int(sel.sum()),
            "mse": float(per_sample_mse[sel].mean()),
            "hermitian_distance": float(dist[sel].mean()),
        }
    return groups


def classification_report(model, data):
    logits = predict_logits(model, _tensor(data["tokens"]))
    pred = logits.argmax(dim=1).numpy()
    labels = data["labels"]
    groups = {}
    for g in dict.fromkeys(data["groups"]):
        sel = data["groups"] == g
        groups[g] = {"count": int(sel.sum()), "accuracy": float((pred[sel] == labels[sel]).mean())}
    confusion = [[int(((labels == t) & (pred == p)).sum()) for p in (0, 1)] for t in (0, 1)]
    return groups, confusion, float((pred == labels).mean()) if len(labels) else float("nan")


def _val_mse(model, tokens, mask):
    recon = reconstruct_tokens(model, tokens, mask)
    return float(loss_mse(recon, tokens))


def _abort(loss, epoch, batch_idx):
    if not math.isfinite(loss):
        raise TrainingAborted(f"non-finite loss {loss} at epoch {epoch}, batch {batch_idx}")


def pretrain(manifest, model_cfg=None, train_cfg=None, model=None):
    """Masked-reconstruction pretraining on the train split of ``manifest``.

    Keeps the parameters with the lowest validation MSE. The report compares
    the untrained and pretrained model on the test split.
    """
    train_cfg = train_cfg or TrainConfig()
    _setup(train_cfg)
    n = manifest["n"]
    model_cfg = model_cfg or ModelConfig(n_tokens=n * n)
    model = model or MaskedTransformer(model_cfg)
    _check_n(model, manifest)

    train = load_split(manifest, "train")
    val = load_split(manifest, "val")
    test = load_split(manifest, "test")
    _check_split(test, "test")
    x_train, x_val = _tensor(train["tokens"]), _tensor(val["tokens"])

    eval_seed = train_cfg.seed + 1
    untrained = reconstruction_report(model, test, n, eval_seed)

    gen = torch.Generator().manual_seed(train_cfg.seed)
    val_mask = random_mask(len(x_val), model.cfg.n_tokens, model.cfg.mask_fraction,
                           torch.Generator().manual_seed(train_cfg.seed + 2))
    opt = _optimizer(model.parameters(), train_cfg)
    steps_per_epoch = math.ceil(len(x_train) / train_cfg.batch_size)
    total = train_cfg.epochs * steps_per_epoch
    step = 0
    best_val, best_state, history = math.inf, None, []
    for epoch in range(train_cfg.epochs):
        model.train()
        running = 0.0
        for b, idx in enumerate(_batches(len(x_train), train_cfg.batch_size, gen)):
            for g in opt.param_groups:
                g["lr"] = cosine_lr(step, total, train_cfg.lr_max, train_cfg.lr_min)
            xb = x_train[idx]
            mask = random_mask(len(xb), model.cfg.n_tokens, model.cfg.mask_fraction, gen)
            loss = loss_mse(model(xb, mask), xb)
            _abort(loss.item(), epoch, b)
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += loss.item() * len(xb)
            step += 1
        v = _val_mse(model, x_val, val_mask) if len(x_val) else running / len(x_train)
        recon = reconstruct_tokens(model, x_val, val_mask) if len(x_val) else None
        h = float(_hermitian_distances(recon, n).mean()) if recon is not None else float("nan")
        history.append({"epoch": epoch + 1, "train_mse": running / len(x_train),
                        "val_mse": v, "val_hermitian_distance": h})
        log.info("pretrain epoch %d train_mse %.3e val_mse %.3e val_h %.4f",
                 epoch + 1, running / len(x_train), v, h)
        if v < best_val:
            best_val, best_state = v, copy.deepcopy(model.state_dict())
    if best_state is not None:
        model.load_state_dict(best_state)

    pretrained = reconstruction_report(model, test, n, eval_seed)
    resolved = {"model": asdict(model.cfg), "train": asdict(train_cfg),
                "manifest_seed": manifest["master_seed"], "dims": manifest["dims"]}
    report = {
        "kind": "pretrain",
        "tool_version": config.TOOL_VERSION,
        "config_digest": config_digest(resolved),
        "config": resolved,
        "split": "test",
        "best_val_mse": best_val,
        "groups": {g: {"count": untrained[g]["count"],
                       "untrained_hermitian_distance": untrained[g]["hermitian_distance"],
                       "pretrained_hermitian_distance": pretrained[g]["hermitian_distance"],
                       "untrained_mse": untrained[g]["mse"],
                       "pretrained_mse": pretrained[g]["mse"]}
                   for g in pretrained},
        "history": history,
    }
    return TrainResult(model, report, history, {"stage": "pretrain", "config": resolved})


def finetune_classifier(pretrained, manifest, train_cfg=None):
    """Cross-entropy training of a fresh classifier head on a pretrained encoder.

    With ``train_cfg.freeze_encoder`` only the head receives updates.
    """
    train_cfg = train_cfg or TrainConfig(**config.FINETUNE_DEFAULTS)
    model = copy.deepcopy(pretrained)
    _check_n(model, manifest)
    _setup(train_cfg)
    model.reset_classifier()

    train = load_split(manifest, "train")
    val = load_split(manifest, "val")
    test = load_split(manifest, "test")
    _check_split(test, "test")
    x_train, y_train = _tensor(train["tokens"]), torch.as_tensor(train["labels"])
    x_val, y_val = _tensor(val["tokens"]), torch.as_tensor(val["labels"])

    if train_cfg.freeze_encoder:
        head = set(id(p) for p in model.head_parameters())
        for p in model.parameters():
            p.requires_grad_(id(p) in head)
        params = model.head_parameters()
    else:
        params = list(model.parameters())
    opt = _optimizer(params, train_cfg)

    gen = torch.Generator().manual_seed(train_cfg.seed)
    steps_per_epoch = math.ceil(len(x_train) / train_cfg.batch_size)
    total = train_cfg.epochs * steps_per_epoch
    step = 0
    best_val, best_state, history = math.inf, None, []
    for epoch in range(train_cfg.epochs):
        model.train()
        if train_cfg.freeze_encoder:
            # frozen layers run without dropout
            for name, m in model.named_children():
                if name != "classifier":
                    m.eval()
        running = 0.0
        for b, idx in enumerate(_batches(len(x_train), train_cfg.batch_size, gen)):
            for g in opt.param_groups:
                g["lr"] = cosine_lr(step, total, train_cfg.lr_max, train_cfg.lr_min)
            loss = loss_ce(model.logits(x_train[idx]), y_train[idx])
            _abort(loss.item(), epoch, b)
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += loss.item() * len(idx)
            step += 1
        if len(x_val):
            logits = predict_logits(model, x_val)
            v = float(loss_ce(logits, y_val))
            acc = float((logits.argmax(1) == y_val).float().mean())
        else:
            v, acc = running / len(x_train), float("nan")
        history.append({"epoch": epoch + 1, "train_ce": running / len(x_train),
                        "val_ce": v, "val_accuracy": acc})
        log.info("finetune epoch %d train_ce %.4f val_ce %.4f val_acc %.4f",
                 epoch + 1, running / len(x_train), v, acc)
        if v < best_val:
            best_val, best_state = v, copy.deepcopy(model.state_dict())
    if best_state is not None:
        model.load_state_dict(best_state)
    for p in model.parameters():
        p.requires_grad_(True)

    groups, confusion, overall = classification_report(model, test)
    resolved = {"model": asdict(model.cfg), "train": asdict(train_cfg),
                "manifest_seed": manifest["master_seed"], "dims": manifest["dims"]}
    report = {
        "kind": "probe" if train_cfg.freeze_encoder else "finetune",
        "tool_version": config.TOOL_VERSION,
        "config_digest": config_digest(resolved),
        "config": resolved,
        "split": "test",
        "best_val_ce": best_val,
        "overall_accuracy": overall,
        "confusion": confusion,
        "groups": groups,
        "history": history,
    }
    stage = "probe" if train_cfg.freeze_encoder else "finetune"
    return TrainResult(model, report, history, {"stage": stage, "config": resolved})


def evaluate(model, manifest, mode, seed=0):
    """Score ``model`` on the test split of ``manifest``.

    ``mode`` is ``"reconstruction"`` (per-group MSE and Hermitian distance
    under a fresh mask) or ``"classification"`` (per-group accuracy and a
    confusion matrix with rows = true label).
    """
    _check_n(model, manifest)
    data = load_split(manifest, "test")
    _check_split(data, "test")
    resolved = {"model": asdict(model.cfg), "mode": mode, "seed": seed,
                "manifest_seed": manifest["master_seed"], "dims": manifest["dims"]}
    report = {
        "kind": f"eval-{mode}",
        "tool_version": config.TOOL_VERSION,
        "config_digest": config_digest(resolved),
        "config": resolved,
        "split": "test",
    }
    if mode == "reconstruction":
        report["groups"] = reconstruction_report(model, data, manifest["n"], seed)
    elif mode == "classification":
        groups, confusion, overall = classification_report(model, data)
        report["overall_accuracy"] = overall
        report["confusion"] = confusion
        report["groups"] = groups
    else:
        raise ValueError(f"unknown evaluation mode {mode!r}")
    return report


def format_report(report):
    """Plain-text per-group summary table."""
    groups = report["groups"]
    lines = [f"{report['kind']}  (split: {report.get('split', 'test')}, digest {report['config_digest']})"]
    first = next(iter(groups.values()), {})
    if "pretrained_hermitian_distance" in first:
        lines.append(f"{'group':<16}{'count':>8}{'untrained h':>14}{'pretrained h':>14}")
        for g, r in groups.items():
            lines.append(f"{g:<16}{r['count']:>8}{r['untrained_hermitian_distance']:>14.4f}"
                         f"{r['pretrained_hermitian_distance']:>14.4f}")
    elif "hermitian_distance" in first:
        lines.append(f"{'group':<16}{'count':>8}{'mse':>14}{'h':>10}")
        for g, r in groups.items():
            lines.append(f"{g:<16}{r['count']:>8}{r['mse']:>14.3e}{r['hermitian_distance']:>10.4f}")
    else:
        lines.append(f"{'group':<16}{'count':>8}{'accuracy':>12}")
        for g, r in groups.items():
            lines.append(f"{g:<16}{r['count']:>8}{100 * r['accuracy']:>11.3f}%")
        if "overall_accuracy" in report:
            lines.append(f"{'overall':<16}{'':>8}{100 * report['overall_accuracy']:>11.3f}%")
    return "\n".join(lines)
