"""Masked transformer over density-matrix tokens.

Each of the ``N*N`` tokens is a ``(re, im)`` pair. Tokens are embedded by a
linear map, a trainable positional vector is added, a random subset is
swapped for a learned mask token, and a pre-norm encoder processes the
sequence. A linear decoder maps every position back to ``(re, im)``; the
classifier mean-pools the encoder output into two logits.

Density-matrix entries shrink like ``1/N``, so token values are multiplied
by the matrix side ``N`` on the way in and decoder outputs divided by it on
the way out. Losses are still computed on the raw entries.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import config
from .dataset import checksum64

CHECKPOINT_MAGIC = b"QTCK"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIIIIIddI")


class ChecksumMismatch(IOError):
    pass


class CheckpointFormatError(IOError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_tokens: int
    embed_dim: int = config.MODEL_DEFAULTS["embed_dim"]
    n_heads: int = config.MODEL_DEFAULTS["n_heads"]
    n_layers: int = config.MODEL_DEFAULTS["n_layers"]
    ffn_dim: int = config.MODEL_DEFAULTS["ffn_dim"]
    dropout: float = config.MODEL_DEFAULTS["dropout"]
    mask_fraction: float = config.MODEL_DEFAULTS["mask_fraction"]

    def __post_init__(self):
        if min(self.n_tokens, self.embed_dim, self.n_heads, self.n_layers, self.ffn_dim) < 1:
            raise ValueError("all model sizes must be positive")
        if self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 < self.mask_fraction < 1.0:
            raise ValueError("mask_fraction must lie in (0, 1)")

    @property
    def matrix_side(self):
        return math.isqrt(self.n_tokens)


def masked_count(n_tokens, fraction):
    """Round-half-up of ``fraction * n_tokens``, at least one."""
    return max(1, int(math.floor(fraction * n_tokens + 0.5)))


def random_mask(batch, n_tokens, fraction, generator=None):
    """Boolean ``(batch, n_tokens)`` mask with exactly ``masked_count`` set per row."""
    k = masked_count(n_tokens, fraction)
    scores = torch.rand(batch, n_tokens, generator=generator)
    idx = scores.argsort(dim=1)[:, :k]
    mask = torch.zeros(batch, n_tokens, dtype=torch.bool)
    mask.scatter_(1, idx, True)
    return mask


class SelfAttention(nn.Module):
    def __init__(self, dim, n_heads, dropout):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def _split(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

    def scores(self, x):
        q = self._split(self.query(x))
        k = self._split(self.key(x))
        return q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)

    def forward(self, x):
        s = self.scores(x)
        s = s - s.amax(dim=-1, keepdim=True)
        weights = torch.exp(s)
        weights = weights / weights.sum(dim=-1, keepdim=True)
        v = self._split(self.value(x))
        ctx = self.drop(weights) @ v
        b, _, t, _ = ctx.shape
        ctx = ctx.transpose(1, 2).reshape(b, t, -1)
        return self.out(ctx), weights


class EncoderLayer(nn.Module):
    def __init__(self, dim, n_heads, ffn_dim, dropout):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, dim))
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        a, weights = self.attn(self.norm1(x))
        x = x + self.drop(a)
        x = x + self.drop(self.ffn(self.norm2(x)))
        return x, weights


class MaskedTransformer(nn.Module):
    HEAD_PREFIX = "classifier."

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.token_embed = nn.Linear(2, d)
        self.positional = nn.Parameter(torch.randn(cfg.n_tokens, d))
        self.mask_token = nn.Parameter(torch.randn(d))
        self.layers = nn.ModuleList(
            EncoderLayer(d, cfg.n_heads, cfg.ffn_dim, cfg.dropout) for _ in range(cfg.n_layers))
        self.final_norm = nn.LayerNorm(d)
        self.decoder = nn.Linear(d, 2)
        self.classifier = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, 2))
        self.value_scale = float(max(cfg.matrix_side, 1))

    def embed(self, tokens):
        if tokens.shape[-2:] != (self.cfg.n_tokens, 2):
            raise ValueError(f"expected (..., {self.cfg.n_tokens}, 2) tokens, got {tuple(tokens.shape)}")
        return self.token_embed(tokens * self.value_scale) + self.positional

    def apply_mask(self, tokens, mask=None):
        """Embed, then replace masked rows by ``mask_token + positional``."""
        h = self.embed(tokens)
        if mask is None:
            return h
        if mask.shape != h.shape[:-1]:
            raise IndexError(f"mask shape {tuple(mask.shape)} does not match tokens {tuple(h.shape[:-1])}")
        masked = (self.mask_token + self.positional).expand_as(h)
        return torch.where(mask[..., None], masked, h)

    def encode(self, hidden, return_attention=False):
        weights = []
        for layer in self.layers:
            hidden, w = layer(hidden)
            weights.append(w)
        hidden = self.final_norm(hidden)
        if not torch.isfinite(hidden).all():
            raise FloatingPointError("non-finite activations in encoder")
        return (hidden, weights) if return_attention else hidden

    def reconstruct(self, hidden):
        return self.decoder(hidden) / self.value_scale

    def classify(self, hidden):
        return self.classifier(hidden.mean(dim=-2))

    def forward(self, tokens, mask=None):
        """Reconstruction ``(..., N*N, 2)`` for ``tokens`` under ``mask``."""
        return self.reconstruct(self.encode(self.apply_mask(tokens, mask)))

    def logits(self, tokens):
        return self.classify(self.encode(self.apply_mask(tokens)))

    def head_parameters(self):
        return [p for n, p in self.named_parameters() if n.startswith(self.HEAD_PREFIX)]

    def reset_classifier(self):
        for m in self.classifier:
            if isinstance(m, nn.Linear):
                m.reset_parameters()


def loss_mse(pred, target):
    return F.mse_loss(pred, target)


def loss_ce(logits, labels):
    return F.cross_entropy(logits, labels)


def compute_loss(model, tokens, kind, labels=None, mask=None):
    if kind == "mse":
        return loss_mse(model(tokens, mask), tokens)
    if kind == "ce":
        return loss_ce(model.logits(tokens), labels)
    raise ValueError(f"unknown loss kind {kind!r}")


def gradients(model, tokens, kind, labels=None, mask=None, scale=1.0):
    """Gradients of ``scale * loss`` for every named parameter.

    Parameters that do not influence the loss get an explicit zero tensor.
    """
    model.zero_grad(set_to_none=True)
    loss = scale * compute_loss(model, tokens, kind, labels, mask)
    params = dict(model.named_parameters())
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    out = {}
    for (name, p), g in zip(params.items(), grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name}")
        out[name] = g
    return out


# --- checkpoints ----------------------------------------------------------

def checkpoint_bytes(model, metadata=None):
    cfg = model.cfg
    meta = json.dumps(metadata or {}, sort_keys=False).encode()
    head = _CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, cfg.n_tokens, cfg.embed_dim,
                             cfg.n_heads, cfg.n_layers, cfg.ffn_dim, cfg.dropout,
                             cfg.mask_fraction, len(meta))
    parts = [head, meta]
    for _, p in model.named_parameters():
        parts.append(p.detach().cpu().double().numpy().astype("<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", checksum64(body))


def save_checkpoint(path, model, metadata=None):
    data = checkpoint_bytes(model, metadata)
    Path(path).write_bytes(data)
    return struct.unpack("<Q", data[-8:])[0]


def load_checkpoint(path, dtype=torch.float32):
    """Return ``(model, metadata)`` from a checkpoint file."""
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size + 8:
        raise CheckpointFormatError(f"{path}: truncated checkpoint")
    body, trailer = data[:-8], struct.unpack("<Q", data[-8:])[0]
    if checksum64(body) != trailer:
        raise ChecksumMismatch(f"{path}: checksum mismatch")
    (magic, version, n_tokens, embed_dim, n_heads, n_layers, ffn_dim, dropout,
     mask_fraction, meta_len) = _CKPT_HEADER.unpack_from(body)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: checkpoint version {version}")
    cfg = ModelConfig(n_tokens, embed_dim, n_heads, n_layers, ffn_dim, dropout, mask_fraction)
    offset = _CKPT_HEADER.size
    metadata = json.loads(body[offset:offset + meta_len].decode())
    offset += meta_len
    model = MaskedTransformer(cfg)
    with torch.no_grad():
        for _, p in model.named_parameters():
            n = p.numel()
            arr = np.frombuffer(body, dtype="<f8", count=n, offset=offset)
            p.copy_(torch.from_numpy(arr.reshape(p.shape).copy()))
            offset += 8 * n
    if offset != len(body):
        raise CheckpointFormatError(f"{path}: {len(body) - offset} trailing bytes")
    return model.to(dtype), metadata


def config_dict(cfg):
    return asdict(cfg)
