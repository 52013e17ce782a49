"""Token encoding, binary shards, manifests and deterministic splits.

Shard layout (little-endian)::

    header   magic "QSTS" | version u32 | N u16 | count u64 | group u8 | label u8
    record   param f64 (NaN if none) | seed u64 | N*N tokens of (re f64, im f64)
    trailer  checksum u64 over header and records (blake2b, 8-byte digest)

Tokens are the matrix entries in row-major order, token ``i*N + j`` holding
``(Re rho_ij, Im rho_ij)``.
"""

import hashlib
import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config
from .sampler import (
    StateGroup,
    StateRecord,
    UnsupportedGroup,
    allowed_groups,
    derive_seed,
    make_rng,
    sample_states,
)

SHARD_MAGIC = b"QSTS"
SHARD_VERSION = 1
MANIFEST_VERSION = 1
_HEADER = struct.Struct("<4sIHQBB")
_RECORD_META = struct.Struct("<dQ")

SEED_DOMAINS = {"pretrain": 1, "classify": 2, "eval": 3}
TASK_SPLITS = {
    "pretrain": dict(config.SPLIT_FRACTIONS),
    "classify": dict(config.SPLIT_FRACTIONS),
    "eval": {"train": 0.0, "val": 0.0, "test": 1.0},
}


class ShardError(IOError):
    pass


class ChecksumMismatch(ShardError):
    pass


class FormatVersionError(ShardError):
    pass


class ConfigError(ValueError):
    pass


def checksum64(data):
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


# --- encoding -------------------------------------------------------------

def encode_state(rho):
    """``(..., N, N)`` complex -> ``(..., N*N, 2)`` float64 tokens."""
    rho = np.asarray(rho, dtype=np.complex128)
    n = rho.shape[-1]
    flat = rho.reshape(rho.shape[:-2] + (n * n,))
    return np.stack([flat.real, flat.imag], axis=-1)


def decode_tokens(seq, n):
    seq = np.asarray(seq)
    if seq.shape[-2:] != (n * n, 2):
        raise ValueError(f"expected {n * n} tokens of 2 features, got {seq.shape}")
    flat = seq[..., 0].astype(np.float64) + 1j * seq[..., 1].astype(np.float64)
    return flat.reshape(seq.shape[:-2] + (n, n))


# --- shards ---------------------------------------------------------------

def shard_bytes(rho, params, seeds, group):
    group = StateGroup(group)
    rho = np.asarray(rho, dtype=np.complex128)
    count = rho.shape[0]
    n = rho.shape[-1] if count else 0
    header = _HEADER.pack(SHARD_MAGIC, SHARD_VERSION, n, count, group.code, group.label)
    rec = np.zeros(count, dtype=np.dtype([
        ("param", "<f8"), ("seed", "<u8"), ("tokens", "<f8", (n * n, 2))]))
    if count:
        rec["param"] = params
        rec["seed"] = seeds
        rec["tokens"] = encode_state(rho)
    body = header + rec.tobytes()
    return body + struct.pack("<Q", checksum64(body))


def write_shard(records, path):
    """Write a homogeneous list of :class:`StateRecord` to ``path``.

    Returns the checksum stored in the trailer.
    """
    groups = {r.group for r in records}
    if len(groups) > 1:
        raise ValueError(f"shard must hold a single group, got {sorted(g.value for g in groups)}")
    group = groups.pop() if groups else StateGroup.SEP
    rho = np.array([r.rho for r in records], dtype=np.complex128)
    if not records:
        rho = np.zeros((0, 0, 0), dtype=np.complex128)
    params = [np.nan if r.param is None else r.param for r in records]
    seeds = [r.seed for r in records]
    return write_shard_arrays(path, rho, params, seeds, group)


def write_shard_arrays(path, rho, params, seeds, group):
    data = shard_bytes(rho, params, seeds, group)
    Path(path).write_bytes(data)
    return struct.unpack("<Q", data[-8:])[0]


def load_shard_arrays(path, expected_checksum=None):
    """Read a shard into arrays: dict with tokens, params, seeds, group, n."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 8:
        raise ShardError(f"{path}: truncated shard")
    body, trailer = data[:-8], struct.unpack("<Q", data[-8:])[0]
    if checksum64(body) != trailer:
        raise ChecksumMismatch(f"{path}: checksum mismatch")
    if expected_checksum is not None and trailer != expected_checksum:
        raise ChecksumMismatch(f"{path}: checksum differs from manifest")
    magic, version, n, count, group_code, label = _HEADER.unpack_from(body)
    if magic != SHARD_MAGIC:
        raise ShardError(f"{path}: bad magic {magic!r}")
    if version != SHARD_VERSION:
        raise FormatVersionError(f"{path}: shard version {version}, expected {SHARD_VERSION}")
    dt = np.dtype([("param", "<f8"), ("seed", "<u8"), ("tokens", "<f8", (n * n, 2))])
    if len(body) - _HEADER.size != count * dt.itemsize:
        raise ShardError(f"{path}: record block size does not match count")
    rec = np.frombuffer(body, dtype=dt, count=count, offset=_HEADER.size)
    group = StateGroup.from_code(group_code)
    if label != group.label:
        raise ShardError(f"{path}: label {label} inconsistent with group {group.value}")
    return {
        "tokens": np.array(rec["tokens"]),
        "params": np.array(rec["param"]),
        "seeds": np.array(rec["seed"]),
        "group": group,
        "n": n,
        "checksum": trailer,
    }


def _infer_dims(n):
    d = math.isqrt(n)
    if d * d == n:
        return (d, d)
    for d1 in range(2, n):
        if n % d1 == 0:
            return (d1, n // d1)
    raise ValueError(f"cannot infer bipartite dims for side {n}")


def read_shard(path, dims=None):
    arr = load_shard_arrays(path)
    n = arr["n"]
    dims = tuple(dims) if dims is not None else (_infer_dims(n) if n else (0, 0))
    rho = decode_tokens(arr["tokens"], n) if len(arr["tokens"]) else []
    return [
        StateRecord(rho=rho[i], dims=dims, group=arr["group"],
                    param=None if np.isnan(arr["params"][i]) else float(arr["params"][i]),
                    seed=int(arr["seeds"][i]))
        for i in range(len(arr["tokens"]))
    ]


# --- splits ---------------------------------------------------------------

def split_assignment(master_seed, group, count, fractions=None):
    """Per-record split tags for one group.

    Records are ranked by a keyed hash of ``(master_seed, group, index)``;
    the lowest ranks go to test, then val, the rest to train. Split sizes
    are the rounded exact fractions.
    """
    fractions = config.SPLIT_FRACTIONS if fractions is None else fractions
    group = StateGroup(group)
    keys = np.array([
        checksum64(struct.pack("<QBQ", int(master_seed) & (2 ** 64 - 1), group.code, i))
        for i in range(count)
    ], dtype=np.uint64)
    order = np.argsort(keys, kind="stable")
    n_test = int(round(fractions["test"] * count))
    n_val = int(round(fractions["val"] * count))
    if n_test + n_val > count:
        n_val = count - n_test
    tags = np.full(count, "train", dtype=object)
    tags[order[:n_test]] = "test"
    tags[order[n_test:n_test + n_val]] = "val"
    return tags


# --- manifest -------------------------------------------------------------

def parse_dims(text):
    try:
        d1, d2 = (int(x) for x in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"dims must look like '2x3', got {text!r}") from None
    if d1 < 2 or d2 < 2:
        raise ConfigError(f"subsystem dimensions must be >= 2, got {text!r}")
    return d1, d2


def group_counts(dims, task, scale_factor, groups=None):
    """Per-group record counts: ``ceil(table count * scale_factor)``."""
    if not scale_factor > 0:
        raise ConfigError(f"scale_factor must be positive, got {scale_factor}")
    dims = tuple(dims)
    allowed = [g.value for g in allowed_groups(dims)]
    if task == "eval":
        base = {g: config.EVAL_COUNT_PER_GROUP for g in allowed}
    elif task in config.TABLE_COUNTS:
        if dims not in config.TABLE_COUNTS[task]:
            raise ConfigError(f"no table counts for dims {dims[0]}x{dims[1]}")
        base = config.TABLE_COUNTS[task][dims]
    else:
        raise ConfigError(f"unknown task {task!r}")
    if groups is None:
        groups = list(base)
    for g in groups:
        if g not in base:
            raise ConfigError(f"group {g!r} is not available for dims {dims[0]}x{dims[1]}")
    return {g: int(math.ceil(base[g] * scale_factor - 1e-9)) for g in groups}


def _generate_chunk(job):
    group, dims, seed, count, max_attempts = job
    rng = make_rng(seed)
    rho, params = sample_states(group, dims, rng, count, max_attempts=max_attempts)
    return rho, params


def build_dataset(out_dir, dims, task, master_seed, scale_factor=None, counts=None,
                  workers=1, max_attempts=None):
    """Generate a corpus under ``out_dir`` and write ``manifest.json``.

    Records come in chunks of ``config.CHUNK_SIZE``; chunk ``c`` of a group
    draws from its own stream seeded by ``(master_seed, task domain, group,
    c)``, so the output does not depend on ``workers``.
    """
    dims = tuple(dims)
    if counts is None:
        if scale_factor is None:
            raise ConfigError("either scale_factor or counts is required")
        counts = group_counts(dims, task, scale_factor)
    else:
        allowed = {g.value for g in allowed_groups(dims)}
        for g, c in counts.items():
            if g not in allowed:
                raise ConfigError(f"group {g!r} is not available for dims {dims[0]}x{dims[1]}")
            if c < 1:
                raise ConfigError(f"count for {g!r} must be positive")
    if task not in SEED_DOMAINS:
        raise ConfigError(f"unknown task {task!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    domain = SEED_DOMAINS[task]
    jobs, layout = [], []
    for g, count in counts.items():
        group = StateGroup(g)
        for c, start in enumerate(range(0, count, config.CHUNK_SIZE)):
            size = min(config.CHUNK_SIZE, count - start)
            seed = derive_seed(master_seed, domain, group.code, c)
            jobs.append((group, dims, seed, size, max_attempts))
            layout.append((group, seed, size))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_chunk, jobs))
    else:
        results = [_generate_chunk(j) for j in jobs]

    shards = []
    per_group = {}
    for (group, seed, size), (rho, params) in zip(layout, results):
        per_group.setdefault(group, []).append((rho, params, np.full(size, seed, dtype=np.uint64)))
    for group, parts in per_group.items():
        rho = np.concatenate([p[0] for p in parts])
        params = np.concatenate([p[1] for p in parts])
        seeds = np.concatenate([p[2] for p in parts])
        for k, start in enumerate(range(0, len(rho), config.SHARD_MAX_RECORDS)):
            stop = start + config.SHARD_MAX_RECORDS
            name = f"{group.value}-{k:04d}.qsts"
            checksum = write_shard_arrays(out_dir / name, rho[start:stop], params[start:stop],
                                          seeds[start:stop], group)
            shards.append({"path": name, "group": group.value,
                           "count": int(len(rho[start:stop])), "checksum": f"{checksum:016x}"})

    manifest = {
        "format_version": MANIFEST_VERSION,
        "tool_version": config.TOOL_VERSION,
        "task": task,
        "seed_domain": domain,
        "dims": list(dims),
        "n": dims[0] * dims[1],
        "groups": {g: int(c) for g, c in counts.items()},
        "master_seed": int(master_seed),
        "rng_algorithm": config.RNG_ALGORITHM,
        "scale_factor": scale_factor,
        "max_attempts": max_attempts if max_attempts is not None else config.MAX_REJECTION_ATTEMPTS,
        "chunk_size": config.CHUNK_SIZE,
        "split": TASK_SPLITS[task],
        "shards": shards,
    }
    write_manifest(out_dir / "manifest.json", manifest)
    return manifest


def write_manifest(path, manifest):
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n")


def read_manifest(path):
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise FormatVersionError(f"{path}: manifest version {manifest.get('format_version')}")
    manifest["_root"] = str(path.parent)
    return manifest


def load_split(manifest, split):
    """Concatenate the records of one split across all shards.

    Returns a dict of arrays: tokens ``(M, N*N, 2)``, labels, group names,
    params and split tags (all equal to ``split``).
    """
    root = Path(manifest["_root"])
    tokens, labels, groups, params = [], [], [], []
    by_group = {}
    for shard in manifest["shards"]:
        by_group.setdefault(shard["group"], []).append(shard)
    for g, shard_list in by_group.items():
        arrs = [load_shard_arrays(root / s["path"], int(s["checksum"], 16)) for s in shard_list]
        tok = np.concatenate([a["tokens"] for a in arrs])
        par = np.concatenate([a["params"] for a in arrs])
        if len(tok) != manifest["groups"][g]:
            raise ShardError(f"group {g}: shards hold {len(tok)} records, manifest says {manifest['groups'][g]}")
        tags = split_assignment(manifest["master_seed"], g, len(tok), manifest["split"])
        sel = tags == split
        tokens.append(tok[sel])
        params.append(par[sel])
        labels.append(np.full(sel.sum(), StateGroup(g).label, dtype=np.int64))
        groups.append(np.full(sel.sum(), g, dtype=object))
    n2 = manifest["n"] ** 2
    return {
        "tokens": np.concatenate(tokens) if tokens else np.zeros((0, n2, 2)),
        "labels": np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64),
        "groups": np.concatenate(groups) if groups else np.zeros(0, dtype=object),
        "params": np.concatenate(params) if params else np.zeros(0),
        "split": np.full(sum(len(t) for t in tokens), split, dtype=object),
    }
