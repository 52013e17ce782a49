"""Numerical tolerances and desk-scale defaults.

Every tolerance used by the library lives here; functions accept a keyword
override where a caller may reasonably need one.
"""

TOOL_VERSION = "0.1.0"

# linear algebra
HERMITIAN_INPUT_TOL = 1e-8
JACOBI_REL_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
QR_DEGENERATE_TOL = 1e-300
PPT_TOL = 1e-10
STATE_TOL = 1e-10

# sampling
MAX_REJECTION_ATTEMPTS = 1000
RNG_ALGORITHM = "numpy-PCG64/standard_normal-ziggurat"

# dataset
SPLIT_FRACTIONS = {"train": 0.90, "val": 0.05, "test": 0.05}
CHUNK_SIZE = 1000
SHARD_MAX_RECORDS = 50_000

# full-scale per-group counts; "eval" is the held-out 100k-per-class corpus
TABLE_COUNTS = {
    "pretrain": {
        (2, 2): {"sep": 4_000_000, "general-ent": 2_000_000,
                 "werner-ent": 2_000_000, "max-ent": 2_000_000},
        (2, 3): {"sep": 8_000_000, "general-ent": 8_000_000},
        (3, 3): {"sep": 6_000_000, "general-ent": 2_000_000,
                 "werner-ent": 2_000_000, "max-ent": 2_000_000,
                 "horodecki-bound": 2_000_000, "horodecki-ent": 2_000_000},
    },
    "classify": {
        (2, 2): {"sep": 1_000_000, "general-ent": 300_000,
                 "werner-ent": 300_000, "max-ent": 300_000},
        (2, 3): {"sep": 1_000_000, "general-ent": 1_000_000},
        (3, 3): {"sep": 1_000_000, "general-ent": 500_000,
                 "werner-ent": 500_000, "max-ent": 500_000,
                 "horodecki-bound": 500_000, "horodecki-ent": 500_000},
    },
}
EVAL_COUNT_PER_GROUP = 100_000

# model
MODEL_DEFAULTS = {
    "embed_dim": 64,
    "n_heads": 4,
    "n_layers": 4,
    "ffn_dim": 256,
    "dropout": 0.0,
    "mask_fraction": 0.15,
}

# training
PRETRAIN_DEFAULTS = {
    "epochs": 20,
    "batch_size": 16,
    "lr_max": 2e-3,
    "lr_min": 1e-6,
    "optimizer": "adam",
    "momentum": 0.9,
}
FINETUNE_DEFAULTS = dict(PRETRAIN_DEFAULTS, epochs=10, batch_size=64, lr_max=1e-3)


def defaults_table():
    """All defaults as one nested mapping, for ``--show-config``."""
    return {
        "tool_version": TOOL_VERSION,
        "tolerances": {
            "hermitian_input": HERMITIAN_INPUT_TOL,
            "jacobi_rel": JACOBI_REL_TOL,
            "jacobi_max_sweeps": JACOBI_MAX_SWEEPS,
            "qr_degenerate": QR_DEGENERATE_TOL,
            "ppt": PPT_TOL,
            "state": STATE_TOL,
        },
        "sampling": {
            "max_rejection_attempts": MAX_REJECTION_ATTEMPTS,
            "rng_algorithm": RNG_ALGORITHM,
        },
        "dataset": {
            "split": dict(SPLIT_FRACTIONS),
            "chunk_size": CHUNK_SIZE,
            "shard_max_records": SHARD_MAX_RECORDS,
            "eval_count_per_group": EVAL_COUNT_PER_GROUP,
        },
        "model": dict(MODEL_DEFAULTS),
        "pretrain": dict(PRETRAIN_DEFAULTS),
        "finetune": dict(FINETUNE_DEFAULTS),
    }
