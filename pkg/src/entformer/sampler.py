"""Seeded generators for the labelled state families.

Each family has a vectorised ``*_states`` function that draws a whole stack
of density matrices from one generator, and a single-record ``sample_*``
wrapper that returns a :class:`StateRecord`.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import config
from .linalg import dagger, is_npt, qr_unitary


class StateGroup(str, Enum):
    SEP = "sep"
    GENERAL_ENT = "general-ent"
    WERNER_ENT = "werner-ent"
    MAX_ENT = "max-ent"
    HORODECKI_BOUND = "horodecki-bound"
    HORODECKI_ENT = "horodecki-ent"

    @property
    def label(self):
        return 0 if self is StateGroup.SEP else 1

    @property
    def code(self):
        return list(StateGroup).index(self)

    @classmethod
    def from_code(cls, code):
        return list(cls)[code]


class RejectionBudgetExceeded(RuntimeError):
    def __init__(self, attempts):
        super().__init__(f"no NPT state accepted after {attempts} attempts")
        self.attempts = attempts


class AlphaOutOfRange(ValueError):
    pass


class UnsupportedGroup(ValueError):
    pass


def allowed_groups(dims):
    """Groups generated for a given ``(d1, d2)``, in table order."""
    d1, d2 = dims
    if d1 < 2 or d2 < 2:
        raise ValueError(f"subsystem dimensions must be >= 2, got {dims}")
    groups = [StateGroup.SEP, StateGroup.GENERAL_ENT]
    if d1 == d2:
        groups += [StateGroup.WERNER_ENT, StateGroup.MAX_ENT]
    if (d1, d2) == (3, 3):
        groups += [StateGroup.HORODECKI_BOUND, StateGroup.HORODECKI_ENT]
    return groups


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(master_seed, *key):
    """64-bit seed for the stream identified by ``key`` under ``master_seed``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class StateRecord:
    rho: np.ndarray
    dims: tuple
    group: StateGroup
    param: Optional[float] = None
    seed: int = 0
    label: int = field(init=False)

    def __post_init__(self):
        self.group = StateGroup(self.group)
        self.dims = tuple(self.dims)
        self.label = self.group.label

    def __eq__(self, other):
        if not isinstance(other, StateRecord):
            return NotImplemented
        same_param = (self.param == other.param
                      or (self.param is not None and other.param is not None
                          and np.isnan(self.param) and np.isnan(other.param)))
        return (self.dims == other.dims and self.group == other.group
                and self.seed == other.seed and same_param
                and np.array_equal(self.rho, other.rho))


def sample_ginibre(n, rng, size=None):
    """Square Ginibre matrix: real and imaginary parts iid N(0, 1)."""
    if n < 1:
        raise ValueError("n must be positive")
    shape = (n, n) if size is None else (size, n, n)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return re + 1j * im


def _complex_normal_vectors(rng, count, d):
    return rng.standard_normal((count, d)) + 1j * rng.standard_normal((count, d))


def _projector(psi):
    return psi[..., :, None] * np.conj(psi)[..., None, :]


def max_entangled_vector(d):
    psi = np.zeros(d * d, dtype=np.complex128)
    psi[np.arange(d) * (d + 1)] = 1.0 / np.sqrt(d)
    return psi


def pure_separable_states(dims, rng, count):
    d1, d2 = dims
    x = _complex_normal_vectors(rng, count, d1)
    y = _complex_normal_vectors(rng, count, d2)
    phi1 = x / np.linalg.norm(x, axis=-1, keepdims=True)
    phi2 = y / np.linalg.norm(y, axis=-1, keepdims=True)
    psi = (phi1[:, :, None] * phi2[:, None, :]).reshape(count, d1 * d2)
    return _projector(psi)


def werner_state(d, p):
    """``(1 - p) |psi><psi| + p I / d^2`` with ``|psi>`` maximally entangled."""
    p = np.asarray(p, dtype=float)
    proj = _projector(max_entangled_vector(d))
    mixed = np.eye(d * d) / d ** 2
    return (1.0 - p)[..., None, None] * proj + p[..., None, None] * mixed


def werner_states(d, rng, count):
    if d < 2:
        raise ValueError("d must be >= 2")
    p_max = d / (d + 1)
    u = rng.random(count)
    while np.any(u == 0.0):
        zero = u == 0.0
        u[zero] = rng.random(int(zero.sum()))
    p = p_max * u
    return werner_state(d, p), p


def general_entangled_states(dims, rng, count, max_attempts=None):
    """Hilbert-Schmidt random states kept only when NPT.

    Returns ``(rho, attempts)`` where ``attempts`` counts the draws spent on
    each accepted state.
    """
    max_attempts = config.MAX_REJECTION_ATTEMPTS if max_attempts is None else max_attempts
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    n = dims[0] * dims[1]
    out = np.empty((count, n, n), dtype=np.complex128)
    attempts = np.zeros(count, dtype=np.int64)
    pending = np.arange(count)
    while pending.size:
        g = sample_ginibre(n, rng, size=pending.size)
        w = g @ dagger(g)
        w = 0.5 * (w + dagger(w))
        rho = w / np.trace(w, axis1=-2, axis2=-1).real[:, None, None]
        attempts[pending] += 1
        npt, _ = is_npt(rho, dims)
        out[pending[npt]] = rho[npt]
        pending = pending[~npt]
        if pending.size and attempts[pending].max() >= max_attempts:
            raise RejectionBudgetExceeded(int(attempts[pending].max()))
    return out, attempts


def max_entangled_from_unitary(u):
    """State ``|vec(U)><vec(U)| / d`` using column-major vectorisation."""
    u = np.asarray(u, dtype=np.complex128)
    d = u.shape[-1]
    psi = np.swapaxes(u, -1, -2).reshape(u.shape[:-2] + (d * d,)) / np.sqrt(d)
    return _projector(psi)


def max_entangled_states(d, rng, count):
    if d < 2:
        raise ValueError("d must be >= 2")
    u = qr_unitary(sample_ginibre(d, rng, size=count))
    return max_entangled_from_unitary(u)


def _horodecki_parts():
    def ket(i, j):
        v = np.zeros(9, dtype=np.complex128)
        v[3 * i + j] = 1.0
        return v

    sigma_plus = sum(_projector(ket(i, j)) for i, j in [(0, 1), (1, 2), (2, 0)]) / 3
    sigma_minus = sum(_projector(ket(i, j)) for i, j in [(1, 0), (2, 1), (0, 2)]) / 3
    psi = (ket(0, 0) + ket(1, 1) + ket(2, 2)) / np.sqrt(3)
    return _projector(psi), sigma_plus, sigma_minus


def horodecki_state(alpha):
    """3x3 Horodecki family, valid for ``2 <= alpha <= 5``.

    Separable up to 3, bound entangled on (3, 4], free entangled on (4, 5].
    Accepts an array of alphas and returns a stack.
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any((alpha < 2.0) | (alpha > 5.0)):
        raise AlphaOutOfRange(f"alpha must lie in [2, 5], got {alpha}")
    proj, sp, sm = _horodecki_parts()
    a = alpha[..., None, None]
    return (2.0 / 7.0) * proj + (a / 7.0) * sp + ((5.0 - a) / 7.0) * sm


def horodecki_states(regime, rng, count):
    if regime not in ("bound", "free"):
        raise ValueError(f"regime must be 'bound' or 'free', got {regime!r}")
    upper = 4.0 if regime == "bound" else 5.0
    alpha = upper - rng.random(count)
    return horodecki_state(alpha), alpha


def sample_states(group, dims, rng, count, max_attempts=None):
    """Draw ``count`` states of ``group``; returns ``(rho, params)``.

    ``params`` holds p or alpha for the parametrised families and NaN
    otherwise.
    """
    group = StateGroup(group)
    if group not in allowed_groups(dims):
        raise UnsupportedGroup(f"group {group.value} is not defined for dims {dims[0]}x{dims[1]}")
    d = dims[0]
    params = np.full(count, np.nan)
    if group is StateGroup.SEP:
        rho = pure_separable_states(dims, rng, count)
    elif group is StateGroup.GENERAL_ENT:
        rho, _ = general_entangled_states(dims, rng, count, max_attempts)
    elif group is StateGroup.WERNER_ENT:
        rho, params = werner_states(d, rng, count)
    elif group is StateGroup.MAX_ENT:
        rho = max_entangled_states(d, rng, count)
    elif group is StateGroup.HORODECKI_BOUND:
        rho, params = horodecki_states("bound", rng, count)
    else:
        rho, params = horodecki_states("free", rng, count)
    # exact Hermitian symmetry; products above can differ in the last bit
    return 0.5 * (rho + dagger(rho)), params


def _single(group, dims, rng, seed, **kw):
    rho, params = sample_states(group, dims, rng, 1, **kw)
    param = None if np.isnan(params[0]) else float(params[0])
    return StateRecord(rho=rho[0], dims=dims, group=group, param=param, seed=seed)


def sample_pure_separable(dims, rng, seed=0):
    return _single(StateGroup.SEP, dims, rng, seed)


def sample_werner(d, rng, seed=0):
    return _single(StateGroup.WERNER_ENT, (d, d), rng, seed)


def sample_general_entangled(dims, rng, max_attempts=None, seed=0):
    return _single(StateGroup.GENERAL_ENT, dims, rng, seed, max_attempts=max_attempts)


def sample_max_entangled(d, rng, seed=0):
    return _single(StateGroup.MAX_ENT, (d, d), rng, seed)


def sample_horodecki(regime, rng, seed=0):
    group = StateGroup.HORODECKI_BOUND if regime == "bound" else StateGroup.HORODECKI_ENT
    if regime not in ("bound", "free"):
        raise ValueError(f"regime must be 'bound' or 'free', got {regime!r}")
    return _single(group, (3, 3), rng, seed)
