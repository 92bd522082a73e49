"""Instruction stacks for the site-wise representation of Activated Random Walks.

Every site ``x`` of the line carries an infinite stack of instructions
``tau[x, 1], tau[x, 2], ...``.  Instructions are i.i.d.: a sleep instruction
with probability ``lambda / (1 + lambda)``, a jump to the left with probability
``p / (1 + lambda)`` and a jump to the right with probability
``(1 - p) / (1 + lambda)``.

Tapes are counter based.  The ``j``-th instruction at site ``x`` is obtained
by hashing ``(seed, x, j)`` with the SplitMix64 finalizer, so any cell can be
queried in any order and always returns the same value.  Concretely, the
stack at ``x`` is the SplitMix64 stream whose state is
``site_key(seed, x)``; the ``j``-th output is turned into a uniform in
``[0, 1)`` from its top 53 bits and partitioned in the fixed order
Sleep, JumpLeft, JumpRight.

The same hash is implemented in :mod:`arwlab._kernels` for the compiled
engine; the two are checked against each other in the test-suite.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

SITE_SALT = 0x5851F42D4C957F2D
REPLICA_SALT = 0x2545F4914F6CDD1D
STREAM_SALT = 0xD1B54A32D192ED03

# Named sub-streams of a replica seed.  The tape itself uses the replica seed.
STREAM_DRIVE = 1
STREAM_HOLES = 2
STREAM_POLICY = 3
STREAM_INITIAL = 4
STREAM_PAIRING = 5

_INV_2_53 = 1.0 / 9007199254740992.0


def fmix64(z: int) -> int:
    """SplitMix64 output finalizer, a bijection of 64-bit words."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def site_key(seed: int, site: int) -> int:
    """SplitMix64 state of the instruction stream at ``site``."""
    return fmix64((seed & MASK64) ^ fmix64((site + SITE_SALT) & MASK64))


def stream_uniform(key: int, j: int) -> float:
    """``j``-th uniform of the SplitMix64 stream with state ``key``."""
    return (fmix64(key + j * GOLDEN) >> 11) * _INV_2_53


def derive_replica_seed(master_seed: int, replica_index: int) -> int:
    """Seed of replica ``replica_index`` under ``master_seed``.

    This is output ``replica_index + 1`` of a SplitMix64 generator whose state
    is ``fmix64(master_seed ^ REPLICA_SALT)``.  For a fixed master seed the map
    is injective in the index (a Weyl step followed by a bijection), and it
    never depends on how many replicas are run or in which order.
    """
    if replica_index < 0:
        raise ValueError("replica_index must be non-negative")
    state = fmix64((master_seed & MASK64) ^ REPLICA_SALT)
    return fmix64(state + (replica_index + 1) * GOLDEN)


def derive_stream_seed(seed: int, stream: int) -> int:
    """Seed of an auxiliary random stream (driving, holes, ...) of a replica."""
    return fmix64((seed & MASK64) ^ fmix64((stream + STREAM_SALT) & MASK64))


def seed_uniform(seed: int, index: int, j: int = 1) -> float:
    """Uniform indexed by ``(index, j)`` in the stream family of ``seed``.

    Auxiliary streams (site of the ``t``-th added particle, hole at a site,
    Bernoulli initial occupation) reuse the tape construction.
    """
    return stream_uniform(site_key(seed, index), j)


class Instruction(enum.IntEnum):
    SLEEP = 0
    LEFT = 1
    RIGHT = 2
    # Produced only by an ejector overlay, never by a random draw.
    EJECT = 3


@dataclass(frozen=True)
class ModelParams:
    """Sleep rate ``lam`` and probability ``p`` to jump to the left."""

    lam: float = 1.0
    p: float = 0.5

    def __post_init__(self):
        if not self.lam > 0 or self.lam != self.lam or self.lam == float("inf"):
            raise ValueError(f"lambda must be a positive finite real, got {self.lam!r}")
        if not 0 < self.p < 1:
            raise ValueError(f"p must lie in the open interval (0, 1), got {self.p!r}")

    @property
    def sleep_threshold(self) -> float:
        return self.lam / (1.0 + self.lam)

    @property
    def left_threshold(self) -> float:
        return (self.lam + self.p) / (1.0 + self.lam)

    @property
    def probabilities(self) -> tuple[float, float, float]:
        """(sleep, left, right) probabilities of a single instruction."""
        return (
            self.lam / (1.0 + self.lam),
            self.p / (1.0 + self.lam),
            (1.0 - self.p) / (1.0 + self.lam),
        )


def decode(u: float, params: ModelParams) -> Instruction:
    if u < params.sleep_threshold:
        return Instruction.SLEEP
    if u < params.left_threshold:
        return Instruction.LEFT
    return Instruction.RIGHT


@dataclass
class InstructionTape:
    """Deterministic random array of instructions.

    ``instruction_at(x, j)`` is a pure function of ``(master_seed, x, j,
    params)``.  Drawn values are also kept in ``memo`` so that a replayed
    stabilization reads exactly the cells it read before.
    """

    master_seed: int
    params: ModelParams = field(default_factory=ModelParams)
    memo: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.master_seed &= MASK64
        self._keys: dict[int, int] = {}

    def key(self, site: int) -> int:
        k = self._keys.get(site)
        if k is None:
            k = self._keys[site] = site_key(self.master_seed, site)
        return k

    def uniform_at(self, site: int, j: int) -> float:
        return stream_uniform(self.key(site), j)

    def instruction_at(self, site: int, j: int) -> Instruction:
        if j < 1:
            raise ValueError(f"instruction index must be >= 1, got {j}")
        cell = (site, j)
        ins = self.memo.get(cell)
        if ins is None:
            ins = self.memo[cell] = decode(self.uniform_at(site, j), self.params)
        return ins

    def kernel_args(self):
        """Arguments describing this tape to the compiled engine."""
        return (self.master_seed, self.params.sleep_threshold,
                self.params.left_threshold, 0, 0)


@dataclass
class EjectorOverlay:
    """Tape ``tau_k``: every instruction of index ``>= threshold_k`` at
    ``site0`` becomes an ejection; everything else reads the base tape."""

    base: InstructionTape
    site0: int
    threshold_k: int

    def __post_init__(self):
        if self.threshold_k < 1:
            raise ValueError("threshold_k must be a positive integer")

    @property
    def params(self) -> ModelParams:
        return self.base.params

    @property
    def master_seed(self) -> int:
        return self.base.master_seed

    def instruction_at(self, site: int, j: int) -> Instruction:
        if site == self.site0 and j >= self.threshold_k:
            return Instruction.EJECT
        return self.base.instruction_at(site, j)

    def kernel_args(self):
        seed, ts, tl, _, _ = self.base.kernel_args()
        return (seed, ts, tl, self.site0, self.threshold_k)


class PrefixedTape:
    """A tape whose first few instructions at chosen sites are prescribed.

    Cells beyond the prescribed prefix fall back to ``base``.  Handy for
    forcing a particular scenario; the compiled engine does not accept it, so
    everything driven by such a tape runs on the reference engine.
    """

    def __init__(self, prefixes: dict[int, list], base: InstructionTape | None = None):
        self.prefixes = {x: [Instruction(i) for i in seq] for x, seq in prefixes.items()}
        self.base = base if base is not None else InstructionTape(0)

    @property
    def params(self) -> ModelParams:
        return self.base.params

    def instruction_at(self, site: int, j: int) -> Instruction:
        if j < 1:
            raise ValueError(f"instruction index must be >= 1, got {j}")
        seq = self.prefixes.get(site)
        if seq is not None and j <= len(seq):
            return seq[j - 1]
        return self.base.instruction_at(site, j)


def instruction_at(tape, site: int, j: int) -> Instruction:
    """Instruction number ``j`` (1-based) of the stack at ``site``."""
    return tape.instruction_at(site, j)


def kernel_args(tape):
    """Compiled-engine description of ``tape`` or ``None`` if unsupported."""
    f = getattr(tape, "kernel_args", None)
    return f() if f is not None else None
