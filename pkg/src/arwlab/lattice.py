"""Particle configurations, odometers, segments and the single toppling."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from .tape import Instruction


class ToppleError(Exception):
    pass


class IllegalToppling(ToppleError):
    """Legal toppling requested at a site without an active particle."""


class EmptyToppling(ToppleError):
    """Acceptable toppling requested at an empty site."""


class FuelExhausted(RuntimeError):
    """A stabilization used up its toppling budget.

    The partial state is attached as ``report`` (flagged ``exhausted``).
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SegmentSpec:
    """Integer interval ``{lo, ..., hi}``; empty when ``lo == hi + 1``."""

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi + 1:
            raise ValueError(f"invalid segment [{self.lo}, {self.hi}]")

    @classmethod
    def of_length(cls, n: int) -> "SegmentSpec":
        """The segment ``V_n = {1, ..., n}``."""
        return cls(1, n)

    def __contains__(self, x) -> bool:
        return self.lo <= x <= self.hi

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.lo, self.hi + 1))

    def __len__(self) -> int:
        return self.hi - self.lo + 1


# Odometers are plain counters: site -> number of instructions consumed.
Odometer = Counter


class Configuration:
    """Particle configuration on a growable integer window.

    Each site holds ``count`` particles; ``asleep`` marks a single sleeping
    particle.  Storage is a pair of lists over ``[lo, lo + len)`` that doubles
    whenever a site outside the window is written.
    """

    __slots__ = ("_lo", "_count", "_asleep")

    def __init__(self, lo: int = 0, size: int = 8):
        self._lo = lo
        self._count = [0] * size
        self._asleep = [False] * size

    # -- construction -------------------------------------------------------

    @classmethod
    def empty(cls) -> "Configuration":
        return cls()

    @classmethod
    def from_counts(cls, counts: dict, sleeping: Iterable[int] = ()) -> "Configuration":
        cfg = cls()
        for x, c in counts.items():
            if c:
                cfg.add_active(x, c)
        for x in sleeping:
            if cfg.count(x) != 1:
                raise ValueError(f"a sleeping particle must be alone (site {x})")
            cfg._set_asleep(x, True)
        return cfg

    @classmethod
    def ones(cls, region: SegmentSpec) -> "Configuration":
        """One active particle on each site of ``region``."""
        cfg = cls(region.lo, max(len(region), 1))
        for x in region:
            cfg.add_active(x)
        return cfg

    @classmethod
    def point(cls, site: int, k: int) -> "Configuration":
        cfg = cls(site - 4, 8)
        cfg.add_active(site, k)
        return cfg

    def copy(self) -> "Configuration":
        new = Configuration.__new__(Configuration)
        new._lo = self._lo
        new._count = list(self._count)
        new._asleep = list(self._asleep)
        return new

    # -- storage ------------------------------------------------------------

    def _index(self, x: int) -> int:
        i = x - self._lo
        if 0 <= i < len(self._count):
            return i
        size = len(self._count)
        hi = self._lo + size - 1
        span_lo, span_hi = min(self._lo, x), max(hi, x)
        span = span_hi - span_lo + 1
        new_size = max(2 * size, 1)
        while new_size < span:
            new_size *= 2
        new_lo = span_lo - (new_size - span) // 2
        left = self._lo - new_lo
        right = new_size - size - left
        self._count = [0] * left + self._count + [0] * right
        self._asleep = [False] * left + self._asleep + [False] * right
        self._lo = new_lo
        return x - new_lo

    def _set_asleep(self, x: int, flag: bool) -> None:
        self._asleep[self._index(x)] = flag

    @property
    def window(self) -> tuple[int, int]:
        """Currently allocated window ``(lo, hi)`` (implementation detail)."""
        return self._lo, self._lo + len(self._count) - 1

    # -- queries ------------------------------------------------------------

    def count(self, x: int) -> int:
        i = x - self._lo
        if 0 <= i < len(self._count):
            return self._count[i]
        return 0

    def is_asleep(self, x: int) -> bool:
        i = x - self._lo
        return 0 <= i < len(self._count) and self._asleep[i]

    def is_active(self, x: int) -> bool:
        """True if ``x`` holds at least one active particle (is unstable)."""
        i = x - self._lo
        return 0 <= i < len(self._count) and self._count[i] > 0 and not self._asleep[i]

    def occupied(self) -> list[int]:
        lo = self._lo
        return [lo + i for i, c in enumerate(self._count) if c]

    def active_sites(self) -> list[int]:
        lo = self._lo
        return [lo + i for i, c in enumerate(self._count) if c and not self._asleep[i]]

    def sleeping_sites(self) -> list[int]:
        lo = self._lo
        return [lo + i for i, s in enumerate(self._asleep) if s]

    def total(self) -> int:
        return sum(self._count)

    def as_dict(self) -> dict:
        """``{site: count}`` for active sites and ``{site: 's'}`` for sleepers."""
        out = {}
        lo = self._lo
        for i, c in enumerate(self._count):
            if c:
                out[lo + i] = "s" if self._asleep[i] else c
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.as_dict() == other.as_dict()

    def __repr__(self) -> str:
        return f"Configuration({self.as_dict()})"

    # -- mutation -----------------------------------------------------------

    def add_active(self, x: int, k: int = 1) -> bool:
        """Add ``k`` active particles at ``x``; returns True if a sleeper woke."""
        i = self._index(x)
        woke = self._asleep[i]
        self._asleep[i] = False
        self._count[i] += k
        return woke

    def remove_one(self, x: int) -> None:
        i = self._index(x)
        if self._count[i] == 0:
            raise ValueError(f"no particle at site {x}")
        self._count[i] -= 1
        self._asleep[i] = False

    def wake(self, x: int) -> None:
        self._asleep[self._index(x)] = False

    def fall_asleep(self, x: int) -> None:
        i = self._index(x)
        if self._count[i] != 1:
            raise ValueError(f"only a lone particle can sleep (site {x})")
        self._asleep[i] = True


def is_stable_in(config: Configuration, region: SegmentSpec) -> bool:
    """True iff no site of ``region`` hosts an active particle."""
    return not any(config.is_active(x) for x in region)


def particle_count(config: Configuration, region: SegmentSpec) -> int:
    """Number of particles (active or sleeping) in ``region``."""
    return sum(config.count(x) for x in region)


@dataclass(frozen=True)
class ToppleEvent:
    site: int
    j: int
    instruction: Instruction
    target: Optional[int] = None
    exit: Optional[str] = None  # "left", "right" or "ejected"
    woke: bool = False
    fell_asleep: bool = False


LEGAL = "legal"
ACCEPTABLE = "acceptable"


def topple(config: Configuration, odometer: Counter, tape, site: int,
           mode: str = LEGAL, region: Optional[SegmentSpec] = None) -> ToppleEvent:
    """Apply the next instruction of the stack at ``site``.

    ``region=None`` means the whole line (nothing is ever killed).  Otherwise
    a jump leaving ``region`` removes the particle and the event records the
    exit side; an ejection removes the particle and is recorded as
    ``"ejected"``.
    """
    if region is not None and site not in region:
        raise ValueError(f"site {site} lies outside the region {region}")
    c = config.count(site)
    if mode == LEGAL:
        if c == 0 or config.is_asleep(site):
            raise IllegalToppling(f"no active particle at site {site}")
    elif mode == ACCEPTABLE:
        if c == 0:
            raise EmptyToppling(f"no particle at site {site}")
        config.wake(site)
    else:
        raise ValueError(f"unknown toppling mode {mode!r}")

    j = odometer[site] + 1
    odometer[site] = j
    ins = tape.instruction_at(site, j)

    if ins == Instruction.SLEEP:
        if c == 1:
            config.fall_asleep(site)
            return ToppleEvent(site, j, ins, fell_asleep=True)
        return ToppleEvent(site, j, ins)

    config.remove_one(site)
    if ins == Instruction.EJECT:
        return ToppleEvent(site, j, ins, exit="ejected")
    y = site - 1 if ins == Instruction.LEFT else site + 1
    if region is not None and y not in region:
        return ToppleEvent(site, j, ins, target=y, exit="left" if y < region.lo else "right")
    woke = config.add_active(y)
    return ToppleEvent(site, j, ins, target=y, woke=woke)
