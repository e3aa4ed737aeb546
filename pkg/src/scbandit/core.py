"""Shared types, random streams and regret metrics."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class BanditError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(BanditError, ValueError):
    exit_code = 2


class DataError(BanditError, ValueError):
    exit_code = 3


class SolverError(BanditError, ArithmeticError):
    exit_code = 4


class StateCorruptionError(SolverError):
    pass


class ProtocolError(BanditError, RuntimeError):
    exit_code = 5


class Provenance(str, enum.Enum):
    CONTEXTUAL = "contextual"
    NONCONTEXTUAL = "noncontextual"
    AGREEMENT = "agreement"


@dataclass(frozen=True)
class DecisionRecord:
    """One selectively-contextual decision.

    ``provenance`` is AGREEMENT exactly when both candidates coincide, in
    which case no comparison took place.
    """

    t: int
    contextual_arm: int
    noncontextual_arm: int
    pred_c: float
    pred_nc: float
    final_arm: int
    provenance: Provenance

    def __post_init__(self):
        agree = self.contextual_arm == self.noncontextual_arm
        if agree != (self.provenance is Provenance.AGREEMENT):
            raise ValueError("provenance must be AGREEMENT iff the candidate arms coincide")
        if self.final_arm not in (self.contextual_arm, self.noncontextual_arm):
            raise ValueError("final arm must be one of the two candidates")

    CSV_HEADER = ("t", "contextual_arm", "noncontextual_arm", "pred_c", "pred_nc",
                  "final_arm", "provenance")

    def to_row(self) -> list[str]:
        return [str(self.t), str(self.contextual_arm), str(self.noncontextual_arm),
                fmt_float(self.pred_c), fmt_float(self.pred_nc), str(self.final_arm),
                self.provenance.value]

    @classmethod
    def from_row(cls, row: Sequence[str]) -> "DecisionRecord":
        t, c, nc, pc, pnc, final, prov = row[:7]
        return cls(int(t), int(c), int(nc), float(pc), float(pnc), int(final), Provenance(prov))


def fmt_float(x: float) -> str:
    # 17 significant digits round-trip any double exactly
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Random streams
#
# Every stochastic operation draws from a numpy ``Generator`` backed by the
# PCG64 bit generator.  Seeds for independent streams are derived with
# SHA-256 over the parent seed and a tuple of string keys, so streams for
# run ``r`` never depend on how many other runs exist.
# ---------------------------------------------------------------------------

RngStream = np.random.Generator


def derive_seed(seed: int, *keys: object) -> int:
    """Derive a 64-bit child seed from ``seed`` and ``keys`` via SHA-256."""
    material = ":".join([str(int(seed))] + [str(k) for k in keys]).encode()
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "little")


def make_rng(seed: int, *keys: object) -> RngStream:
    if keys:
        seed = derive_seed(seed, *keys)
    return np.random.Generator(np.random.PCG64(int(seed) % 2**64))


def argmax_lowest(scores) -> int:
    """Index of the largest score; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=float)
    return int(np.flatnonzero(scores == scores.max())[0])


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _as_rewards(rewards: Iterable) -> np.ndarray:
    r = np.asarray(list(rewards) if not isinstance(rewards, np.ndarray) else rewards, dtype=float)
    if r.size == 0:
        raise ValueError("reward sequence is empty")
    if not np.all((r == 0) | (r == 1)):
        raise ValueError("rewards must be 0 or 1")
    return r


def normalized_cumulative_regret(rewards) -> float:
    """Fraction of steps with zero reward: ``(1/n) * sum(1 - r_t)``."""
    r = _as_rewards(rewards)
    return float(np.sum(1.0 - r) / r.size)


def regret_curve(rewards) -> np.ndarray:
    """Normalized cumulative regret after each prefix of ``rewards``."""
    r = _as_rewards(rewards)
    return np.cumsum(1.0 - r) / np.arange(1, r.size + 1)


def noncontextual_fraction(records: Sequence[DecisionRecord]) -> float:
    """Share of decisions where the noncontextual candidate overrode a differing contextual one."""
    if len(records) == 0:
        raise ValueError("no decision records")
    n = sum(1 for rec in records if rec.provenance is Provenance.NONCONTEXTUAL)
    return n / len(records)
