"""Seeded synthetic tracklet-identification scenarios.

Random numbers come from :class:`SplitMix64`, the 64-bit mixing generator
used to seed the xorshift/xoshiro family:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)                         (all arithmetic mod 2^64)

A uniform is ``(next() >> 11) * 2^-53`` in [0, 1); a standard normal is one
Box-Muller draw ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` consuming two
uniforms.  Draw order is part of the format and documented in
:func:`generate`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .core import ProblemInstance, UggError, validate_instance

_MASK64 = (1 << 64) - 1


class InvalidParams(UggError, ValueError):
    code = "INVALID_PARAMS"


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        u1, u2 = self.uniform(), self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def below(self, n: int) -> int:
        return min(int(self.uniform() * n), n - 1)


class Quality(str, Enum):
    HIGH = "high"
    LOW = "low"


@dataclass(frozen=True)
class ScenarioParams:
    """Generator knobs. Defaults form the desk profile used by the ablation
    suite (C=10, N=40)."""

    num_galleries: int = 10
    num_tracklets: int = 40
    seed: int = 0
    low_quality_fraction: float = 0.5
    face_signal: float = 2.0
    face_noise_sigma: float = 0.5
    body_same_identity_mean: float = 0.6
    body_diff_identity_mean: float = 0.1
    body_noise_sigma: float = 0.05
    confound_rate: float = 0.15
    cooccurrence_rate: float = 0.2

    def __post_init__(self):
        if self.num_galleries < 2:
            raise InvalidParams("need at least 2 galleries")
        if self.num_tracklets < 1:
            raise InvalidParams("need at least 1 tracklet")
        if not 0 <= self.seed <= _MASK64:
            raise InvalidParams("seed must be an unsigned 64-bit integer")
        for name in ("low_quality_fraction", "confound_rate", "cooccurrence_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidParams(f"{name} must lie in [0, 1], got {v!r}")
        for name in ("face_signal", "face_noise_sigma", "body_noise_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidParams(f"{name} must be finite and >= 0, got {v!r}")
        for name in ("body_same_identity_mean", "body_diff_identity_mean"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParams(f"{name} must be finite")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioParams:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidParams(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Scenario:
    params: ScenarioParams
    instance: ProblemInstance
    true_identity: np.ndarray     # (N,) 0-based gallery index
    quality: tuple                # Quality per tracklet

    def relevance(self) -> list:
        """Per gallery, the set of tracklets that belong to it."""
        return [set(np.flatnonzero(self.true_identity == l).tolist())
                for l in range(self.instance.num_galleries)]


def _clamp(x: float) -> float:
    return -1.0 if x < -1.0 else 1.0 if x > 1.0 else x


def generate(params: ScenarioParams) -> Scenario:
    """Draw a scenario.  Draw order:

    1. identity of each tracklet ``i = 0..N-1``;
    2. quality of each tracklet (low when ``u < low_quality_fraction``);
    3. ``s_gt[l, i]`` row-major, one normal each;
    4. for every pair ``i < j`` in row-major order: a confound uniform, a
       co-occurrence uniform and a body-noise normal, drawn whether or not
       they end up being used.
    """
    rng = SplitMix64(params.seed)
    c, n = params.num_galleries, params.num_tracklets

    identity = np.array([rng.below(c) for _ in range(n)], dtype=np.int64)
    low = [rng.uniform() < params.low_quality_fraction for _ in range(n)]

    s_gt = np.empty((c, n))
    for l in range(c):
        for i in range(n):
            signal = params.face_signal if (identity[i] == l and not low[i]) else 0.0
            s_gt[l, i] = _clamp(signal + params.face_noise_sigma * rng.normal())

    s_tt = np.eye(n)
    cl = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        for j in range(i + 1, n):
            u_conf, u_cooc, z = rng.uniform(), rng.uniform(), rng.normal()
            same = identity[i] == identity[j]
            confounded = (not same) and u_conf < params.confound_rate
            mean = params.body_same_identity_mean if (same or confounded) \
                else params.body_diff_identity_mean
            s_tt[i, j] = s_tt[j, i] = _clamp(mean + params.body_noise_sigma * z)
            if not same and u_cooc < params.cooccurrence_rate:
                cl[i, j] = cl[j, i] = 1

    instance = validate_instance(ProblemInstance(s_gt, s_tt, cl))
    identity.setflags(write=False)
    quality = tuple(Quality.LOW if lo else Quality.HIGH for lo in low)
    return Scenario(params, instance, identity, quality)


def desk_scenarios(num_seeds: int = 20, first_seed: int = 0, **overrides) -> list:
    return [generate(ScenarioParams(seed=first_seed + s, **overrides)) for s in range(num_seeds)]
