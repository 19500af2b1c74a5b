"""Deadline reliability under a Gaussian offloading-time channel."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SEED = 20210


@dataclass(frozen=True)
class ChannelModel:
    """IoT-device-to-primary link.

    ``mean_rate`` in bits/s, ``delta`` (std of offloading time) and
    ``deadline`` in seconds, ``task_bits`` per inference input. The mean
    offloading time is ``task_bits / mean_rate``.
    """

    mean_rate: float
    delta: float
    task_bits: float
    deadline: float
    fps: float = 30.0

    def __post_init__(self):
        if not self.mean_rate > 0:
            raise ValueError("mean rate must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if not self.task_bits > 0:
            raise ValueError("task size must be positive")

    @property
    def mu(self) -> float:
        return self.task_bits / self.mean_rate

    @classmethod
    def from_dict(cls, doc: dict, task_bits: float | None = None) -> "ChannelModel":
        if "task_kbytes" in doc:
            task_bits = float(doc["task_kbytes"]) * 1e3 * 8
        if task_bits is None:
            raise ValueError("channel needs task_kbytes or a model-derived task size")
        fps = float(doc.get("fps", 30.0))
        deadline = float(doc["deadline_ms"]) / 1e3 if "deadline_ms" in doc else 1 / fps
        return cls(float(doc["mean_rate_mbps"]) * 1e6, float(doc.get("delta_ms", 0)) / 1e3,
                   task_bits, deadline, fps)


def load_channel(path: str | Path, task_bits: float | None = None) -> tuple[ChannelModel, dict]:
    """Channel plus the raw document (which may carry a ``grid`` of [rate_mbps, delta_ms])."""
    with open(path) as fh:
        doc = json.load(fh)
    return ChannelModel.from_dict(doc, task_bits), doc


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2))


def reliability_analytic(channel: ChannelModel, t_inf: float) -> float:
    """P(T_off + t_inf <= deadline) with T_off ~ N(mu, delta^2), untruncated."""
    slack = channel.deadline - t_inf - channel.mu
    if channel.delta == 0:
        return 1.0 if slack >= 0 else 0.0
    return normal_cdf(slack / channel.delta)


def reliability_monte_carlo(channel: ChannelModel, t_inf: float, samples: int = 1_000_000,
                            seed: int = DEFAULT_SEED, shards: int = 1) -> float:
    """Sampled reliability; offloading times below zero are clamped to zero.

    Each shard draws from its own child of ``SeedSequence(seed)``, so the
    result depends only on ``(seed, samples, shards)``.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    if shards < 1:
        raise ValueError("need at least one shard")
    sizes = [samples // shards + (i < samples % shards) for i in range(shards)]
    budget = channel.deadline - t_inf
    hits = 0
    for child, n in zip(np.random.SeedSequence(seed).spawn(shards), sizes):
        rng = np.random.default_rng(child)
        t_off = np.maximum(rng.normal(channel.mu, channel.delta, n), 0.0)
        hits += int(np.count_nonzero(t_off <= budget))
    return hits / samples


def min_offload_rate(task_bits: float, fps: float) -> float:
    """Lowest mean rate (bits/s) that sustains ``fps`` inputs per second."""
    if not fps > 0:
        raise ValueError("fps must be positive")
    return task_bits * fps


def rate_fluctuation(channel: ChannelModel) -> float:
    """Rate deficit (bits/s) when offloading takes three standard deviations longer."""
    slow = channel.mu + 3 * channel.delta
    if not slow > 0:
        raise ValueError("mu + 3 delta must be positive")
    return channel.mean_rate - channel.task_bits / slow


@dataclass(frozen=True)
class ReliabilityReport:
    reliability: float
    method: str
    samples: int
    phi: float


def evaluate(channel: ChannelModel, t_inf: float, samples: int = 0,
             seed: int = DEFAULT_SEED) -> ReliabilityReport:
    """Analytic report when ``samples`` is 0, Monte Carlo otherwise."""
    if samples:
        return ReliabilityReport(reliability_monte_carlo(channel, t_inf, samples, seed),
                                 "monte-carlo", samples, rate_fluctuation(channel))
    return ReliabilityReport(reliability_analytic(channel, t_inf), "analytic", 0,
                             rate_fluctuation(channel))
