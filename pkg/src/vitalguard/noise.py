"""Measurement-noise injection for the two experimental scenarios.

S1 adds per-channel uniform noise on [-delta*mean_c/2, +delta*mean_c/2];
S2 adds zero-mean Gaussian noise.  The Gaussian scale is mean-relative
(sd = delta*|mean_c| per channel) to parallel S1; both scales anchor on the
per-channel mean of the original clean data.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidSpec

S1_UNIFORM = "S1_Uniform"
S2_GAUSSIAN = "S2_Gaussian"
SCENARIOS = (S1_UNIFORM, S2_GAUSSIAN)


@dataclass
class NoiseSpec:
    scenario: str
    delta: float
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InvalidSpec(f"unknown scenario {self.scenario!r}")
        if self.delta < 0:
            raise InvalidSpec(f"delta must be >= 0, got {self.delta}")


def noise_sd(spec, channel_means):
    """Per-channel standard deviation of the injected noise."""
    half = np.abs(np.asarray(channel_means)) * spec.delta
    if spec.scenario == S1_UNIFORM:
        return half / np.sqrt(12.0)  # width delta*|mean|, uniform variance w^2/12
    return half  # S2: sd = delta*|mean|


def sample_noise(spec, channel_means, shape, rng):
    """Draw a noise block with the channel axis second from last."""
    means = np.abs(np.asarray(channel_means))[:, None]  # broadcasts over (.., C, L)
    if spec.scenario == S1_UNIFORM:
        half_width = spec.delta * means / 2.0
        return rng.uniform(-1.0, 1.0, size=shape) * half_width
    return rng.normal(0.0, 1.0, size=shape) * (spec.delta * means)


def inject(window, spec, channel_means, rng=None):
    """Return a copy of the window with scenario noise added to every channel.

    Labels and episode tags are untouched.  With an explicit rng the caller
    controls streaming determinism (e.g. one substream per slot); otherwise
    a generator seeded from (spec.seed, window.t_index) is used so repeated
    calls are reproducible window by window.
    """
    if spec.delta == 0:
        return window
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, window.t_index)))
    noisy = window.data + sample_noise(spec, channel_means, window.data.shape, rng)
    return replace(window, data=noisy)
