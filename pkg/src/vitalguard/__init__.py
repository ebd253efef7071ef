"""Wearable vital-sign alerting: denoising, activity-aware agents, feedback.

A desk-scale pipeline that turns windows of multichannel body-sensor data
into alert decisions: configurable sensor-noise injection, a diffusion
denoiser (with a classic Wiener baseline), nearest-centroid activity
recognition, a DDPG alerting agent whose thresholds adapt to natural-
language user feedback, a privacy-preserving hub/edge wire protocol, and a
reproducible experiment harness.
"""

__version__ = "0.1.0"

from .errors import VitalguardError

__all__ = ["VitalguardError", "__version__"]
