"""Shared fixtures: one small synthetic corpus and cheap trained models.

Session-scoped so the expensive pieces (diffusion training, recognizer
fitting) happen once per test run.
"""
import numpy as np
import pytest

import vitalguard.dataset as ds
from vitalguard.activity import ActivityRecognizer
from vitalguard.denoise import DiffusionDenoiser, WienerDenoiser


WINDOW_LEN = 64
STRIDE = 32


@pytest.fixture(scope="session")
def session():
    return ds.generate_session(subject_id=1, seed=0, bout_len=512, cycles=2)


@pytest.fixture(scope="session")
def windows(session):
    return ds.windowize(session, WINDOW_LEN, STRIDE)


@pytest.fixture(scope="session")
def baselines(windows):
    return ds.compute_baselines(windows)


@pytest.fixture(scope="session")
def channel_means(session):
    return ds.channel_means(session)


@pytest.fixture(scope="session")
def recognizer(windows):
    return ActivityRecognizer().fit(windows)


@pytest.fixture(scope="session")
def small_denoiser(windows):
    X = np.stack([w.data for w in windows])
    return DiffusionDenoiser(epochs=8, hidden=48, seed=0, reverse_stride=4,
                             amp_jitter=1.2).fit(X)


@pytest.fixture(scope="session")
def wiener():
    return WienerDenoiser(local_window=7)
