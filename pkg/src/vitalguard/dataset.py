"""Sensor-log ingestion: parsing, windowing, baselines, anomaly synthesis.

File layout follows the MHEALTH convention: whitespace-separated rows of
23 feature channels (chest acceleration, 2-lead ECG, ankle and arm
acceleration / gyro / magnetometer) plus one integer activity label,
sampled at 50 Hz.  Label 0 is the null class, 1..12 are activities.

The public anomaly ground truth needed by the alert metrics does not exist
in the raw recordings, so :func:`synthesize_anomalies` manufactures it
reproducibly: contiguous episodes of windows are picked with a configured
probability and their vital channels are amplitude-scaled and baseline-
shifted.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    EmptyRecording,
    MalformedRow,
    MissingBaseline,
    ParseError,
    WindowTooLong,
)

N_CHANNELS = 23
N_COLUMNS = N_CHANNELS + 1
SAMPLE_RATE_HZ = 50.0
STD_FLOOR = 1e-6

NORMAL = "normal"

# channel groups of the 23-column layout (0-based)
CHEST_ACC = (0, 1, 2)
ECG_LEADS = (3, 4)
ANKLE_ACC = (5, 6, 7)
ANKLE_GYRO = (8, 9, 10)
ANKLE_MAG = (11, 12, 13)
ARM_ACC = (14, 15, 16)
ARM_GYRO = (17, 18, 19)
ARM_MAG = (20, 21, 22)

ACTIVITY_NAMES = {
    0: "null",
    1: "standing",
    2: "sitting",
    3: "lying",
    4: "walking",
    5: "climbing_stairs",
    6: "waist_bends",
    7: "arm_elevation",
    8: "knees_bending",
    9: "cycling",
    10: "jogging",
    11: "running",
    12: "jumping",
}
N_ACTIVITIES = 13  # 12 activities + null


@dataclass
class RecordingSession:
    subject_id: int
    sample_rate_hz: float
    channels: np.ndarray  # (T, C)
    labels: np.ndarray    # (T,) int

    @property
    def n_samples(self):
        return self.channels.shape[0]


@dataclass
class Window:
    data: np.ndarray  # (C, L)
    activity: int
    episode: str = NORMAL  # NORMAL or "anomalous:<kind>"
    t_index: int = 0

    @property
    def anomalous(self):
        return self.episode != NORMAL


@dataclass
class AnomalyConfig:
    target_channels: tuple = ECG_LEADS
    episode_len: int = 4
    anomaly_fraction: float = 0.25
    amplitude_gain: float = 1.5
    baseline_shift: float = 2.5  # in channel-std units
    seed: int = 0
    kind: str = "gain-shift"

    def __post_init__(self):
        if not 0.0 < self.anomaly_fraction < 1.0:
            raise ValueError(f"anomaly_fraction must be in (0,1), got {self.anomaly_fraction}")
        # gain exactly 1 is tolerated so the identity transform is expressible
        if self.amplitude_gain < 1.0:
            raise ValueError(f"amplitude_gain must be > 1, got {self.amplitude_gain}")
        if self.episode_len < 1:
            raise ValueError("episode_len must be >= 1")


def load_subject(path, subject_id=0):
    """Parse one whitespace-separated recording into a RecordingSession."""
    rows = []
    labels = []
    n_lines = 0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            n_lines += 1
            fields = line.split()
            if not fields:
                continue
            if len(fields) != N_COLUMNS:
                raise MalformedRow(lineno, len(fields))
            vals = np.empty(N_COLUMNS)
            for col, tok in enumerate(fields):
                try:
                    vals[col] = float(tok)
                except ValueError:
                    raise ParseError(lineno, col, tok) from None
            label = int(vals[-1])
            if not 0 <= label <= 12:
                raise ParseError(lineno, N_CHANNELS, fields[-1])
            rows.append(vals[:N_CHANNELS])
            labels.append(label)
    if not rows:
        raise EmptyRecording(str(path))
    return RecordingSession(
        subject_id=subject_id,
        sample_rate_hz=SAMPLE_RATE_HZ,
        channels=np.asarray(rows),
        labels=np.asarray(labels, dtype=int),
    )


def save_session(session, path, fmt="%.4f"):
    """Write a session back in the same whitespace-separated layout."""
    with open(path, "w", encoding="utf-8") as f:
        for row, label in zip(session.channels, session.labels):
            f.write("\t".join(fmt % v for v in row))
            f.write(f"\t{label}\n")


def windowize(session, window_len, stride):
    """Slice a session into fixed-length windows with strict-majority labels.

    Windows whose label histogram has no strict majority are discarded.
    """
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be >= 1")
    T = session.n_samples
    if window_len > T:
        raise WindowTooLong(f"window_len {window_len} > {T} samples")
    windows = []
    for i, start in enumerate(range(0, T - window_len + 1, stride)):
        seg_labels = session.labels[start:start + window_len]
        counts = np.bincount(seg_labels, minlength=13)
        top = int(np.argmax(counts))
        if counts[top] * 2 <= window_len:
            continue  # no strict majority
        windows.append(Window(
            data=session.channels[start:start + window_len].T.copy(),
            activity=top,
            t_index=i,
        ))
    return windows


class ActivityBaselines:
    """Per-(activity, channel) mean/std computed on clean windows.

    Population statistics, std floored at STD_FLOOR.  Moments are kept per
    activity so pooled (activity-agnostic) baselines can be derived exactly,
    which is what the activity-ablated pipeline uses.
    """

    def __init__(self, stats):
        # stats: {activity: (count, mean[C], var[C])}
        self._stats = stats

    @property
    def activities(self):
        return sorted(self._stats)

    def get(self, activity):
        """Return (mean, std) arrays of shape (C,) for one activity."""
        if activity not in self._stats:
            raise MissingBaseline(activity)
        _, mean, var = self._stats[activity]
        return mean, np.maximum(np.sqrt(var), STD_FLOOR)

    def blend(self, profile):
        """Mixture (mean, std) under an activity probability profile.

        Moment-matched: the blended variance includes the between-activity
        spread, so a one-hot profile reproduces get() and a profile matching
        the activity frequencies recovers the pooled baseline.
        """
        p = np.asarray(profile, dtype=np.float64)
        mean = None
        second = None
        wsum = 0.0
        for act in self.activities:
            w = p[act]
            wsum += w
            _, mu, var = self._stats[act]
            term_m = w * mu
            term_s = w * (var + mu**2)
            mean = term_m if mean is None else mean + term_m
            second = term_s if second is None else second + term_s
        if mean is None or wsum <= 0.0:
            return self.pooled()
        mean = mean / wsum
        second = second / wsum
        var = np.maximum(second - mean**2, 0.0)
        return mean, np.maximum(np.sqrt(var), STD_FLOOR)

    def pooled(self):
        """Combine all activities into one activity-agnostic baseline."""
        total = 0
        mean = None
        m2 = None
        for count, mu, var in self._stats.values():
            if mean is None:
                total, mean, m2 = count, mu.copy(), var * count
                continue
            delta = mu - mean
            new_total = total + count
            mean = mean + delta * (count / new_total)
            m2 = m2 + var * count + delta**2 * (total * count / new_total)
            total = new_total
        return mean, np.maximum(np.sqrt(m2 / total), STD_FLOOR)

    def average(self):
        """Count-weighted average of the per-activity baselines.

        Marginalizes the activity identity out but keeps the typical
        within-activity variability, so it is narrower than pooled(),
        whose variance also counts the between-activity mean spread.
        This is the calibration a monitor without activity context would
        use: "normal" spread around a typical resting level.
        """
        total = 0
        mean = None
        m2 = None
        for count, mu, var in self._stats.values():
            if mean is None:
                total, mean, m2 = count, mu * count, var * count
                continue
            total += count
            mean = mean + mu * count
            m2 = m2 + var * count
        if mean is None:
            raise MissingBaseline("no activity baselines fitted")
        return mean / total, np.maximum(np.sqrt(m2 / total), STD_FLOOR)

    def to_payload(self):
        return {
            str(act): {
                "count": int(c),
                "mean": mean.tolist(),
                "var": var.tolist(),
            }
            for act, (c, mean, var) in self._stats.items()
        }

    @classmethod
    def from_payload(cls, payload):
        return cls({
            int(act): (rec["count"], np.asarray(rec["mean"]), np.asarray(rec["var"]))
            for act, rec in payload.items()
        })


def compute_baselines(windows):
    """Population mean/std per (activity, channel) over clean samples."""
    by_activity = {}
    for w in windows:
        by_activity.setdefault(w.activity, []).append(w.data)
    stats = {}
    for act, mats in by_activity.items():
        samples = np.concatenate(mats, axis=1)  # (C, total)
        stats[act] = (
            samples.shape[1],
            samples.mean(axis=1),
            samples.var(axis=1),
        )
    return ActivityBaselines(stats)


def channel_means(session):
    """Per-channel mean of the original clean data (the noise scale anchor)."""
    return session.channels.mean(axis=0)


def synthesize_anomalies(windows, cfg):
    """Tag contiguous episode runs and perturb vital channels inside them.

    Windows are chunked into consecutive runs of ``cfg.episode_len``; each
    run is anomalous with probability ``cfg.anomaly_fraction``.  Inside an
    anomalous run every target channel has its oscillation amplified and
    its level raised:
    x <- mean + amplitude_gain * (x - mean) + baseline_shift * std(channel),
    mean and std taken per window so the transform is local and label-free.
    Deterministic given cfg.seed; normal windows are returned untouched
    (same arrays).
    """
    rng = np.random.default_rng(cfg.seed)
    out = []
    targets = list(cfg.target_channels)
    for start in range(0, len(windows), cfg.episode_len):
        run = windows[start:start + cfg.episode_len]
        anomalous = rng.random() < cfg.anomaly_fraction
        if not anomalous:
            out.extend(run)
            continue
        for w in run:
            data = w.data.copy()
            for c in targets:
                std = max(float(np.std(w.data[c])), STD_FLOOR)
                mean = float(np.mean(w.data[c]))
                data[c] = (mean + cfg.amplitude_gain * (data[c] - mean)
                           + cfg.baseline_shift * std)
            out.append(replace(w, data=data, episode=f"anomalous:{cfg.kind}"))
    return out


# ---------------------------------------------------------------------------
# synthetic recordings (the repository ships no raw dataset)
# ---------------------------------------------------------------------------

# per-activity movement intensity in [0, 1]
_INTENSITY = np.array([
    0.0,   # null
    0.10,  # standing
    0.05,  # sitting
    0.03,  # lying
    0.50,  # walking
    0.60,  # climbing stairs
    0.45,  # waist bends
    0.40,  # arm elevation
    0.50,  # knees bending
    0.55,  # cycling
    0.80,  # jogging
    1.00,  # running
    0.90,  # jumping
])

# per-channel signal profile: (offset, activity offset gain, base amplitude,
# jitter sd).  ECG leads carry a DC offset a few times their variance so
# mean-relative measurement noise is material on the vital channels.
_CH_OFFSET = np.array([
    0.2, 9.6, 1.1,            # chest acc
    1.0, 0.8,                 # ECG leads
    0.3, -9.5, 1.4,           # ankle acc
    0.1, 0.2, -0.1,           # ankle gyro
    20.0, -14.0, 31.0,        # ankle mag
    1.2, 7.8, -3.2,           # arm acc
    -0.2, 0.1, 0.3,           # arm gyro
    -25.0, 11.0, 18.0,        # arm mag
])
_CH_ACT_SHIFT = np.array([
    0.8, 1.5, 0.6,
    0.30, 0.25,
    1.2, 2.0, 0.9,
    0.9, 0.7, 0.8,
    1.5, 1.2, 1.0,
    1.0, 1.6, 0.8,
    0.6, 0.9, 0.7,
    1.2, 0.8, 1.1,
])
_CH_AMP = np.array([
    0.8, 1.6, 0.7,
    0.50, 0.40,
    1.1, 2.2, 0.9,
    1.4, 1.1, 1.2,
    0.9, 0.8, 0.7,
    1.0, 1.8, 0.8,
    1.0, 1.3, 0.9,
    0.8, 0.6, 0.7,
])
_CH_JITTER = np.array([
    0.05, 0.08, 0.05,
    0.04, 0.04,
    0.07, 0.10, 0.06,
    0.08, 0.07, 0.07,
    0.06, 0.06, 0.05,
    0.06, 0.09, 0.06,
    0.06, 0.07, 0.06,
    0.05, 0.05, 0.05,
])


def _activity_bout(activity, n, t0, rng):
    """One contiguous bout of samples for a single activity, shape (n, C)."""
    inten = _INTENSITY[activity]
    t = (t0 + np.arange(n)) / SAMPLE_RATE_HZ
    out = np.empty((n, N_CHANNELS))
    for c in range(N_CHANNELS):
        amp = _CH_AMP[c] * (0.25 + inten)
        if c in ECG_LEADS:
            # spiky pseudo-cardiac waveform, rate rises with intensity
            rate = 1.1 + 1.6 * inten + 0.05 * c
            phase = np.sin(2 * np.pi * rate * t + 0.7 * c)
            wave = amp * (np.abs(phase) ** 3) * np.sign(phase)
        else:
            freq = 0.4 + 2.2 * inten + 0.13 * c
            wave = amp * np.sin(2 * np.pi * freq * t + 0.9 * c)
        base = _CH_OFFSET[c] + _CH_ACT_SHIFT[c] * inten
        out[:, c] = base + wave + rng.normal(0.0, _CH_JITTER[c], size=n)
    return out


def generate_session(subject_id=1, seed=0, bout_len=640, cycles=2, include_null=True):
    """Deterministic synthetic recording in the 23-channel layout.

    Cycles through the 12 activities in contiguous bouts (plus a short null
    lead-in), with per-activity offsets, periodic waveforms and small
    jitter.  Stands in for the real recordings, which are not shipped.
    """
    rng = np.random.default_rng(seed + 7919 * subject_id)
    chunks = []
    labels = []
    t0 = 0
    if include_null:
        n = bout_len // 4
        chunks.append(_activity_bout(0, n, t0, rng))
        labels.append(np.zeros(n, dtype=int))
        t0 += n
    for _ in range(cycles):
        for act in range(1, 13):
            chunks.append(_activity_bout(act, bout_len, t0, rng))
            labels.append(np.full(bout_len, act, dtype=int))
            t0 += bout_len
    return RecordingSession(
        subject_id=subject_id,
        sample_rate_hz=SAMPLE_RATE_HZ,
        channels=np.concatenate(chunks, axis=0),
        labels=np.concatenate(labels),
    )


def write_synthetic_recording(path, subject_id=1, seed=0, bout_len=640, cycles=2):
    session = generate_session(subject_id=subject_id, seed=seed,
                               bout_len=bout_len, cycles=cycles)
    save_session(session, path)
    return session
