"""Experiment runner: noise sweeps, learning curves, training entry points.

Everything is driven by one JSON config and a master seed.  Per seed, the
harness builds (or loads) the trained models, then for each grid cell runs
an online adaptation phase (training + simulated feedback) followed by a
frozen measurement phase whose episode-level metrics land in the CSV.  A
manifest (config, seeds, git hash, outputs) is written beside every run so
any CSV can be reproduced byte for byte.
"""
from __future__ import annotations

import csv
import json
import os
import subprocess
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dataset as ds
from . import noise as nz
from .activity import ActivityRecognizer
from .agent import AgentHyper, DDPGAgent
from .dataset import AnomalyConfig
from .denoise import DiffusionDenoiser, WienerDenoiser
from .errors import ModelNotReady
from .gate import default_registry, rule_gate
from .pipeline import (
    METHOD_FULL,
    METHOD_NO_ACTIVITY,
    METHOD_NO_FEEDBACK,
    METHOD_UNFILTERED,
    METHOD_WIENER,
    METHODS,
    PipelineConfig,
    SlotPipeline,
)
from .text import DEFAULT_EMBED_DIM, SensitiveRecord, embed, redact

FIG4_HEADER = ("scenario", "method", "delta", "seed", "p_fa", "p_ma", "total")
FIG5_HEADER = ("method", "block", "fa_rate", "ma_rate", "total")


@dataclass
class ExperimentConfig:
    # data
    dataset_paths: list = field(default_factory=list)  # empty -> synthetic
    synthetic_bout_len: int = 512
    synthetic_cycles: int = 2
    window_len: int = 64
    stride: int = 32
    train_stride: int = 16
    # anomalies
    anomaly_channels: tuple = ds.ECG_LEADS
    episode_len: int = 4
    anomaly_fraction: float = 0.25
    amplitude_gain: float = 1.6
    baseline_shift: float = 0.6
    # grid
    scenarios: tuple = nz.SCENARIOS
    deltas: tuple = (0.2, 0.4, 0.6, 0.8, 1.0)
    methods: tuple = METHODS
    seeds: tuple = (0, 1, 2)
    # stream sizes
    adapt_slots: int = 900
    eval_slots: int = 600
    participation: float = 0.7
    eta: float = 0.15
    k_batches: int = 16
    # fig5 curves
    block_size: int = 50
    n_blocks: int = 70
    fig5_scenario: str = nz.S1_UNIFORM
    fig5_delta: float = 0.6
    # models
    denoiser_epochs: int = 60
    denoiser_hidden: int = 128
    denoiser_amp_jitter: float = 1.2
    reverse_stride: int = 2
    wiener_window: int = 7
    agent_hyper: dict = field(default_factory=dict)
    embed_dim: int = DEFAULT_EMBED_DIM
    # user profile
    user_description: str = "I am programmer"
    condition_codes: tuple = ("disc_degeneration", "cervical_hyperostogeny")
    symptom_tags: tuple = ("neck_pain", "dizziness")

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def anomaly_config(self, seed):
        return AnomalyConfig(
            target_channels=tuple(self.anomaly_channels),
            episode_len=self.episode_len,
            anomaly_fraction=self.anomaly_fraction,
            amplitude_gain=self.amplitude_gain,
            baseline_shift=self.baseline_shift,
            seed=seed,
        )


# --- data preparation -------------------------------------------------------

@dataclass
class TrainedModels:
    denoiser: DiffusionDenoiser
    wiener: WienerDenoiser
    recognizer: ActivityRecognizer
    baselines: ds.ActivityBaselines
    channel_means: np.ndarray
    g: np.ndarray


def _train_session(cfg, seed):
    if cfg.dataset_paths:
        return ds.load_subject(cfg.dataset_paths[0], subject_id=1)
    return ds.generate_session(subject_id=1, seed=seed,
                               bout_len=cfg.synthetic_bout_len,
                               cycles=cfg.synthetic_cycles)


def _stream_session(cfg, seed, n_slots, stream_tag):
    """A session long enough to yield n_slots windows at the run stride."""
    if cfg.dataset_paths:
        idx = 1 + stream_tag % max(len(cfg.dataset_paths) - 1, 1)
        return ds.load_subject(cfg.dataset_paths[idx % len(cfg.dataset_paths)],
                               subject_id=idx)
    bout = 256
    # strict-majority labeling drops windows that straddle bout boundaries,
    # so count only the windows fully inside each bout
    per_cycle = 12 * max((bout - cfg.window_len) // cfg.stride, 1)
    cycles = int(np.ceil((n_slots + 8) / per_cycle)) + 1
    return ds.generate_session(subject_id=2 + stream_tag,
                               seed=seed + 1000 * (1 + stream_tag),
                               bout_len=bout, cycles=cycles,
                               include_null=False)


def profile_embedding(cfg):
    record = SensitiveRecord(name="", gender="", age="",
                             condition_codes=list(cfg.condition_codes),
                             symptom_tags=list(cfg.symptom_tags))
    return embed(redact(record).text, cfg.embed_dim)


def train_models(cfg, seed):
    session = _train_session(cfg, seed)
    train_windows = ds.windowize(session, cfg.window_len, cfg.train_stride)
    X = np.stack([w.data for w in train_windows])
    denoiser = DiffusionDenoiser(
        epochs=cfg.denoiser_epochs, hidden=cfg.denoiser_hidden,
        seed=seed, reverse_stride=cfg.reverse_stride,
        amp_jitter=cfg.denoiser_amp_jitter).fit(X)
    recognizer = ActivityRecognizer().fit(train_windows)
    run_windows = ds.windowize(session, cfg.window_len, cfg.stride)
    baselines = ds.compute_baselines(run_windows)
    return TrainedModels(
        denoiser=denoiser,
        wiener=WienerDenoiser(local_window=cfg.wiener_window),
        recognizer=recognizer,
        baselines=baselines,
        channel_means=ds.channel_means(session),
        g=profile_embedding(cfg),
    )


MODEL_FILES = ("denoiser.json", "recognizer.json", "baselines.json")


def save_models(models, model_dir):
    os.makedirs(model_dir, exist_ok=True)
    models.denoiser.save(os.path.join(model_dir, "denoiser.json"))
    models.recognizer.save(os.path.join(model_dir, "recognizer.json"))
    with open(os.path.join(model_dir, "baselines.json"), "w", encoding="utf-8") as f:
        json.dump({
            "baselines": models.baselines.to_payload(),
            "channel_means": models.channel_means.tolist(),
        }, f)


def load_models(cfg, model_dir):
    for name in MODEL_FILES:
        if not os.path.exists(os.path.join(model_dir, name)):
            raise ModelNotReady(
                f"{os.path.join(model_dir, name)} missing; run the training "
                "subcommands or pass --train")
    denoiser = DiffusionDenoiser.load(os.path.join(model_dir, "denoiser.json"))
    recognizer = ActivityRecognizer.load(os.path.join(model_dir, "recognizer.json"))
    with open(os.path.join(model_dir, "baselines.json"), "r", encoding="utf-8") as f:
        doc = json.load(f)
    return TrainedModels(
        denoiser=denoiser,
        wiener=WienerDenoiser(local_window=cfg.wiener_window),
        recognizer=recognizer,
        baselines=ds.ActivityBaselines.from_payload(doc["baselines"]),
        channel_means=np.asarray(doc["channel_means"]),
        g=profile_embedding(cfg),
    )


def models_for_seed(cfg, workdir, seed, train_missing=True):
    model_dir = os.path.join(workdir, "models", f"seed-{seed}")
    try:
        return load_models(cfg, model_dir)
    except ModelNotReady:
        if not train_missing:
            raise
        models = train_models(cfg, seed)
        save_models(models, model_dir)
        return models


# --- streams ----------------------------------------------------------------

@dataclass
class Stream:
    """One ordered slot stream with clean, noisy and denoised variants."""
    clean: np.ndarray      # (n, C, L)
    noisy: np.ndarray
    diffusion: np.ndarray
    wiener: np.ndarray
    anomalous: np.ndarray  # (n,) bool
    episodes: np.ndarray   # (n,) int

    def variant(self, method):
        if method == METHOD_UNFILTERED:
            return self.noisy
        if method == METHOD_WIENER:
            return self.wiener
        return self.diffusion


def build_stream(cfg, models, seed, scenario, delta, n_slots, stream_tag):
    session = _stream_session(cfg, seed, n_slots, stream_tag)
    windows = ds.windowize(session, cfg.window_len, cfg.stride)[:n_slots]
    anomaly_cfg = cfg.anomaly_config(seed + 31 * stream_tag)
    tagged = ds.synthesize_anomalies(windows, anomaly_cfg)
    clean = np.stack([w.data for w in tagged])
    anomalous = np.array([w.anomalous for w in tagged])
    # each slot is scored as its own ground-truth run; anomaly persistence
    # (episode_len consecutive windows) still shapes the stream itself
    episodes = np.arange(len(tagged))
    spec = nz.NoiseSpec(scenario, delta, seed)
    rng = np.random.default_rng(
        np.random.SeedSequence((seed, stream_tag, cfg.scenarios.index(scenario)
                                if scenario in tuple(cfg.scenarios) else 0,
                                int(round(delta * 1000)))))
    if delta > 0:
        noisy = clean + nz.sample_noise(spec, models.channel_means,
                                        clean.shape, rng)
    else:
        noisy = clean.copy()
    sd = nz.noise_sd(spec, models.channel_means)
    if delta > 0:
        diffusion = models.denoiser.transform(noisy, noise_sd=sd)
        wiener = models.wiener.transform(noisy)
    else:
        diffusion = noisy.copy()
        wiener = models.wiener.transform(noisy)
    return Stream(clean=clean, noisy=noisy, diffusion=diffusion,
                  wiener=wiener, anomalous=anomalous, episodes=episodes)


def make_agent(cfg, models, registry, seed):
    expert_id = rule_gate(cfg.user_description, registry)
    channels = registry.get(expert_id).monitored_channels
    state_dim = cfg.embed_dim + 2 * len(channels) + ds.N_ACTIVITIES
    hyper = AgentHyper(**cfg.agent_hyper) if cfg.agent_hyper else AgentHyper()
    return DDPGAgent(state_dim, len(channels), hyper=hyper, seed=seed,
                     monitored_channels=channels, embed_dim=cfg.embed_dim), expert_id


def run_phase(pipe, stream, data):
    for i in range(data.shape[0]):
        pipe.process(data[i], slot=i, episode=int(stream.episodes[i]),
                     anomalous=bool(stream.anomalous[i]))
    return pipe.finish()


def run_cell(cfg, models, registry, seed, scenario, delta, method,
             adapt=None, measure=None):
    """Adaptation phase then frozen measurement phase for one grid cell.

    Streams depend only on (seed, scenario, delta), so callers sweeping
    methods can build them once and pass them in.
    """
    agent, _ = make_agent(cfg, models, registry, seed)
    if adapt is None:
        adapt = build_stream(cfg, models, seed, scenario, delta,
                             cfg.adapt_slots, 0)
    if measure is None:
        measure = build_stream(cfg, models, seed, scenario, delta,
                               cfg.eval_slots, 1)
    adapt_cfg = PipelineConfig(
        method=method, participation=cfg.participation, eta=cfg.eta,
        k_batches=cfg.k_batches, train=True, explore=True, seed=seed)
    pipe = SlotPipeline(agent, models.recognizer, models.baselines, models.g,
                        adapt_cfg)
    run_phase(pipe, adapt, adapt.variant(method))
    eval_cfg = PipelineConfig(
        method=method, participation=0.0, train=False, explore=False, seed=seed)
    pipe = SlotPipeline(agent, models.recognizer, models.baselines, models.g,
                        eval_cfg)
    return run_phase(pipe, measure, measure.variant(method))


# --- runners ----------------------------------------------------------------

def git_hash():
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(out_dir, name, cfg, outputs):
    manifest = {
        "config": cfg.to_dict(),
        "seeds": list(cfg.seeds),
        "git_hash": git_hash(),
        "outputs": sorted(outputs),
    }
    path = os.path.join(out_dir, f"{name}.manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def run_fig4(cfg, workdir, train_missing=True, progress=None):
    """Error-vs-noise sweep; returns rows and writes fig4.csv + manifest."""
    rows = []
    registry = default_registry()
    for seed in cfg.seeds:
        models = models_for_seed(cfg, workdir, seed, train_missing)
        for scenario in cfg.scenarios:
            for delta in cfg.deltas:
                adapt = build_stream(cfg, models, seed, scenario, delta,
                                     cfg.adapt_slots, 0)
                measure = build_stream(cfg, models, seed, scenario, delta,
                                       cfg.eval_slots, 1)
                for method in cfg.methods:
                    m = run_cell(cfg, models, registry, seed, scenario,
                                 delta, method, adapt=adapt, measure=measure)
                    rows.append((scenario, method, delta, seed,
                                 m.p_fa, m.p_ma, m.p_fa + m.p_ma))
                    if progress:
                        progress(f"{scenario} {method} delta={delta} seed={seed} "
                                 f"fa={m.p_fa:.3f} ma={m.p_ma:.3f}")
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    out_dir = os.path.join(workdir, "results")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "fig4.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(FIG4_HEADER)
        for r in rows:
            writer.writerow([r[0], r[1], repr(float(r[2])), r[3],
                             repr(float(r[4])), repr(float(r[5])),
                             repr(float(r[6]))])
    write_manifest(out_dir, "fig4", cfg, [os.path.basename(csv_path)])
    return rows, csv_path


def run_fig5(cfg, workdir, train_missing=True, progress=None):
    """Per-block FA/MA learning curves for every configured method."""
    seed = cfg.seeds[0]
    models = models_for_seed(cfg, workdir, seed, train_missing)
    registry = default_registry()
    n_slots = cfg.block_size * cfg.n_blocks
    rows = []
    for method in cfg.methods:
        agent, _ = make_agent(cfg, models, registry, seed)
        stream = build_stream(cfg, models, seed, cfg.fig5_scenario,
                              cfg.fig5_delta, n_slots, 2)
        pipe_cfg = PipelineConfig(
            method=method, participation=cfg.participation, eta=cfg.eta,
            k_batches=cfg.k_batches, train=True, explore=True, seed=seed)
        pipe = SlotPipeline(agent, models.recognizer, models.baselines,
                            models.g, pipe_cfg)
        data = stream.variant(method)
        for i in range(min(n_slots, data.shape[0])):
            pipe.process(data[i], slot=i, episode=int(stream.episodes[i]),
                         anomalous=bool(stream.anomalous[i]))
        pipe.finish()
        for b, (fa, ma) in enumerate(block_rates(pipe.metrics.rows, cfg.block_size)):
            rows.append((method, b, fa, ma, fa + ma))
        if progress:
            progress(f"fig5 {method}: {len(rows)} rows so far")
    rows.sort(key=lambda r: (r[0], r[1]))
    out_dir = os.path.join(workdir, "results")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "fig5.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(FIG5_HEADER)
        for method, b, fa, ma, total in rows:
            writer.writerow([method, b, repr(float(fa)), repr(float(ma)),
                             repr(float(total))])
    write_manifest(out_dir, "fig5", cfg, [os.path.basename(csv_path)])
    return rows, csv_path


def block_rates(log_rows, block_size):
    """Per-block (false-alert rate, missed-alert rate) over slot outcomes."""
    out = []
    for start in range(0, len(log_rows), block_size):
        block = log_rows[start:start + block_size]
        if len(block) < block_size:
            break
        normal = [r for r in block if not r.anomalous]
        anom = [r for r in block if r.anomalous]
        fa = sum(1 for r in normal if r.fired) / len(normal) if normal else 0.0
        ma = sum(1 for r in anom if not r.fired) / len(anom) if anom else 0.0
        out.append((fa, ma))
    return out
