"""Command-line entry point.

Subcommands: ingest, train-denoiser, train-recognizer, train-agent, fig4,
fig5, serve-edge, run-hub, repl.  All take --config (JSON, see
ExperimentConfig) plus optional --workdir and --seed; runs write their
outputs and a manifest under <workdir>/results or <workdir>/models.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import noise as nz
from .errors import UnparseableFeedback, VitalguardError
from .feedback import parse_feedback
from .gate import default_registry
from .harness import (
    ExperimentConfig,
    build_stream,
    make_agent,
    models_for_seed,
    run_fig4,
    run_fig5,
    run_phase,
    write_manifest,
)
from .hub_edge import EdgeConfig, EdgeServer, hub_run
from .pipeline import PipelineConfig, SlotPipeline
from .text import SensitiveRecord


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _load_config(args):
    cfg = (ExperimentConfig.from_json(args.config) if args.config
           else ExperimentConfig())
    if args.seed is not None:
        cfg.seeds = (args.seed,)
    return cfg


def _progress(line):
    print(line, flush=True)


def cmd_ingest(args):
    cfg = _load_config(args)
    if not cfg.dataset_paths:
        path = os.path.join(args.workdir, "synthetic-subject1.log")
        os.makedirs(args.workdir, exist_ok=True)
        ds.write_synthetic_recording(path, subject_id=1, seed=cfg.seeds[0],
                                     bout_len=cfg.synthetic_bout_len,
                                     cycles=cfg.synthetic_cycles)
        cfg.dataset_paths = [path]
        print(f"no dataset paths configured; wrote synthetic recording {path}")
    summary = []
    for p in cfg.dataset_paths:
        session = ds.load_subject(p)
        windows = ds.windowize(session, cfg.window_len, cfg.stride)
        summary.append({
            "path": p,
            "samples": session.n_samples,
            "windows": len(windows),
            "activities": sorted({w.activity for w in windows}),
        })
    out_dir = os.path.join(args.workdir, "results")
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, "ingest.json")
    with open(out, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    write_manifest(out_dir, "ingest", cfg, ["ingest.json"])
    print(f"wrote {out}")
    return 0


def _train_models(args, what):
    cfg = _load_config(args)
    for seed in cfg.seeds:
        models = models_for_seed(cfg, args.workdir, seed, train_missing=True)
        print(f"seed {seed}: models ready under "
              f"{os.path.join(args.workdir, 'models', f'seed-{seed}')}")
        if what == "denoiser":
            print(f"  final denoiser loss {models.denoiser.loss_curve_[-1]:.4f}")
    out_dir = os.path.join(args.workdir, "models")
    write_manifest(out_dir, f"train-{what}", cfg, [])
    return 0


def cmd_train_denoiser(args):
    return _train_models(args, "denoiser")


def cmd_train_recognizer(args):
    return _train_models(args, "recognizer")


def _agent_for_expert(cfg, registry, expert_id, seed):
    from .agent import AgentHyper, DDPGAgent
    channels = registry.get(expert_id).monitored_channels
    hyper = AgentHyper(**cfg.agent_hyper) if cfg.agent_hyper else AgentHyper()
    state_dim = cfg.embed_dim + 2 * len(channels) + ds.N_ACTIVITIES
    return DDPGAgent(state_dim, len(channels), hyper=hyper, seed=seed,
                     monitored_channels=channels, embed_dim=cfg.embed_dim)


def cmd_train_agent(args):
    cfg = _load_config(args)
    registry = default_registry()
    for seed in cfg.seeds:
        models = models_for_seed(cfg, args.workdir, seed, train_missing=True)
        model_dir = os.path.join(args.workdir, "models", f"seed-{seed}")
        for expert_id in sorted(registry.entries):
            agent = _agent_for_expert(cfg, registry, expert_id, seed)
            stream = build_stream(cfg, models, seed, cfg.fig5_scenario,
                                  cfg.fig5_delta, cfg.adapt_slots, 0)
            pipe = SlotPipeline(agent, models.recognizer, models.baselines,
                                models.g,
                                PipelineConfig(participation=cfg.participation,
                                               eta=cfg.eta,
                                               k_batches=cfg.k_batches,
                                               seed=seed))
            run_phase(pipe, stream, stream.diffusion)
            path = os.path.join(model_dir, f"agent-{expert_id}.json")
            agent.save(path)
            print(f"seed {seed}: trained agent {expert_id} -> {path}")
    write_manifest(os.path.join(args.workdir, "models"), "train-agent", cfg, [])
    return 0


def cmd_fig4(args):
    cfg = _load_config(args)
    _, csv_path = run_fig4(cfg, args.workdir, train_missing=args.train,
                           progress=_progress)
    print(f"wrote {csv_path}")
    return 0


def cmd_fig5(args):
    cfg = _load_config(args)
    _, csv_path = run_fig5(cfg, args.workdir, train_missing=args.train,
                           progress=_progress)
    print(f"wrote {csv_path}")
    return 0


def _edge_config(cfg, args):
    seed = cfg.seeds[0]
    models = models_for_seed(cfg, args.workdir, seed, train_missing=args.train)
    registry = default_registry()
    model_dir = os.path.join(args.workdir, "models", f"seed-{seed}")
    from .agent import DDPGAgent
    agents = {}
    for expert_id in registry.entries:
        path = os.path.join(model_dir, f"agent-{expert_id}.json")
        if os.path.exists(path):
            agents[expert_id] = DDPGAgent.load(path)
        else:
            agents[expert_id] = _agent_for_expert(cfg, registry, expert_id, seed)
    spec = nz.NoiseSpec(cfg.fig5_scenario, args.delta, seed)
    return EdgeConfig(
        registry=registry, agents=agents, recognizer=models.recognizer,
        baselines=models.baselines, denoiser=models.denoiser,
        wiener=models.wiener,
        noise_sd=nz.noise_sd(spec, models.channel_means),
        method=args.method, host=args.host, port=args.port,
    ), models


def cmd_serve_edge(args):
    cfg = _load_config(args)
    edge_cfg, _ = _edge_config(cfg, args)
    server = EdgeServer(edge_cfg)
    host, port = server.address
    print(f"edge server listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


def cmd_run_hub(args):
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    models = models_for_seed(cfg, args.workdir, seed, train_missing=args.train)
    stream = build_stream(cfg, models, seed, cfg.fig5_scenario, args.delta,
                          args.slots, 1)
    record = SensitiveRecord(name=args.name, gender="", age="",
                             condition_codes=list(cfg.condition_codes),
                             symptom_tags=list(cfg.symptom_tags))
    windows = [(stream.noisy[i], i, int(stream.episodes[i]),
                bool(stream.anomalous[i])) for i in range(stream.noisy.shape[0])]
    result = hub_run(args.host, args.port, cfg.user_description, record,
                     windows, cfg.embed_dim)
    out_dir = os.path.join(args.workdir, "results")
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, "hub-alerts.csv")
    with open(out, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("slot", "expert_id", "activity", "score",
                         "threshold", "fired"))
        for a in result.alerts:
            writer.writerow([a["slot"], a["expert_id"], a["activity"],
                             repr(a["score"]), repr(a["threshold"]), a["fired"]])
    write_manifest(out_dir, "run-hub", cfg, ["hub-alerts.csv"])
    print(f"wrote {out} ({len(result.alerts)} alerts)")
    return 0


def cmd_repl(args):
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    models = models_for_seed(cfg, args.workdir, seed, train_missing=args.train)
    registry = default_registry()
    agent, expert_id = make_agent(cfg, models, registry, seed)
    stream = build_stream(cfg, models, seed, cfg.fig5_scenario, cfg.fig5_delta,
                          args.slots, 1)
    pipe = SlotPipeline(agent, models.recognizer, models.baselines, models.g,
                        PipelineConfig(participation=0.0, seed=seed))
    out_dir = os.path.join(args.workdir, "results")
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "feedback-log.csv")
    print(f"expert: {expert_id}; {args.slots} slots; type feedback after "
          "each alert, /skip to continue, /quit to stop")
    with open(log_path, "w", encoding="utf-8", newline="") as logf:
        writer = csv.writer(logf)
        writer.writerow(("slot", "verdict", "activity", "raw_text"))
        data = stream.diffusion
        for i in range(min(args.slots, data.shape[0])):
            decision = pipe.process(data[i], slot=i,
                                    episode=int(stream.episodes[i]),
                                    anomalous=bool(stream.anomalous[i]))
            if not decision.fired:
                continue
            print(f"[slot {i}] ALERT score={decision.score:.2f} "
                  f"threshold={decision.threshold:.2f} "
                  f"activity={ds.ACTIVITY_NAMES.get(decision.activity)}")
            line = input("feedback> ").strip()
            if line == "/quit":
                break
            if line == "/skip" or not line:
                continue
            try:
                event = parse_feedback(line)
            except UnparseableFeedback:
                print("could not parse that feedback; /skip to continue")
                continue
            event.alert_slot = i
            pipe.finish()  # bind the pending transition before applying
            pipe.apply_event(event)
            writer.writerow([i, event.verdict, event.claimed_activity,
                             event.raw_text])
    print(f"wrote {log_path}")
    return 0


def build_parser():
    parser = _Parser(prog="vitalguard",
                     description="wearable health-alert pipeline harness")
    parser.add_argument("--version", action="version", version="vitalguard 0.1.0")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, train_flag=False):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--workdir", default="vitalguard-work",
                       help="directory for models and results")
        p.add_argument("--seed", type=int, help="override the seed list")
        if train_flag:
            p.add_argument("--train", action="store_true",
                           help="train missing models on demand")

    p = sub.add_parser("ingest", help="parse recordings and summarize windows")
    common(p)
    p.set_defaults(fn=cmd_ingest)
    for name, fn in (("train-denoiser", cmd_train_denoiser),
                     ("train-recognizer", cmd_train_recognizer),
                     ("train-agent", cmd_train_agent)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')}")
        common(p)
        p.set_defaults(fn=fn)
    p = sub.add_parser("fig4", help="error-vs-noise sweep CSV")
    common(p, train_flag=True)
    p.set_defaults(fn=cmd_fig4)
    p = sub.add_parser("fig5", help="FA/MA learning-curve CSV")
    common(p, train_flag=True)
    p.set_defaults(fn=cmd_fig5)
    p = sub.add_parser("serve-edge", help="run the edge TCP server")
    common(p, train_flag=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7733)
    p.add_argument("--method", default="full")
    p.add_argument("--delta", type=float, default=0.6,
                   help="assumed noise level for denoising")
    p.set_defaults(fn=cmd_serve_edge)
    p = sub.add_parser("run-hub", help="stream windows to an edge server")
    common(p, train_flag=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7733)
    p.add_argument("--delta", type=float, default=0.6)
    p.add_argument("--slots", type=int, default=100)
    p.add_argument("--name", default="", help="identity field of the local record")
    p.set_defaults(fn=cmd_run_hub)
    p = sub.add_parser("repl", help="interactive feedback session")
    common(p, train_flag=True)
    p.add_argument("--slots", type=int, default=200)
    p.set_defaults(fn=cmd_repl)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except VitalguardError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
