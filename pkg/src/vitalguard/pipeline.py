"""The per-slot decision pipeline shared by the harness and the edge server.

One object owns the trained models and the agent for a session and maps a
stream of (possibly noisy) windows to alert decisions, accumulating
metrics, journaling transitions, and optionally training online and
applying simulated feedback.  The networked server drives the identical
code path, which is what makes loopback and in-process runs comparable
decision for decision.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import (
    MetricsAccumulator,
    alert_decide,
    build_state,
    slot_reward,
)
from .errors import InsufficientReplay
from .feedback import (
    DecisionJournal,
    JournalEntry,
    apply_feedback,
    simulate_feedback,
)

METHOD_FULL = "full"
METHOD_UNFILTERED = "unfiltered"
METHOD_NO_ACTIVITY = "no_activity"
METHOD_NO_FEEDBACK = "no_feedback"
METHOD_WIENER = "wiener"
METHODS = (METHOD_FULL, METHOD_UNFILTERED, METHOD_NO_ACTIVITY,
           METHOD_NO_FEEDBACK, METHOD_WIENER)


@dataclass
class PipelineConfig:
    method: str = METHOD_FULL
    participation: float = 1.0
    eta: float = 0.05
    k_batches: int = 16
    train: bool = True
    explore: bool = True
    train_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def feedback_on(self):
        return self.method != METHOD_NO_FEEDBACK and self.participation > 0

    @property
    def activity_ablated(self):
        return self.method == METHOD_NO_ACTIVITY


class SlotPipeline:
    """Session-scoped decision loop around one agent."""

    def __init__(self, agent, recognizer, baselines, g, config):
        self.agent = agent
        self.recognizer = recognizer
        self.baselines = baselines
        self.g = np.asarray(g)
        self.config = config
        seq = np.random.SeedSequence(config.seed)
        explore_seed, train_seed, fb_seed = seq.spawn(3)
        self.rng_explore = np.random.default_rng(explore_seed)
        self.rng_train = np.random.default_rng(train_seed)
        self.rng_feedback = np.random.default_rng(fb_seed)
        self.journal = DecisionJournal()
        self.metrics = MetricsAccumulator()
        self._pending = None  # previous slot awaiting its next state

    def process(self, window_data, slot, episode, anomalous):
        """Decide one slot; window_data is already denoised per the method."""
        cfg = self.config
        state = build_state(self.g, window_data, self.baselines,
                            self.recognizer, self.agent.monitored_channels,
                            activity_ablated=cfg.activity_ablated)
        self._complete_pending(state)
        w = self.agent.act(state, explore=cfg.explore, rng=self.rng_explore)
        theta = self.agent.threshold_for(state.activity)
        decision = alert_decide(state, w, theta, slot=slot)
        reward = slot_reward(decision, anomalous)
        self.metrics.record(decision, anomalous, episode)
        self._pending = (state, w, reward, decision, anomalous, episode)
        return decision

    def _complete_pending(self, next_state):
        if self._pending is None:
            return
        state, w, reward, decision, anomalous, episode = self._pending
        self._pending = None
        cfg = self.config
        entry = JournalEntry(
            slot=decision.slot, state_vec=state.vector(), weights=w,
            reward=reward, next_state_vec=next_state.vector(),
            decision=decision, anomalous=anomalous, episode=episode,
        )
        self.journal.record(entry)
        if cfg.train:
            self.agent.replay.push(entry.state_vec, w, reward, entry.next_state_vec)
            if decision.slot % cfg.train_every == 0:
                try:
                    self.agent.train_batch(self.rng_train)
                except InsufficientReplay:
                    pass
        if cfg.feedback_on:
            event = simulate_feedback(decision, anomalous, cfg.participation,
                                      self.rng_feedback)
            if event is not None:
                self.apply_event(event)

    def apply_event(self, event):
        k = self.config.k_batches if self.config.train else 0
        apply_feedback(self.agent, event, self.journal, self.rng_train,
                       eta=self.config.eta, k_batches=k)

    def finish(self):
        """Flush the last slot (no next state; reuse its own as terminal)."""
        if self._pending is not None:
            state = self._pending[0]
            self._complete_pending(state)
        return self.metrics.metrics()
