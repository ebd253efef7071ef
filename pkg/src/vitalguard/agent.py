"""DDPG health-alert agent: state building, alert rule, metrics, training.

State = {text embedding g, baseline-normalized channel features d, activity
profile a}.  The deterministic actor emits per-channel contribution weights
in [0,1]; the alert rule fires when the weighted mean channel evidence
exceeds the per-activity threshold.  Per-slot reward is -1 on a false or
missed alert and 0 otherwise, so its mean over a pass equals the negated
sum of the slot error rates.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .activity import uniform_profile
from .dataset import N_ACTIVITIES
from .errors import InsufficientReplay, ShapeError
from .nets import MLP, Adam
from .persist import load_document, save_document

WEIGHT_EPS = 1e-9


@dataclass
class AgentState:
    g: np.ndarray
    d: np.ndarray
    a: np.ndarray
    activity: int  # recognized activity driving the threshold lookup

    def vector(self):
        return np.concatenate([self.g, self.d, self.a])


@dataclass
class AlertDecision:
    score: float
    threshold: float
    fired: bool
    weights: np.ndarray
    slot: int
    activity: int


def build_state(g, window_data, baselines, recognizer, monitored_channels,
                activity_ablated=False):
    """Assemble the agent state for one window.

    d holds, per monitored channel, the window mean z-scored against the
    profile-blended activity baseline and the window std as a ratio to that
    baseline's std.  The profile is the recognizer's soft output, so under
    heavy corruption the effective baseline widens toward the pooled one
    instead of committing to a wrong class.  The ablated variant replaces
    the profile with the uniform vector and uses the activity-averaged
    baseline outright.
    """
    data = np.asarray(window_data)
    if activity_ablated:
        a = uniform_profile()
        # hard label still drives the threshold lookup; a single shared
        # threshold key was tried instead and over-adapts, since one
        # ReportMissed drags the operating point down for every context
        activity = recognizer.predict_one(data)
        # average() rather than pooled(): the between-activity mean spread
        # is not measurement variability, and folding it into the z-score
        # denominator pins heavy-noise scores under the threshold floor
        mean, std = baselines.average()
    else:
        a = recognizer.predict_profile(data)
        activity = int(np.argmax(a))
        mean, std = baselines.blend(a)
    chans = list(monitored_channels)
    w_mean = data[chans].mean(axis=1)
    w_std = data[chans].std(axis=1)
    z = (w_mean - mean[chans]) / std[chans]
    ratio = w_std / std[chans]
    d = np.concatenate([z, ratio])
    return AgentState(g=np.asarray(g), d=d, a=a, activity=activity)


def channel_evidence(state):
    """Per-channel anomaly evidence, shape (P,).

    |z-mean| (level excursion) plus max(std ratio - 1, 0): only excess
    oscillation counts, so an over-smoothed channel reads as quiet rather
    than as anomalous in the opposite direction.
    """
    P = state.d.size // 2
    return np.abs(state.d[:P]) + np.maximum(state.d[P:] - 1.0, 0.0)


def alert_decide(state, weights, threshold, slot=0):
    """Weight-normalized evidence total vs the activity threshold.

    The weighted mean is scaled by the channel count, so with uniform
    weights the score is the plain evidence sum: adding monitored channels
    adds score mass instead of diluting it, which keeps the operating
    range inside the fixed threshold band.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    z = channel_evidence(state)
    w = np.asarray(weights)
    if w.shape != z.shape:
        raise ShapeError(f"weights {w.shape} vs evidence {z.shape}")
    score = float(z.size * (w * z).sum() / max(w.sum(), WEIGHT_EPS))
    return AlertDecision(score=score, threshold=float(threshold),
                         fired=score > threshold, weights=w,
                         slot=slot, activity=state.activity)


def slot_reward(decision, anomalous):
    """-1 on a false alert or missed alert for this slot, else 0."""
    if decision.fired and not anomalous:
        return -1.0
    if not decision.fired and anomalous:
        return -1.0
    return 0.0


class ReplayBuffer:
    """Bounded FIFO of (s, w, r, s') transitions."""

    def __init__(self, capacity):
        self.capacity = capacity
        self._buf = deque(maxlen=capacity)

    def push(self, s, w, r, s_next):
        self._buf.append((np.asarray(s), np.asarray(w), float(r), np.asarray(s_next)))

    def __len__(self):
        return len(self._buf)

    def sample(self, batch, rng):
        idx = rng.integers(0, len(self._buf), size=batch)
        s, w, r, s2 = zip(*(self._buf[i] for i in idx))
        return np.stack(s), np.stack(w), np.array(r), np.stack(s2)


@dataclass
class AgentHyper:
    gamma: float = 0.99
    tau: float = 0.005
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    batch: int = 64
    buffer_cap: int = 50_000
    exploration_sd: float = 0.1
    hidden: tuple = (64, 64)
    theta0: float = 2.2
    # decay rate for the 1/sqrt(1 + anneal * step) schedule applied to both
    # update size and exploration noise; with sparse rewards Adam otherwise
    # keeps taking full-size steps on gradient noise and the policy never
    # settles, which shows up as score jitter long after convergence
    anneal: float = 0.01


def soft_update(target, online, tau):
    """theta_target <- tau * theta_online + (1 - tau) * theta_target."""
    target.soft_update_from(online, tau)


class DDPGAgent:
    """Actor/critic pair with targets, replay, per-activity thresholds."""

    def __init__(self, state_dim, action_dim, hyper=None, seed=0,
                 monitored_channels=(), embed_dim=0):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hyper = hyper or AgentHyper()
        self.seed = seed
        self.monitored_channels = tuple(monitored_channels)
        self.embed_dim = embed_dim
        rng = np.random.default_rng(seed)
        h = list(self.hyper.hidden)
        self.actor = MLP([state_dim, *h, action_dim], output="sigmoid", rng=rng)
        # zeroed final actor layer starts every weight at sigmoid(0) = 0.5
        self.actor.weights[-1][...] = 0.0
        self.critic = MLP([state_dim + action_dim, *h, 1], rng=rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.opt_actor = Adam(self.actor, lr=self.hyper.lr_actor)
        self.opt_critic = Adam(self.critic, lr=self.hyper.lr_critic)
        self.replay = ReplayBuffer(self.hyper.buffer_cap)
        self.thresholds = {act: self.hyper.theta0 for act in range(N_ACTIVITIES)}
        self.feedback_counts = {}
        self.train_steps = 0

    def _anneal_scale(self):
        return 1.0 / np.sqrt(1.0 + self.hyper.anneal * self.train_steps)

    def threshold_for(self, activity):
        return self.thresholds.setdefault(activity, self.hyper.theta0)

    def act(self, state, explore=False, rng=None):
        """Deterministic policy output, optionally with Gaussian exploration."""
        s = state.vector() if isinstance(state, AgentState) else np.asarray(state)
        if s.size != self.state_dim:
            raise ShapeError(f"state dim {s.size}, expected {self.state_dim}")
        w = self.actor.predict(s[None])[0]
        if explore:
            if rng is None:
                raise ValueError("exploration requires an rng")
            sd = self.hyper.exploration_sd * self._anneal_scale()
            w = w + rng.normal(0.0, sd, size=w.shape)
        return np.clip(w, 0.0, 1.0)

    def remember(self, state, w, reward, next_state):
        s = state.vector() if isinstance(state, AgentState) else state
        s2 = next_state.vector() if isinstance(next_state, AgentState) else next_state
        self.replay.push(s, w, reward, s2)

    def train_batch(self, rng):
        """One critic regression step, one actor ascent step, soft updates."""
        hp = self.hyper
        if len(self.replay) < hp.batch:
            raise InsufficientReplay(f"{len(self.replay)} < batch {hp.batch}")
        s, w, r, s2 = self.replay.sample(hp.batch, rng)
        scale = self._anneal_scale()
        self.train_steps += 1

        w2 = self.target_actor.predict(s2)
        q2 = self.target_critic.predict(np.concatenate([s2, w2], axis=1))[:, 0]
        y = r + hp.gamma * q2

        q, cache = self.critic.forward(np.concatenate([s, w], axis=1))
        diff = q[:, 0] - y
        critic_loss = float(np.mean(diff ** 2))
        grads, _ = self.critic.backward(cache, (2.0 * diff / hp.batch)[:, None])
        self.opt_critic.step(grads, scale=scale)

        w_pi, cache_a = self.actor.forward(s)
        q_pi, cache_c = self.critic.forward(np.concatenate([s, w_pi], axis=1))
        actor_objective = float(np.mean(q_pi))
        # ascend Q: upstream gradient of loss -mean(Q) through the critic input
        _, dinput = self.critic.backward(cache_c, np.full((hp.batch, 1), -1.0 / hp.batch))
        dw = dinput[:, self.state_dim:]
        actor_grads, _ = self.actor.backward(cache_a, dw)
        self.opt_actor.step(actor_grads, scale=scale)

        soft_update(self.target_actor, self.actor, hp.tau)
        soft_update(self.target_critic, self.critic, hp.tau)
        return {"critic_loss": critic_loss, "actor_objective": actor_objective}

    # --- persistence --------------------------------------------------------

    def save(self, path):
        save_document(path, "ddpg-agent", {
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "embed_dim": self.embed_dim,
            "monitored_channels": list(self.monitored_channels),
            "seed": self.seed,
            "hyper": {**vars(self.hyper), "hidden": list(self.hyper.hidden)},
            "thresholds": {str(k): v for k, v in self.thresholds.items()},
            "feedback_counts": {str(k): list(v)
                                for k, v in self.feedback_counts.items()},
            "train_steps": self.train_steps,
            "actor": self.actor.to_payload(),
            "critic": self.critic.to_payload(),
            "target_actor": self.target_actor.to_payload(),
            "target_critic": self.target_critic.to_payload(),
        })

    @classmethod
    def load(cls, path):
        doc = load_document(path, "ddpg-agent")
        hyper = AgentHyper(**{**doc["hyper"], "hidden": tuple(doc["hyper"]["hidden"])})
        agent = cls(doc["state_dim"], doc["action_dim"], hyper=hyper,
                    seed=doc["seed"],
                    monitored_channels=tuple(doc["monitored_channels"]),
                    embed_dim=doc["embed_dim"])
        agent.actor = MLP.from_payload(doc["actor"])
        agent.critic = MLP.from_payload(doc["critic"])
        agent.target_actor = MLP.from_payload(doc["target_actor"])
        agent.target_critic = MLP.from_payload(doc["target_critic"])
        agent.opt_actor = Adam(agent.actor, lr=hyper.lr_actor)
        agent.opt_critic = Adam(agent.critic, lr=hyper.lr_critic)
        agent.thresholds = {int(k): float(v) for k, v in doc["thresholds"].items()}
        agent.feedback_counts = {int(k): (int(v[0]), int(v[1]))
                                 for k, v in doc.get("feedback_counts", {}).items()}
        agent.train_steps = int(doc.get("train_steps", 0))
        return agent


# --- decision log & metrics -------------------------------------------------

LOG_HEADER = ("slot", "episode", "activity", "score", "threshold", "fired", "anomalous")


@dataclass
class LogRow:
    slot: int
    episode: int
    activity: int
    score: float
    threshold: float
    fired: bool
    anomalous: bool


@dataclass
class AlertMetrics:
    p_ma: float
    p_fa: float
    ma_events: int
    anomalous_episodes: int
    fa_events: int
    normal_episodes: int
    ma_slots: int
    fa_slots: int
    slots: int

    @property
    def total(self):
        return self.p_ma + self.p_fa

    @property
    def mean_slot_reward(self):
        return -(self.fa_slots + self.ma_slots) / self.slots if self.slots else 0.0


class MetricsAccumulator:
    """Incremental episode-level MA/FA probabilities plus slot counters.

    A missed alert is an anomalous episode with no fired slot; a false
    alert is a normal episode with at least one fired slot.
    """

    def __init__(self):
        self.rows = []
        self._episodes = {}  # episode id -> [anomalous, any_fired]
        self.ma_slots = 0
        self.fa_slots = 0

    def record(self, decision, anomalous, episode):
        self.rows.append(LogRow(
            slot=decision.slot, episode=episode, activity=decision.activity,
            score=decision.score, threshold=decision.threshold,
            fired=decision.fired, anomalous=anomalous,
        ))
        ep = self._episodes.setdefault(episode, [anomalous, False])
        ep[1] = ep[1] or decision.fired
        if decision.fired and not anomalous:
            self.fa_slots += 1
        elif not decision.fired and anomalous:
            self.ma_slots += 1

    def metrics(self):
        anomalous_eps = sum(1 for a, _ in self._episodes.values() if a)
        normal_eps = len(self._episodes) - anomalous_eps
        ma = sum(1 for a, fired in self._episodes.values() if a and not fired)
        fa = sum(1 for a, fired in self._episodes.values() if not a and fired)
        return AlertMetrics(
            p_ma=ma / anomalous_eps if anomalous_eps else 0.0,
            p_fa=fa / normal_eps if normal_eps else 0.0,
            ma_events=ma, anomalous_episodes=anomalous_eps,
            fa_events=fa, normal_episodes=normal_eps,
            ma_slots=self.ma_slots, fa_slots=self.fa_slots,
            slots=len(self.rows),
        )


def metrics_from_log(rows):
    """Recompute AlertMetrics from a decision log (the consistency oracle)."""
    acc = MetricsAccumulator()
    for row in rows:
        acc.record(
            AlertDecision(score=row.score, threshold=row.threshold,
                          fired=row.fired, weights=np.empty(0),
                          slot=row.slot, activity=row.activity),
            row.anomalous, row.episode)
    return acc.metrics()
