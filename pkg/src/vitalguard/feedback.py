"""Conversational feedback: parse verdicts, relabel rewards, tune thresholds.

Free-text feedback is reduced to one of four verdicts by keyword rules
(never silently guessed).  Applying an event relabels the logged slot's
reward, re-inserts the transition into replay, nudges the activity's alert
threshold multiplicatively (deny raises it, missed lowers it), and runs a
short burst of training batches.  A ground-truth-driven simulator stands in
for live users during experiments.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import ACTIVITY_NAMES
from .errors import InsufficientReplay, UnknownSlot, UnparseableFeedback
from .text import tokenize

CONFIRM_ALERT = "ConfirmAlert"
DENY_ALERT = "DenyAlert"
CONFIRM_NO_ALERT = "ConfirmNoAlert"
REPORT_MISSED = "ReportMissed"
VERDICTS = (CONFIRM_ALERT, DENY_ALERT, CONFIRM_NO_ALERT, REPORT_MISSED)

ETA_DEFAULT = 0.05
K_BATCHES_DEFAULT = 16
THETA_MIN, THETA_MAX = 0.5, 10.0

_NEGATIONS = {"not", "no", "don", "dont", "t", "isn", "isnt", "aren", "arent",
              "never", "without"}
_ACTIVITY_WORDS = {name: code for code, name in ACTIVITY_NAMES.items() if code}
_ACTIVITY_WORDS.update({
    "run": 11, "running": 11, "jog": 10, "jogging": 10, "walk": 4,
    "walking": 4, "sit": 2, "sitting": 2, "stand": 1, "standing": 1,
    "lie": 3, "lying": 3, "stairs": 5, "cycle": 9, "cycling": 9,
    "jump": 12, "jumping": 12,
})


@dataclass
class FeedbackEvent:
    verdict: str
    alert_slot: int = -1
    claimed_activity: int | None = None
    raw_text: str = ""


def parse_feedback(text):
    """Keyword-rule parse; raises UnparseableFeedback rather than guessing."""
    tokens = tokenize(text)
    token_set = set(tokens)
    claimed = None
    for tok in tokens:
        if tok in _ACTIVITY_WORDS:
            claimed = _ACTIVITY_WORDS[tok]
            break

    has_negation = bool(token_set & _NEGATIONS)
    if has_negation and ({"normal", "false"} & token_set):
        verdict = DENY_ALERT
    elif "missed" in token_set or "should have" in " ".join(tokens):
        verdict = REPORT_MISSED
    elif {"correct", "yes", "thanks"} & token_set:
        verdict = CONFIRM_ALERT
    elif {"fine", "good", "okay", "ok"} & token_set:
        verdict = CONFIRM_NO_ALERT
    else:
        raise UnparseableFeedback(text)
    return FeedbackEvent(verdict=verdict, claimed_activity=claimed, raw_text=text)


def _utterance(verdict, activity):
    name = ACTIVITY_NAMES.get(activity, "resting").replace("_", " ")
    if verdict == DENY_ALERT:
        return (f"I am {name}, and my readings are normal for this activity; "
                "I don't feel any discomfort.")
    if verdict == REPORT_MISSED:
        return f"You missed an episode while I was {name}; I felt unwell."
    return f"Yes, that alert was correct, I was {name}."


def simulate_feedback(decision, anomalous, participation, rng):
    """Ground-truth-driven stand-in for a live user.

    With the participation probability: a false alert is denied, a missed
    anomaly is reported, a correct alert is confirmed.  Correct quiet slots
    never generate feedback.
    """
    if not 0.0 <= participation <= 1.0:
        raise ValueError("participation must be in [0, 1]")
    if decision.fired and not anomalous:
        verdict = DENY_ALERT
    elif not decision.fired and anomalous:
        verdict = REPORT_MISSED
    elif decision.fired and anomalous:
        verdict = CONFIRM_ALERT
    else:
        return None
    if rng.random() >= participation:
        return None
    return FeedbackEvent(verdict=verdict, alert_slot=decision.slot,
                         claimed_activity=decision.activity,
                         raw_text=_utterance(verdict, decision.activity))


@dataclass
class JournalEntry:
    slot: int
    state_vec: np.ndarray
    weights: np.ndarray
    reward: float
    next_state_vec: np.ndarray
    decision: object
    anomalous: bool
    episode: int


class DecisionJournal:
    """Slot-indexed record of decisions and their replay transitions."""

    def __init__(self):
        self._entries = {}

    def record(self, entry):
        self._entries[entry.slot] = entry

    def get(self, slot):
        if slot not in self._entries:
            raise UnknownSlot(f"slot {slot} not in decision log")
        return self._entries[slot]

    def __contains__(self, slot):
        return slot in self._entries

    def __len__(self):
        return len(self._entries)


def _relabeled_reward(verdict):
    return -1.0 if verdict in (DENY_ALERT, REPORT_MISSED) else 0.0


def apply_feedback(agent, event, journal, rng, eta=ETA_DEFAULT,
                   k_batches=K_BATCHES_DEFAULT):
    """Fine-tune the agent from one verdict; mutates agent in place.

    Threshold nudges are per activity and clamped to [THETA_MIN, THETA_MAX];
    training batches are skipped while replay is shorter than one batch.
    """
    entry = journal.get(event.alert_slot)
    reward = _relabeled_reward(event.verdict)
    agent.replay.push(entry.state_vec, entry.weights, reward, entry.next_state_vec)

    activity = (event.claimed_activity if event.claimed_activity is not None
                else entry.decision.activity)
    theta = agent.threshold_for(activity)
    # Kesten-rule step decay: a constant multiplicative step keeps the
    # threshold in a +/-eta limit cycle around its operating point, which
    # shows up as sporadic tail errors.  Shrinking the step only when the
    # correction direction reverses keeps far-from-equilibrium travel fast
    # and freezes the threshold once verdicts start alternating.
    direction = {DENY_ALERT: 1, REPORT_MISSED: -1}.get(event.verdict, 0)
    if direction:
        last, flips = agent.feedback_counts.get(activity, (0, 0))
        if last and direction != last:
            flips += 1
        agent.feedback_counts[activity] = (direction, flips)
        step = eta / np.sqrt(1.0 + flips)
        theta *= 1.0 + direction * step
        agent.thresholds[activity] = float(np.clip(theta, THETA_MIN, THETA_MAX))

    for _ in range(k_batches):
        try:
            agent.train_batch(rng)
        except InsufficientReplay:
            break
    return agent
