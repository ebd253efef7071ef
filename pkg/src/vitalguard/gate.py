"""Expert routing: keyword gate over a registry, optional LLM adapter.

The registry maps expert ids to profile keyword sets, monitored channel
indices, and an agent persistence path.  The deterministic rule gate scores
a free-text occupation/status description by keyword hits and returns the
argmax, falling back to the default expert on ties or zero hits.  The LLM
path sends the description plus the candidate ids to an adapter and accepts
the response only if it names a registered expert.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .dataset import ANKLE_ACC, ECG_LEADS
from .errors import AdapterUnavailable, DuplicateExpert, TagCollision, UnknownExpert
from .text import tokenize


@dataclass
class ExpertEntry:
    profile_tags: frozenset
    monitored_channels: tuple
    agent_path: str = ""


@dataclass
class ExpertRegistry:
    entries: dict = field(default_factory=dict)
    default_id: str = "default"

    def __post_init__(self):
        if self.entries and self.default_id not in self.entries:
            raise UnknownExpert(f"default expert {self.default_id!r} not registered")

    def get(self, expert_id):
        if expert_id not in self.entries:
            raise UnknownExpert(expert_id)
        return self.entries[expert_id]

    def to_json(self):
        return json.dumps({
            "default_id": self.default_id,
            "entries": {
                eid: {
                    "profile_tags": sorted(e.profile_tags),
                    "monitored_channels": list(e.monitored_channels),
                    "agent_path": e.agent_path,
                }
                for eid, e in self.entries.items()
            },
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, doc):
        data = json.loads(doc) if isinstance(doc, str) else doc
        entries = {
            eid: ExpertEntry(
                profile_tags=frozenset(rec["profile_tags"]),
                monitored_channels=tuple(rec["monitored_channels"]),
                agent_path=rec.get("agent_path", ""),
            )
            for eid, rec in data["entries"].items()
        }
        return cls(entries=entries, default_id=data["default_id"])


def register_expert(registry, expert_id, tags, channels, agent_path=""):
    """Add an expert; tags must not collide with any existing expert's."""
    if expert_id in registry.entries:
        raise DuplicateExpert(expert_id)
    tags = frozenset(t.lower() for t in tags)
    for other_id, entry in registry.entries.items():
        overlap = tags & entry.profile_tags
        if overlap:
            raise TagCollision(sorted(overlap)[0], other_id)
    registry.entries[expert_id] = ExpertEntry(
        profile_tags=tags,
        monitored_channels=tuple(channels),
        agent_path=agent_path,
    )
    if not registry.default_id or registry.default_id not in registry.entries:
        registry.default_id = expert_id
    return registry


def default_registry(agent_dir=""):
    """The shipped three-expert taxonomy.

    Sedentary profiles watch the ECG leads (the vital channels for a
    desk-bound user); active profiles add ankle acceleration; the default
    expert watches ECG only.
    """
    prefix = f"{agent_dir}/" if agent_dir else ""
    reg = ExpertRegistry()
    register_expert(reg, "default", (), ECG_LEADS, f"{prefix}agent-default.json")
    register_expert(
        reg, "sedentary",
        ("programmer", "sedentary", "desk", "office", "developer", "writer",
         "researcher", "coder", "accountant", "mental"),
        ECG_LEADS, f"{prefix}agent-sedentary.json")
    register_expert(
        reg, "active",
        ("athlete", "runner", "construction", "courier", "trainer", "farmer",
         "active", "sports", "physical", "laborer"),
        ECG_LEADS + ANKLE_ACC, f"{prefix}agent-active.json")
    return reg


def rule_gate(description, registry):
    """Keyword-hit argmax over the registry; deterministic total function."""
    tokens = set(tokenize(description))
    best_id = registry.default_id
    best_score = 0
    tie = False
    for expert_id in sorted(registry.entries):
        score = len(tokens & registry.entries[expert_id].profile_tags)
        if score > best_score:
            best_id, best_score, tie = expert_id, score, False
        elif score == best_score and score > 0 and expert_id != best_id:
            tie = True
    if best_score == 0 or tie:
        return registry.default_id
    return best_id


def llm_gate(description, registry, adapter):
    """Route via the adapter; anything but a registered id falls back."""
    candidates = sorted(registry.entries)
    prompt = (
        "Select the single best-matching expert id for this user description. "
        f"Candidates: {', '.join(candidates)}. Reply with exactly one id.\n"
        f"Description: {description}"
    )
    try:
        response = adapter.complete(prompt).strip()
    except AdapterUnavailable:
        return rule_gate(description, registry)
    if response not in registry.entries:
        return rule_gate(description, registry)
    return response
