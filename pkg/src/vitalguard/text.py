"""Privacy-side text handling: redaction, embedding, optional LLM adapter.

Sensitive records are rendered into identity-free prose by a deterministic
template over a fixed condition/symptom catalog.  An external text service
can replace the template (same contract) but its output is scrubbed: any
response containing an identity token is rejected and the template result
used instead, so the no-identity invariant holds on every path.

Embeddings are signed feature hashes: order-free over tokens, unit L2 norm
for any nonempty text, no trained vocabulary required.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import AdapterUnavailable, BadDimension, UnknownCode

DEFAULT_EMBED_DIM = 64

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _load_catalog():
    with resources.files("vitalguard.data").joinpath("conditions.json").open() as f:
        return json.load(f)


_CATALOG = _load_catalog()
CONDITION_CODES = tuple(sorted(_CATALOG["conditions"]))
SYMPTOM_CODES = tuple(sorted(_CATALOG["symptoms"]))


@dataclass
class SensitiveRecord:
    name: str = ""
    gender: str = ""
    age: str = ""
    condition_codes: list = field(default_factory=list)
    symptom_tags: list = field(default_factory=list)

    def identity_tokens(self):
        toks = set()
        for value in (self.name, self.gender, self.age):
            toks.update(tokenize(value))
        return toks


@dataclass
class RedactedText:
    text: str


def tokenize(text):
    return _TOKEN_RE.findall(text.lower())


def contains_identity(text, record):
    """True if any identity token of the record appears in the text."""
    toks = set(tokenize(text))
    return bool(toks & record.identity_tokens())


def _join(phrases):
    if len(phrases) == 1:
        return phrases[0]
    return ", ".join(phrases[:-1]) + " and " + phrases[-1]


def redact(record):
    """Deterministic identity-free prose for one record."""
    conditions = []
    for code in record.condition_codes:
        if code not in _CATALOG["conditions"]:
            raise UnknownCode(code)
        conditions.append(_CATALOG["conditions"][code])
    symptoms = []
    for tag in record.symptom_tags:
        if tag not in _CATALOG["symptoms"]:
            raise UnknownCode(tag)
        symptoms.append(_CATALOG["symptoms"][tag])

    if not conditions and not symptoms:
        return RedactedText("No reported conditions.")
    parts = []
    if conditions:
        parts.append(f"The patient was diagnosed with {_join(conditions)}.")
    if symptoms:
        parts.append(f"They experienced {_join(symptoms)}.")
    text = " ".join(parts)
    assert not contains_identity(text, record)
    return RedactedText(text)


def _token_hash(token):
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def embed(text, dim=DEFAULT_EMBED_DIM):
    """Signed feature-hash embedding; zero vector only for empty token sets."""
    if dim < 1:
        raise BadDimension(f"dimension must be >= 1, got {dim}")
    g = np.zeros(dim)
    for token in tokenize(text):
        h = _token_hash(token)
        bucket = (h >> 1) % dim
        sign = 1.0 if h & 1 else -1.0
        g[bucket] += sign
    norm = np.linalg.norm(g)
    if norm > 0:
        g /= norm
    return g


DEFAULT_PROMPT = (
    "Summarize a description of this patient; omit all personal information "
    "(name, gender, age) and focus only on the conditions and symptoms."
)


class HttpTextAdapter:
    """Minimal wire client: POST {"prompt": ...} -> {"text": ...}."""

    def __init__(self, url, timeout=5.0):
        self.url = url
        self.timeout = timeout

    def complete(self, prompt):
        import urllib.error
        import urllib.request

        body = json.dumps({"prompt": prompt}).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as e:
            raise AdapterUnavailable(str(e)) from e
        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
            raise AdapterUnavailable("malformed adapter response")
        return payload["text"]


def llm_reconstruct(record, adapter, prompt=DEFAULT_PROMPT, warn=None):
    """Reconstruct prose via the adapter, falling back to the template.

    Fallback triggers on adapter failure and on any response that violates
    the identity invariant; the result is always safe to transmit.
    """
    try:
        response = adapter.complete(prompt)
    except AdapterUnavailable as e:
        if warn:
            warn(f"text adapter unavailable, using template redaction: {e}")
        return redact(record)
    if contains_identity(response, record):
        if warn:
            warn("adapter response leaked identity tokens; rejected")
        return redact(record)
    return RedactedText(response)
