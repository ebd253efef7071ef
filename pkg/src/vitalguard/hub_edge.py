"""Hub-node client and edge-server halves of the deployment split.

The hub performs redaction and embedding locally and uploads raw numeric
windows plus the embedding; the edge denoises, gates the user description
to an expert agent, decides, and answers each DATA frame with one ALERT.
Identity tokens never leave the hub: the client keeps a wire capture so
that invariant is directly assertable.
"""
from __future__ import annotations

import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import protocol
from .errors import HubUnreachable, UnparseableFeedback, VitalguardError
from .feedback import FeedbackEvent, VERDICTS, parse_feedback
from .gate import llm_gate, rule_gate
from .pipeline import (
    METHOD_FULL,
    METHOD_UNFILTERED,
    METHOD_WIENER,
    PipelineConfig,
    SlotPipeline,
)
from .text import embed, redact


@dataclass
class EdgeConfig:
    registry: object
    agents: dict            # expert id -> DDPGAgent
    recognizer: object
    baselines: object
    denoiser: object        # fitted DiffusionDenoiser
    wiener: object          # WienerDenoiser
    noise_sd: np.ndarray | None = None  # per-channel injected-noise sd estimate
    method: str = METHOD_FULL
    pipeline: PipelineConfig = field(default_factory=lambda: PipelineConfig(
        train=False, explore=False, participation=0.0, k_batches=0))
    gate_adapter: object | None = None
    host: str = "127.0.0.1"
    port: int = 0


class _SessionHandler(socketserver.BaseRequestHandler):
    def handle(self):
        cfg = self.server.edge_config
        expert_id = None
        pipe = None
        lock = None
        try:
            while True:
                msg = protocol.recv_message(self.request)
                if msg is None:
                    return
                mtype = msg["type"]
                if expert_id is None:
                    if mtype != protocol.HELLO:
                        self._error("PROTO", f"first message must be HELLO, got {mtype}")
                        return
                    description = msg.get("user_description", "")
                    if cfg.gate_adapter is not None:
                        expert_id = llm_gate(description, cfg.registry, cfg.gate_adapter)
                    else:
                        expert_id = rule_gate(description, cfg.registry)
                    agent = cfg.agents[expert_id]
                    pipe = SlotPipeline(agent, cfg.recognizer, cfg.baselines,
                                        g=np.asarray(msg.get("g", np.zeros(agent.embed_dim))),
                                        config=cfg.pipeline)
                    lock = self.server.agent_locks[expert_id]
                    protocol.send_message(self.request, {
                        "type": protocol.ACK, "expert_id": expert_id})
                elif mtype == protocol.DATA:
                    self._handle_data(msg, pipe, expert_id, lock)
                elif mtype == protocol.FEEDBACK:
                    self._handle_feedback(msg, pipe, lock)
                else:
                    self._error("PROTO", f"unexpected message type {mtype}")
                    return
        except VitalguardError as e:
            self._error("PROTO", str(e))
        except (ConnectionError, OSError):
            pass

    def _handle_data(self, msg, pipe, expert_id, lock):
        cfg = self.server.edge_config
        window = np.asarray(msg["d"], dtype=np.float64)
        if cfg.method == METHOD_UNFILTERED:
            denoised = window
        elif cfg.method == METHOD_WIENER:
            denoised = cfg.wiener.transform(window)
        else:
            denoised = cfg.denoiser.transform(window, noise_sd=cfg.noise_sd)
        with lock:
            decision = pipe.process(denoised, slot=int(msg["slot"]),
                                    episode=int(msg.get("episode", msg["slot"])),
                                    anomalous=bool(msg.get("anomalous", False)))
        protocol.send_message(self.request, {
            "type": protocol.ALERT,
            "slot": decision.slot,
            "expert_id": expert_id,
            "activity": decision.activity,
            "score": decision.score,
            "threshold": decision.threshold,
            "fired": decision.fired,
            "weights": decision.weights.tolist(),
        })

    def _handle_feedback(self, msg, pipe, lock):
        if "verdict" in msg:
            if msg["verdict"] not in VERDICTS:
                self._error("FEEDBACK", f"unknown verdict {msg['verdict']!r}")
                return
            event = FeedbackEvent(verdict=msg["verdict"],
                                  alert_slot=int(msg["alert_slot"]),
                                  claimed_activity=msg.get("claimed_activity"),
                                  raw_text=msg.get("raw_text", ""))
        else:
            try:
                event = parse_feedback(msg.get("raw_text", ""))
            except UnparseableFeedback as e:
                self._error("FEEDBACK", str(e))
                return
            event.alert_slot = int(msg["alert_slot"])
        with lock:
            pipe.apply_event(event)
        protocol.send_message(self.request, {"type": protocol.ACK,
                                             "slot": event.alert_slot})

    def _error(self, code, detail):
        try:
            protocol.send_message(self.request, {
                "type": protocol.ERROR, "code": code, "detail": detail})
        except OSError:
            pass


class EdgeServer:
    """Threaded TCP server; one pipeline per connection, locked per expert."""

    def __init__(self, config):
        self.config = config

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = _Server((config.host, config.port), _SessionHandler)
        self._server.edge_config = config
        self._server.agent_locks = {eid: threading.Lock() for eid in config.agents}
        self._thread = None

    @property
    def address(self):
        return self._server.server_address

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

    def serve_forever(self):
        self._server.serve_forever()


@dataclass
class HubResult:
    alerts: list
    wire_capture: bytearray


class HubClient:
    """Uploads redacted mixed-content records and collects alert replies."""

    def __init__(self, host, port, retries=3, backoff=0.2, timeout=10.0):
        self.host = host
        self.port = port
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._sock = None
        self.wire_capture = bytearray()

    def connect(self, user_description, record, embed_dim):
        last = None
        delay = self.backoff
        for _ in range(self.retries):
            try:
                self._sock = socket.create_connection(
                    (self.host, self.port), timeout=self.timeout)
                break
            except OSError as e:
                last = e
                time.sleep(delay)
                delay = min(delay * 2, 2.0)
        else:
            raise HubUnreachable(f"{self.host}:{self.port} after {self.retries} attempts: {last}")
        prose = redact(record)  # identity never leaves the hub
        g = embed(prose.text, embed_dim)
        self._send({"type": protocol.HELLO,
                    "user_description": user_description,
                    "g": g.tolist()})
        ack = protocol.recv_message(self._sock)
        if ack is None or ack.get("type") != protocol.ACK:
            raise HubUnreachable(f"handshake rejected: {ack}")
        return ack.get("expert_id")

    def _send(self, msg):
        frame = protocol.encode_frame(msg)
        self.wire_capture.extend(frame)
        self._sock.sendall(frame)

    def send_window(self, window_data, slot, episode=None, anomalous=False):
        self._send({"type": protocol.DATA,
                    "slot": int(slot),
                    "episode": int(episode if episode is not None else slot),
                    "anomalous": bool(anomalous),
                    "d": np.asarray(window_data).tolist()})
        reply = protocol.recv_message(self._sock)
        if reply is None:
            raise HubUnreachable("connection closed awaiting ALERT")
        return reply

    def send_feedback(self, alert_slot, raw_text=None, verdict=None,
                      claimed_activity=None):
        msg = {"type": protocol.FEEDBACK, "alert_slot": int(alert_slot)}
        if verdict is not None:
            msg["verdict"] = verdict
        if raw_text is not None:
            msg["raw_text"] = raw_text
        if claimed_activity is not None:
            msg["claimed_activity"] = int(claimed_activity)
        self._send(msg)
        return protocol.recv_message(self._sock)

    def close(self):
        if self._sock is not None:
            self._sock.close()
            self._sock = None


def hub_run(host, port, user_description, record, windows, embed_dim,
            feedback_fn=None):
    """Stream a window list to an edge server; returns alerts + wire capture.

    windows: iterable of (window_data, slot, episode, anomalous).
    feedback_fn, when given, maps an ALERT message to an optional feedback
    text to send back.
    """
    client = HubClient(host, port)
    alerts = []
    try:
        client.connect(user_description, record, embed_dim)
        for window_data, slot, episode, anomalous in windows:
            alert = client.send_window(window_data, slot, episode, anomalous)
            alerts.append(alert)
            if feedback_fn is not None and alert.get("type") == protocol.ALERT:
                text = feedback_fn(alert)
                if text:
                    client.send_feedback(alert["slot"], raw_text=text)
    finally:
        client.close()
    return HubResult(alerts=alerts, wire_capture=client.wire_capture)
