"""Realtime guidance service: protocol handling, persistence, TCP serving.

The service is a thin adapter over the session state machine: every
corner update maps to one `advance` call, and the final state for any
message sequence equals driving the state machine directly with the
same inputs. One session runs as one serialized loop; concurrent
sessions are independent.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import socket
import socketserver
import threading
from pathlib import Path

from .calibrate import SolverConfig
from .errors import (
    MissingCorner,
    ModeMismatch,
    NoBoardDetected,
    PoseguideError,
    SchemaError,
    SessionPhaseError,
)
from .protocol import (
    CLIENT_TYPES,
    corners_from_wire,
    corners_to_wire,
    encode_frame,
    make_message,
    read_frame,
    validate_message,
)
from .session import (
    Capture,
    Completed,
    MatchProgress,
    NoBoard,
    SessionConfig,
    abort_session,
    advance,
    begin_session,
    event_to_dict,
    finalize,
    manual_capture,
)


class ArtifactStore:
    """Content-addressed JSON records under a data directory.

    A record's reference is "<kind>/<first 16 hex of sha256>"; identical
    content maps to the same reference, and existing records are never
    rewritten. Creation metadata lives in a sidecar file so the record
    bytes stay purely content-derived.
    """

    def __init__(self, data_dir):
        self.root = Path(data_dir)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, ref: str) -> Path:
        kind, _, digest = ref.partition("/")
        return self.root / kind / f"{digest}.json"

    def put(self, kind: str, payload: dict) -> str:
        body = json.dumps(payload, sort_keys=True)
        digest = hashlib.sha256(body.encode()).hexdigest()[:16]
        ref = f"{kind}/{digest}"
        path = self._path(ref)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(body + "\n")
            tmp.rename(path)
            import time

            meta = {"kind": kind, "ref": ref, "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
            path.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
        return ref

    def get(self, ref: str) -> dict:
        path = self._path(ref)
        if not path.exists():
            raise KeyError(f"no stored artifact {ref!r}")
        return json.loads(path.read_text())

    def get_meta(self, ref: str) -> dict:
        path = self._path(ref).with_suffix(".meta.json")
        if not path.exists():
            raise KeyError(f"no metadata for {ref!r}")
        return json.loads(path.read_text())

    def has(self, ref: str) -> bool:
        return self._path(ref).exists()


class SessionProtocol:
    """Transport-free protocol engine for one guidance session.

    Feed incoming message dicts to handle(); it returns the list of
    server reply dicts. The underlying state machine is only ever
    touched through advance/manual_capture, keeping the adapter thin.
    """

    _ids = itertools.count(1)

    def __init__(self, config: SessionConfig, store: ArtifactStore | None = None,
                 session_id: str | None = None, solver: SolverConfig = SolverConfig()):
        self.config = config
        self.store = store
        self.solver = solver
        # Process-local counter: session ids are deterministic, keeping the
        # whole component free of ambient entropy. Clients needing stable
        # ids across restarts supply their own in client_hello.
        self.session_id = session_id or f"session-{next(self._ids):06d}"
        self.state = None
        self.last_client_seq = None
        self.server_seq = 0
        self.last_detections = None
        self.event_log: list[dict] = []
        self.result_ref: str | None = None
        self.frames_seen = 0

    # -- outgoing ---------------------------------------------------------

    def _reply(self, msg_type: str, payload: dict | None = None) -> dict:
        self.server_seq += 1
        return make_message(msg_type, self.session_id, self.server_seq, payload)

    def _error(self, code: str, detail: str) -> dict:
        return self._reply("server_error", {"code": code, "detail": detail})

    def _target_message(self) -> dict:
        target = self.state.targets[self.state.current_target]
        return self._reply(
            "server_target",
            {
                "target_index": target.index,
                "expected_corners": [[float(u), float(v)] for u, v in target.expected_corners],
                "outer_four": list(target.outer_four),
                "total_targets": self.state.total_targets,
            },
        )

    # -- event translation --------------------------------------------------

    def _translate(self, events) -> list[dict]:
        replies = []
        for event in events:
            self.event_log.append(event_to_dict(event))
            if isinstance(event, NoBoard):
                replies.append(
                    self._reply(
                        "server_progress",
                        {"distance": None, "adjustments": None, "dwell_count": 0},
                    )
                )
            elif isinstance(event, MatchProgress):
                replies.append(
                    self._reply(
                        "server_progress",
                        {
                            "distance": event.distance,
                            "adjustments": [list(a) for a in event.adjustments],
                            "dwell_count": event.dwell_count,
                        },
                    )
                )
            elif isinstance(event, Capture):
                replies.append(
                    self._reply("server_capture", {"target_index": event.target_index})
                )
                if self.state.is_live:
                    replies.append(self._target_message())
            elif isinstance(event, Completed):
                replies.append(self._complete_message())
        return replies

    def _complete_message(self) -> dict:
        try:
            result = finalize(self.state, self.solver)
        except PoseguideError as err:
            return self._error("calibration_failed", str(err))
        payload = result.to_json_dict()
        ref = None
        if self.store is not None:
            ref = self.store.put("results", payload)
        self.result_ref = ref
        self._persist_log()
        return self._reply(
            "server_complete",
            {"result_ref": ref, "mre": result.mre, "converged": result.converged},
        )

    def _persist_log(self):
        if self.store is None:
            return
        path = self.store.root / "sessions" / f"{self.session_id}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for entry in self.event_log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    # -- incoming ----------------------------------------------------------

    def handle(self, message: dict) -> list[dict]:
        try:
            validate_message(message)
        except SchemaError as err:
            return [self._error("bad_message", str(err))]
        if message["type"] not in CLIENT_TYPES:
            return [self._error("bad_message", f"{message['type']} is not a client message")]

        if message["type"] == "client_hello":
            if self.state is not None:
                if message["session_id"] != self.session_id:
                    return [self._error("no_session", "hello for a different session")]
                # Reconnect: resend the current target.
                self.last_client_seq = message["seq"]
                return [self._target_message()]
            if message["session_id"]:
                self.session_id = message["session_id"]
            self.last_client_seq = message["seq"]
            self.state = begin_session(self.config)
            return [self._target_message()]

        if self.state is None:
            return [self._error("no_session", "send client_hello first")]
        if message["session_id"] != self.session_id:
            return [self._error("no_session", f"unknown session {message['session_id']!r}")]
        if self.last_client_seq is not None and message["seq"] <= self.last_client_seq:
            return [
                self._error(
                    "stale_sequence",
                    f"seq {message['seq']} not after {self.last_client_seq}",
                )
            ]
        self.last_client_seq = message["seq"]

        if not self.state.is_live:
            return [self._error("session_over", f"session is {self.state.phase}")]

        payload = message.get("payload", {})
        if message["type"] == "corner_update":
            try:
                corners = corners_from_wire(payload["corners"])
                frame_token = str(payload.get("frame_token", message["seq"]))
            except (KeyError, TypeError, IndexError) as err:
                return [self._error("bad_message", f"malformed corner_update: {err}")]
            self.last_detections = corners
            self.frames_seen += 1
            self.state, events = advance(self.state, corners, frame_token)
            return self._translate(events)

        if message["type"] == "manual_capture_request":
            if self.config.capture_mode != "manual":
                return [self._error("mode_mismatch", "session is in auto capture mode")]
            if self.last_detections is None:
                return [self._error("no_board", "no corner update received yet")]
            frame_token = str(payload.get("frame_token", message["seq"]))
            try:
                self.state, events = manual_capture(self.state, self.last_detections, frame_token)
            except (NoBoardDetected, MissingCorner) as err:
                return [self._error("no_board", str(err))]
            except (ModeMismatch, SessionPhaseError) as err:
                return [self._error("mode_mismatch", str(err))]
            return self._translate(events)

        return [self._error("bad_message", f"unhandled type {message['type']}")]

    def abort(self):
        if self.state is not None and self.state.is_live:
            self.state = abort_session(self.state)
            self.event_log.append({"event": "aborted"})
            self._persist_log()


class GuidanceServer:
    """Threaded TCP server speaking the length-delimited JSON protocol.

    Each connection runs one serialized session loop. With
    on_disconnect="suspend", a dropped session can be resumed by a new
    connection sending client_hello with the same session_id.
    """

    def __init__(self, config: SessionConfig, listen_address=("127.0.0.1", 0),
                 data_dir=None, on_disconnect: str = "abort",
                 solver: SolverConfig = SolverConfig()):
        if on_disconnect not in ("abort", "suspend"):
            raise ValueError("on_disconnect must be 'abort' or 'suspend'")
        self.config = config
        self.store = ArtifactStore(data_dir) if data_dir else None
        self.on_disconnect = on_disconnect
        self.solver = solver
        self.sessions: dict[str, SessionProtocol] = {}
        self._lock = threading.Lock()
        server_self = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                server_self._serve_connection(self.rfile, self.wfile)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._tcp = Server(listen_address, Handler)

    @property
    def address(self):
        return self._tcp.server_address

    def _session_for_hello(self, message: dict) -> SessionProtocol:
        wanted = message.get("session_id") or None
        with self._lock:
            if wanted and wanted in self.sessions:
                return self.sessions[wanted]
            proto = SessionProtocol(
                self.config, self.store, session_id=wanted, solver=self.solver
            )
            self.sessions[proto.session_id] = proto
            return proto

    def _serve_connection(self, rfile, wfile):
        proto = None
        try:
            while True:
                try:
                    message = read_frame(rfile)
                except SchemaError as err:
                    err_msg = make_message("server_error", "", 0, {"code": "bad_frame", "detail": str(err)})
                    wfile.write(encode_frame(err_msg))
                    wfile.flush()
                    return
                if message is None:
                    return
                if proto is None:
                    if message.get("type") != "client_hello":
                        reply = make_message(
                            "server_error", message.get("session_id", ""), 0,
                            {"code": "no_session", "detail": "send client_hello first"},
                        )
                        wfile.write(encode_frame(reply))
                        wfile.flush()
                        continue
                    proto = self._session_for_hello(message)
                for reply in proto.handle(message):
                    wfile.write(encode_frame(reply))
                wfile.flush()
        finally:
            if proto is not None and self.on_disconnect == "abort":
                proto.abort()
                with self._lock:
                    self.sessions.pop(proto.session_id, None)

    def serve_forever(self):
        self._tcp.serve_forever(poll_interval=0.1)

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread

    def shutdown(self):
        self._tcp.shutdown()
        self._tcp.server_close()


def serve_session(config: SessionConfig, listen_address, data_dir=None,
                  on_disconnect: str = "abort") -> GuidanceServer:
    """Construct and start a guidance server in a background thread."""
    server = GuidanceServer(config, listen_address, data_dir, on_disconnect)
    server.start_background()
    return server


def run_scripted_session(
    config: SessionConfig,
    operator,
    detector_noise,
    camera=None,
    store: ArtifactStore | None = None,
    session_id: str = "scripted",
    max_frames: int = 20000,
):
    """Drive a full session through the protocol engine, no transport.

    A simulated operator produces the corner stream; every client
    message and server reply is recorded in order. Returns
    (protocol_engine, transcript) where transcript entries are
    {"direction": "client"|"server", "message": ...}.
    """
    from .session import default_reference
    from .simulate import SimulatedBoardDriver

    proto = SessionProtocol(config, store, session_id=session_id)
    camera = camera or config.reference_intrinsics or default_reference(config.image)
    driver = SimulatedBoardDriver(
        config.pose_set, config.board, config.image, camera, operator, detector_noise
    )
    transcript: list[dict] = []
    seq = 0

    def send(msg_type, payload=None):
        nonlocal seq
        seq += 1
        message = make_message(msg_type, session_id, seq, payload)
        transcript.append({"direction": "client", "message": message})
        replies = proto.handle(message)
        for reply in replies:
            transcript.append({"direction": "server", "message": reply})
        return replies

    replies = send("client_hello")
    current_target = replies[0]["payload"]["target_index"]
    for frame in range(max_frames):
        corners = driver.tick(current_target)
        replies = send(
            "corner_update",
            {"frame_token": f"frame-{frame}", "corners": corners_to_wire(corners)},
        )
        done = False
        for reply in replies:
            if reply["type"] == "server_target":
                current_target = reply["payload"]["target_index"]
            elif reply["type"] == "server_complete":
                done = True
        if done:
            break
    return proto, transcript


def write_transcript(transcript, path) -> None:
    with open(path, "w") as fh:
        for entry in transcript:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


class ServiceClient:
    """Minimal blocking client for tests, scripts, and transcripts."""

    def __init__(self, address, session_id: str = ""):
        self.sock = socket.create_connection(address)
        self.rfile = self.sock.makefile("rb")
        self.session_id = session_id
        self.seq = 0

    def send(self, msg_type: str, payload: dict | None = None) -> dict:
        self.seq += 1
        message = make_message(msg_type, self.session_id, self.seq, payload)
        self.sock.sendall(encode_frame(message))
        return message

    def recv(self) -> dict:
        frame = read_frame(self.rfile)
        if frame is None:
            raise ConnectionError("server closed the connection")
        return frame

    def hello(self) -> dict:
        """Open the session; adopts the server-assigned session id."""
        self.send("client_hello")
        reply = self.recv()
        self.session_id = reply["session_id"]
        return reply

    def close(self):
        self.sock.close()
