"""Client for external learner workers speaking the line-delimited wire protocol.

The worker is any subprocess that implements docs/protocol.md: one JSON object
per line over stdin/stdout, lock-step, responses echoing the request id.
Cloning spawns a fresh worker from the same command and replays a snapshot
token, so the command must pin a persistent state directory for clones to
find their parent's snapshots.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import asdict
from typing import Sequence

from .learner import (
    Hyper,
    LearnerHandle,
    LearnerUnavailableError,
    SnapshotToken,
    TrainExample,
    TrainPhase,
)

PROTOCOL_VERSION = 1


class ExternalLearner(LearnerHandle):
    kind = "external"

    def __init__(self, command: Sequence[str], *, transcript: list | None = None) -> None:
        if not command:
            raise ValueError("external learner needs a non-empty worker command")
        self._command = tuple(command)
        self._next_id = 0
        self._closed = False
        # Optional (request_id, response_id) log for protocol tests.
        self.transcript = transcript
        try:
            self._proc = subprocess.Popen(
                self._command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise LearnerUnavailableError(f"cannot spawn worker {self._command}: {exc}") from exc
        try:
            hello = self._request("hello", version=PROTOCOL_VERSION)
        except ValueError as exc:
            # A rejected handshake means the worker is unusable, whatever the
            # error type it reported.
            self.close()
            raise LearnerUnavailableError(f"handshake rejected: {exc}") from exc
        except LearnerUnavailableError:
            self.close()
            raise
        if hello.get("version") != PROTOCOL_VERSION:
            self.close()
            raise LearnerUnavailableError(
                f"worker speaks protocol {hello.get('version')!r}, need {PROTOCOL_VERSION}"
            )
        self.worker_name = str(hello.get("learner", "unknown"))

    # -- wire plumbing -----------------------------------------------------

    def _request(self, op: str, **payload: object) -> dict:
        if self._closed:
            raise LearnerUnavailableError("worker already shut down")
        request_id = self._next_id
        self._next_id += 1
        message = {"id": request_id, "op": op, **payload}
        assert self._proc.stdin is not None and self._proc.stdout is not None
        try:
            self._proc.stdin.write(json.dumps(message) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except (OSError, ValueError) as exc:
            raise LearnerUnavailableError(f"worker transport failed: {exc}") from exc
        if not line:
            raise LearnerUnavailableError("worker closed its output stream")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LearnerUnavailableError(f"unparseable worker response: {line!r}") from exc
        if self.transcript is not None:
            self.transcript.append((request_id, response.get("id")))
        if response.get("id") != request_id:
            raise LearnerUnavailableError(
                f"response id {response.get('id')!r} does not match request {request_id}"
            )
        if not response.get("ok", False):
            error = str(response.get("error", "unspecified worker error"))
            if response.get("error_type") == "invalid_argument":
                raise ValueError(error)
            raise LearnerUnavailableError(error)
        return response

    # -- learner contract ----------------------------------------------------

    def train(self, batch: Sequence[TrainExample], phase: TrainPhase, hyper: Hyper) -> None:
        self._request(
            "train",
            phase=phase.value,
            hyper=asdict(hyper),
            examples=[asdict(ex) for ex in batch],
        )

    def predict(self, encoder_texts: Sequence[str]) -> list[str]:
        response = self._request("predict", encoder_texts=list(encoder_texts))
        outputs = response.get("outputs")
        if not isinstance(outputs, list) or len(outputs) != len(encoder_texts):
            raise LearnerUnavailableError("worker returned a malformed outputs list")
        return [str(o) for o in outputs]

    def snapshot(self) -> SnapshotToken:
        response = self._request("snapshot")
        token = response.get("token")
        if not isinstance(token, str) or not token:
            raise LearnerUnavailableError("worker returned a malformed snapshot token")
        return SnapshotToken(token)

    def restore(self, token: SnapshotToken) -> None:
        self._request("restore", token=token.value)

    def clone(self) -> "ExternalLearner":
        token = self.snapshot()
        sibling = ExternalLearner(self._command, transcript=self.transcript)
        sibling.restore(token)
        return sibling

    def _capture(self) -> object:
        raise NotImplementedError("external learners snapshot through the worker")

    def _apply(self, state: object) -> None:
        raise NotImplementedError("external learners restore through the worker")

    # -- lifecycle -----------------------------------------------------------

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            if self._proc.poll() is None and self._proc.stdin is not None:
                self._proc.stdin.write(
                    json.dumps({"id": self._next_id, "op": "shutdown"}) + "\n"
                )
                self._proc.stdin.flush()
        except (OSError, ValueError):
            pass
        try:
            self._proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self) -> "ExternalLearner":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass
