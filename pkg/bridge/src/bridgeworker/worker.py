"""Learner worker speaking one JSON object per line over stdin/stdout.

See docs/protocol.md in the harness repository for the wire schema. The
worker answers requests lock-step, echoing each request id exactly once;
snapshots persist under --state-dir so a freshly spawned worker (a clone)
can restore a sibling's token. The built-in echo learner needs only the
standard library; --learner seq2seq loads the optional adapter.
"""

from __future__ import annotations

import argparse
import json
import sys
import uuid
from pathlib import Path

PROTOCOL_VERSION = 1

TRAIN_PHASES = {
    "pretrain_positive_s",
    "pretrain_negative_s",
    "finetune_positive_s",
    "history_replay",
    "task_negative",
    "task_positive",
}

_INPUT_PREFIX = "[Input] "
_TAGS_AFTER_INPUT = ("[Title]", "[Prompt]", "[Definition]", "[Avoid]", "[Caution]")


def input_segment(encoder_text: str) -> str:
    """Raw text of the leading [Input] segment, per the harness template."""
    if not encoder_text.startswith(_INPUT_PREFIX):
        return ""
    body = encoder_text[len(_INPUT_PREFIX):]
    cut = len(body)
    for tag in _TAGS_AFTER_INPUT:
        pos = body.find(tag)
        if pos != -1 and pos < cut:
            cut = pos
    return body[:cut].rstrip()


class RequestError(ValueError):
    """Invalid request payload; reported as error_type invalid_argument."""


class EchoModel:
    """Reference learner: ignores training, predicts the [Input] segment."""

    name = "echo"

    def __init__(self, state_dir: Path) -> None:
        self.state_dir = state_dir

    def train(self, examples: list[dict], phase: str, hyper: dict) -> int:
        return len(examples)

    def predict(self, encoder_texts: list[str]) -> list[str]:
        return [input_segment(t) for t in encoder_texts]

    def snapshot(self, token: str) -> None:
        path = self.state_dir / f"{token}.json"
        path.write_text(json.dumps({"learner": self.name}), encoding="utf-8")

    def restore(self, token: str) -> None:
        path = self.state_dir / f"{token}.json"
        if not path.is_file():
            raise RequestError(f"unknown snapshot token: {token}")


class Worker:
    def __init__(self, model) -> None:
        self.model = model
        self.running = True

    def handle(self, request: dict) -> dict:
        op = request.get("op")
        if op == "hello":
            if request.get("version") != PROTOCOL_VERSION:
                raise RequestError(
                    f"unsupported protocol version: {request.get('version')!r}"
                )
            return {"version": PROTOCOL_VERSION, "learner": self.model.name}
        if op == "train":
            examples = request.get("examples")
            phase = request.get("phase")
            hyper = request.get("hyper", {})
            if not isinstance(examples, list):
                raise RequestError("train needs an examples list")
            if phase not in TRAIN_PHASES:
                raise RequestError(f"unknown train phase: {phase!r}")
            for ex in examples:
                if not isinstance(ex, dict) or not ex.get("encoder_text"):
                    raise RequestError("every example needs a non-empty encoder_text")
            trained = self.model.train(examples, phase, hyper)
            return {"trained": trained}
        if op == "predict":
            texts = request.get("encoder_texts")
            if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
                raise RequestError("predict needs a list of encoder_texts")
            return {"outputs": self.model.predict(texts)}
        if op == "snapshot":
            token = f"snap-{uuid.uuid4().hex}"
            self.model.snapshot(token)
            return {"token": token}
        if op == "restore":
            token = request.get("token")
            if not isinstance(token, str) or not token:
                raise RequestError("restore needs a token string")
            try:
                self.model.restore(token)
            except ValueError as exc:
                raise RequestError(str(exc)) from exc
            return {}
        if op == "shutdown":
            self.running = False
            return {}
        raise RequestError(f"unknown op: {op!r}")


def serve(worker: Worker, stdin=None, stdout=None) -> None:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        request_id = None
        op = None
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise RequestError("request must be a JSON object")
            request_id = request.get("id")
            op = request.get("op")
            response = {"id": request_id, "ok": True, **worker.handle(request)}
        except RequestError as exc:
            response = {
                "id": request_id,
                "ok": False,
                "error": str(exc),
                "error_type": "invalid_argument",
            }
        except json.JSONDecodeError as exc:
            response = {
                "id": None,
                "ok": False,
                "error": f"malformed request line: {exc}",
                "error_type": "invalid_argument",
            }
        except Exception as exc:  # keep serving; the client decides what to do
            response = {
                "id": request_id,
                "ok": False,
                "error": f"{type(exc).__name__}: {exc}",
                "error_type": "internal",
            }
            if op == "hello":
                # A learner that cannot come up (e.g. missing checkpoint)
                # is fatal at the handshake.
                worker.running = False
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()
        if not worker.running:
            break


def _build_model(args: argparse.Namespace, state_dir: Path):
    if args.learner == "echo":
        return EchoModel(state_dir)
    if args.learner == "seq2seq":
        # Import lazily so the echo worker stays dependency-free; support both
        # package and bare-script execution.
        try:
            from .seq2seq import Seq2SeqModel
        except ImportError:
            sys.path.insert(0, str(Path(__file__).resolve().parent))
            from seq2seq import Seq2SeqModel
        return Seq2SeqModel(
            checkpoint=args.model, state_dir=state_dir, seed=args.seed
        )
    raise ValueError(f"unknown learner: {args.learner!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bridgeworker")
    parser.add_argument("--learner", choices=("echo", "seq2seq"), default="echo")
    parser.add_argument("--state-dir", required=True, help="shared snapshot directory")
    parser.add_argument("--model", help="local checkpoint directory (seq2seq)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    state_dir = Path(args.state_dir)
    state_dir.mkdir(parents=True, exist_ok=True)

    class _Deferred:
        """Defers model construction to hello so load errors are fatal there."""

        def __init__(self) -> None:
            self._model = None

        def _ready(self):
            if self._model is None:
                self._model = _build_model(args, state_dir)
            return self._model

        @property
        def name(self):
            return self._ready().name

        def train(self, *a):
            return self._ready().train(*a)

        def predict(self, *a):
            return self._ready().predict(*a)

        def snapshot(self, *a):
            return self._ready().snapshot(*a)

        def restore(self, *a):
            return self._ready().restore(*a)

    worker = Worker(_Deferred())
    serve(worker)
    return 0


if __name__ == "__main__":
    sys.exit(main())
