"""Optional encoder-decoder adapter backed by a local transformers checkpoint.

Training runs the requested phase with the supplied hyperparameters; decoding
is greedy, and all randomness is seeded, so a fixed request sequence yields
identical outputs. Snapshots are full checkpoints under the shared state
directory, which is what lets a freshly spawned worker restore them.
"""

from __future__ import annotations

from pathlib import Path


class Seq2SeqModel:
    name = "seq2seq"

    def __init__(self, checkpoint: str | None, state_dir: Path, seed: int = 0) -> None:
        if not checkpoint:
            raise ValueError("seq2seq learner needs --model pointing at a local checkpoint")
        if not Path(checkpoint).is_dir():
            raise ValueError(f"checkpoint directory not found: {checkpoint}")
        import torch
        from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

        self._torch = torch
        torch.manual_seed(seed)
        torch.set_num_threads(1)
        self.state_dir = state_dir
        self.seed = seed
        self._train_calls = 0
        self.tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        self.model = AutoModelForSeq2SeqLM.from_pretrained(checkpoint)
        self.model.eval()

    # -- helpers -------------------------------------------------------------

    def _encode_inputs(self, texts: list[str], max_tokens: int):
        limit = min(max_tokens, self.model.config.max_position_embeddings - 2)
        return self.tokenizer(
            texts,
            padding=True,
            truncation=True,
            max_length=max(2, limit),
            add_special_tokens=False,
            return_tensors="pt",
        )

    def _encode_labels(self, targets: list[str], max_tokens: int = 32):
        eos = self.tokenizer.eos_token_id
        rows = []
        for target in targets:
            ids = self.tokenizer(target, add_special_tokens=False).input_ids[: max_tokens - 1]
            rows.append(ids + [eos])
        width = max(len(r) for r in rows)
        padded = [r + [-100] * (width - len(r)) for r in rows]
        return self._torch.tensor(padded, dtype=self._torch.long)

    # -- learner ops -----------------------------------------------------------

    def train(self, examples: list[dict], phase: str, hyper: dict) -> int:
        if not examples:
            return 0
        torch = self._torch
        lr = float(hyper.get("learning_rate", 5e-5))
        epochs = int(hyper.get("epochs", 3))
        batch_size = max(1, int(hyper.get("batch_size", 2)))
        max_tokens = int(hyper.get("max_input_tokens", 1024))

        self._train_calls += 1
        torch.manual_seed(self.seed + self._train_calls)
        optimizer = torch.optim.AdamW(self.model.parameters(), lr=lr)
        self.model.train()
        for _ in range(epochs):
            for start in range(0, len(examples), batch_size):
                chunk = examples[start : start + batch_size]
                enc = self._encode_inputs([ex["encoder_text"] for ex in chunk], max_tokens)
                labels = self._encode_labels([ex.get("target_text", "") for ex in chunk])
                loss = self.model(**enc, labels=labels).loss
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
        self.model.eval()
        return len(examples)

    def predict(self, encoder_texts: list[str]) -> list[str]:
        if not encoder_texts:
            return []
        torch = self._torch
        enc = self._encode_inputs(encoder_texts, 1024)
        with torch.no_grad():
            generated = self.model.generate(
                **enc,
                max_new_tokens=32,
                num_beams=1,
                do_sample=False,
                pad_token_id=self.tokenizer.pad_token_id,
            )
        return [
            text.strip()
            for text in self.tokenizer.batch_decode(generated, skip_special_tokens=True)
        ]

    def snapshot(self, token: str) -> None:
        target = self.state_dir / token
        self.model.save_pretrained(target)
        self.tokenizer.save_pretrained(target)

    def restore(self, token: str) -> None:
        source = self.state_dir / token
        if not source.is_dir():
            raise ValueError(f"unknown snapshot token: {token}")
        from transformers import AutoModelForSeq2SeqLM

        self.model = AutoModelForSeq2SeqLM.from_pretrained(source)
        self.model.eval()
