"""Seq2seq adapter smoke tests against a tiny locally built checkpoint."""

import sys
from pathlib import Path

import pytest

torch = pytest.importorskip("torch")
transformers = pytest.importorskip("transformers")

from taskstream.external import ExternalLearner
from taskstream.learner import Hyper, TrainExample, TrainPhase

WORKER = Path(__file__).resolve().parents[1] / "src" / "bridgeworker" / "worker.py"
HYPER = Hyper(learning_rate=5e-4, epochs=2, batch_size=2, max_input_tokens=32)


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import BartConfig, BartForConditionalGeneration, PreTrainedTokenizerFast

    words = ["<pad>", "<s>", "</s>", "<unk>"]
    words += [f"w{i}" for i in range(30)]
    words += ["[Input]", "[Title]", "[Definition]", "t", "d"]
    vocab = {w: i for i, w in enumerate(words)}
    tok = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.WhitespaceSplit()
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        pad_token="<pad>", bos_token="<s>", eos_token="</s>", unk_token="<unk>",
    )
    config = BartConfig(
        vocab_size=len(vocab), d_model=32,
        encoder_layers=1, decoder_layers=1,
        encoder_attention_heads=2, decoder_attention_heads=2,
        encoder_ffn_dim=64, decoder_ffn_dim=64,
        max_position_embeddings=64,
        pad_token_id=vocab["<pad>"], bos_token_id=vocab["<s>"],
        eos_token_id=vocab["</s>"], decoder_start_token_id=vocab["<s>"],
    )
    torch.manual_seed(0)
    model = BartForConditionalGeneration(config)
    target = tmp_path_factory.mktemp("checkpoint")
    model.save_pretrained(target)
    tokenizer.save_pretrained(target)
    return target


def _command(tmp_path, checkpoint):
    return [
        sys.executable, str(WORKER),
        "--learner", "seq2seq",
        "--model", str(checkpoint),
        "--state-dir", str(tmp_path / "state"),
        "--seed", "0",
    ]


def _batch(n=2):
    return [
        TrainExample(
            encoder_text=f"[Input] w{i} w{i + 1} [Title] t [Definition] d",
            target_text=f"w{i + 2} w{i + 3}",
            origin="instruction_example",
            task_id="task0",
        )
        for i in range(n)
    ]


PROBE = ["[Input] w0 w1 [Title] t [Definition] d", "[Input] w5 [Title] t [Definition] d"]


def test_hello_and_greedy_predict_deterministic(tmp_path, checkpoint):
    with ExternalLearner(_command(tmp_path, checkpoint)) as remote:
        assert remote.worker_name == "seq2seq"
        first = remote.predict(PROBE)
        second = remote.predict(PROBE)
        assert first == second
        assert len(first) == 2


def test_train_changes_then_restore_recovers_behavior(tmp_path, checkpoint):
    with ExternalLearner(_command(tmp_path, checkpoint)) as remote:
        token = remote.snapshot()
        baseline = remote.predict(PROBE)
        remote.train(_batch(), TrainPhase.TASK_POSITIVE, HYPER)
        remote.restore(token)
        assert remote.predict(PROBE) == baseline

        remote.train([], TrainPhase.TASK_POSITIVE, HYPER)  # empty batch is a no-op
        assert remote.predict(PROBE) == baseline


def test_identical_train_sequences_are_deterministic(tmp_path, checkpoint):
    outputs = []
    for run in range(2):
        with ExternalLearner(_command(tmp_path / f"run{run}", checkpoint)) as remote:
            remote.train(_batch(), TrainPhase.TASK_NEGATIVE, HYPER)
            remote.train(_batch(4), TrainPhase.TASK_POSITIVE, HYPER)
            outputs.append(remote.predict(PROBE))
    assert outputs[0] == outputs[1]
