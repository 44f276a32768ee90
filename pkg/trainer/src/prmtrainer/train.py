"""Fine-tune a causal LM as a two-token step classifier.

The loss for each sample is cross-entropy over the logits of the
configured negative/positive tokens, taken at exactly one position: the
final token of the sample's loss anchor. Every other position is masked
out. Defaults follow the reference recipe: rank-16 adapters with alpha
32 on all linear layers, 3 epochs, learning rate 1e-4, total batch 32.
"""

from __future__ import annotations

import argparse
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch
from torch import nn

from .data import EncodedSample, encode_sample, load_samples
from .errors import TrainerError
from .lora import adapter_state_dict, apply_lora
from .tokenizer import ByteTokenizer

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    sample_path: str
    out_dir: str
    base_model: str = "tiny-debug"
    rank: int = 16
    alpha: float = 32.0
    epochs: int = 3
    learning_rate: float = 1e-4
    total_batch: int = 32
    per_device_batch: int = 8
    pos_token: str = "+"
    neg_token: str = "-"
    seed: int = 0
    max_steps: Optional[int] = None  # cap on optimizer steps, for smoke runs

    def __post_init__(self):
        if self.rank <= 0 or self.alpha <= 0:
            raise ValueError("rank and alpha must be positive")
        if self.total_batch % self.per_device_batch:
            raise ValueError("total_batch must be divisible by per_device_batch")

    @property
    def accumulation_steps(self) -> int:
        return self.total_batch // self.per_device_batch


@dataclass
class TrainResult:
    checkpoint_dir: Path
    trace_path: Path
    loss_trace: list[float] = field(default_factory=list)


def _tiny_debug_model(vocab_size: int):
    """Small randomly initialized causal LM; no downloads involved."""
    from transformers import LlamaConfig, LlamaForCausalLM

    config = LlamaConfig(
        vocab_size=vocab_size,
        hidden_size=64,
        intermediate_size=128,
        num_hidden_layers=2,
        num_attention_heads=4,
        num_key_value_heads=4,
        max_position_embeddings=1024,
    )
    return LlamaForCausalLM(config)


def load_model_and_tokenizer(base_model: str):
    if base_model == "tiny-debug":
        tokenizer = ByteTokenizer()
        return _tiny_debug_model(tokenizer.vocab_size), tokenizer
    from transformers import AutoModelForCausalLM, AutoTokenizer

    hf_tokenizer = AutoTokenizer.from_pretrained(base_model)

    class _HFAdapter:
        pad_token_id = (
            hf_tokenizer.pad_token_id
            if hf_tokenizer.pad_token_id is not None
            else hf_tokenizer.eos_token_id
        )

        def encode(self, text):
            return hf_tokenizer.encode(text, add_special_tokens=False)

        def decode(self, ids):
            ids = [i for i in ids if i != self.pad_token_id]
            return hf_tokenizer.decode(ids)

        def token_id(self, token):
            ids = hf_tokenizer.encode(token, add_special_tokens=False)
            if len(ids) != 1:
                raise ValueError(f"{token!r} does not map to a single token")
            return ids[0]

    return AutoModelForCausalLM.from_pretrained(base_model), _HFAdapter()


def _batches(encoded: list[EncodedSample], batch_size: int, generator: torch.Generator):
    order = torch.randperm(len(encoded), generator=generator).tolist()
    for start in range(0, len(order), batch_size):
        yield [encoded[i] for i in order[start : start + batch_size]]


def _pad_batch(batch: list[EncodedSample], pad_id: int):
    width = max(len(s.input_ids) for s in batch)
    ids = torch.full((len(batch), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(batch), width), dtype=torch.long)
    positions = []
    for row, sample in enumerate(batch):
        n = len(sample.input_ids)
        ids[row, :n] = torch.tensor(sample.input_ids, dtype=torch.long)
        mask[row, :n] = 1
        positions.append(sample.loss_position)
    labels = torch.tensor([s.label for s in batch], dtype=torch.long)
    return ids, mask, torch.tensor(positions, dtype=torch.long), labels


def sample_losses(
    model: nn.Module,
    batch: list[EncodedSample],
    pad_id: int,
    neg_id: int,
    pos_id: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample two-token cross-entropy and the (neg, pos) logit pairs.

    Exactly one token position per sample contributes: the final token of
    its loss anchor.
    """
    ids, mask, positions, labels = _pad_batch(batch, pad_id)
    logits = model(input_ids=ids, attention_mask=mask).logits
    rows = torch.arange(len(batch))
    pair = logits[rows, positions][:, [neg_id, pos_id]]
    losses = nn.functional.cross_entropy(pair, labels, reduction="none")
    return losses, pair


def train(config: TrainConfig, model=None, tokenizer=None) -> TrainResult:
    """Run the fine-tune; returns checkpoint dir, loss trace, and its path."""
    torch.manual_seed(config.seed)
    if model is None or tokenizer is None:
        model, tokenizer = load_model_and_tokenizer(config.base_model)

    samples = load_samples(config.sample_path)
    encoded = [encode_sample(tokenizer, s) for s in samples]
    log.info("loaded %d samples from %s", len(encoded), config.sample_path)

    neg_id = tokenizer.token_id(config.neg_token)
    pos_id = tokenizer.token_id(config.pos_token)
    pad_id = tokenizer.pad_token_id

    adapter_params = apply_lora(model, config.rank, config.alpha)
    optimizer = torch.optim.AdamW(adapter_params, lr=config.learning_rate)
    generator = torch.Generator().manual_seed(config.seed)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / "loss_trace.csv"
    loss_trace: list[float] = []
    step = 0
    done = False

    model.train()
    with trace_path.open("w", encoding="utf-8") as trace:
        trace.write("step,loss\n")
        for epoch in range(config.epochs):
            if done:
                break
            micro = 0
            running = 0.0
            optimizer.zero_grad()
            for batch in _batches(encoded, config.per_device_batch, generator):
                losses, _ = sample_losses(model, batch, pad_id, neg_id, pos_id)
                # scale so accumulated gradients average over the total batch
                loss = losses.sum() / config.total_batch
                loss.backward()
                running += float(losses.detach().sum())
                micro += 1
                if micro % config.accumulation_steps == 0:
                    optimizer.step()
                    optimizer.zero_grad()
                    step += 1
                    mean_loss = running / config.total_batch
                    loss_trace.append(mean_loss)
                    trace.write(f"{step},{mean_loss!r}\n")
                    running = 0.0
                    if config.max_steps is not None and step >= config.max_steps:
                        done = True
                        break

    if not loss_trace:
        raise TrainerError(
            "no optimizer step completed; fewer samples than one total batch"
        )

    checkpoint_dir = out_dir / "checkpoint"
    checkpoint_dir.mkdir(exist_ok=True)
    torch.save(adapter_state_dict(model), checkpoint_dir / "adapter.pt")
    (checkpoint_dir / "train_config.json").write_text(
        json.dumps(
            {
                "base_model": config.base_model,
                "rank": config.rank,
                "alpha": config.alpha,
                "epochs": config.epochs,
                "learning_rate": config.learning_rate,
                "total_batch": config.total_batch,
                "per_device_batch": config.per_device_batch,
                "pos_token": config.pos_token,
                "neg_token": config.neg_token,
                "seed": config.seed,
                "steps": step,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    log.info("wrote checkpoint to %s after %d steps", checkpoint_dir, step)
    return TrainResult(checkpoint_dir=checkpoint_dir, trace_path=trace_path,
                       loss_trace=loss_trace)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="prmtrainer", description="fine-tune a two-token step classifier"
    )
    parser.add_argument("--samples", required=True, help="training-sample JSONL")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--base-model", default="tiny-debug")
    parser.add_argument("--rank", type=int, default=16)
    parser.add_argument("--alpha", type=float, default=32.0)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--lr", type=float, default=1e-4)
    parser.add_argument("--total-batch", type=int, default=32)
    parser.add_argument("--per-device-batch", type=int, default=8)
    parser.add_argument("--pos-token", default="+")
    parser.add_argument("--neg-token", default="-")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-steps", type=int, default=None)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    config = TrainConfig(
        sample_path=args.samples,
        out_dir=args.out,
        base_model=args.base_model,
        rank=args.rank,
        alpha=args.alpha,
        epochs=args.epochs,
        learning_rate=args.lr,
        total_batch=args.total_batch,
        per_device_batch=args.per_device_batch,
        pos_token=args.pos_token,
        neg_token=args.neg_token,
        seed=args.seed,
        max_steps=args.max_steps,
    )
    try:
        result = train(config)
    except TrainerError as exc:
        print(f"error: {type(exc).__name__}: {exc}")
        return 1
    print(f"checkpoint: {result.checkpoint_dir}")
    print(f"loss trace: {result.trace_path} ({len(result.loss_trace)} steps)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
