"""Decoder-only transformer at desk scale.

The tiny preset lands around two million parameters: big enough to overfit
a fixture corpus in seconds on a CPU, small enough that a full test run
never needs an accelerator. The test preset is smaller still for unit
tests. Anything larger is user-supplied configuration, not this module's
business.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .errors import ConfigError
from .tokenizer import VOCAB_SIZE


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    n_heads: int
    n_layers: int
    d_ff: int
    max_seq_len: int
    vocab_size: int = VOCAB_SIZE

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must divide evenly into heads")

    def to_json_dict(self) -> dict:
        return asdict(self)


MODEL_PRESETS = {
    "tiny": ModelConfig(d_model=192, n_heads=4, n_layers=4, d_ff=768, max_seq_len=512),
    "test": ModelConfig(d_model=64, n_heads=2, n_layers=2, d_ff=128, max_seq_len=256),
}


def preset(name: str) -> ModelConfig:
    try:
        return MODEL_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown model preset {name!r}") from None


class Block(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.attn = nn.Linear(config.d_model, 3 * config.d_model)
        self.proj = nn.Linear(config.d_model, config.d_model)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(config.d_model, config.d_ff),
            nn.GELU(),
            nn.Linear(config.d_ff, config.d_model),
        )
        self.n_heads = config.n_heads

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, width = x.shape
        head_dim = width // self.n_heads
        q, k, v = self.attn(self.ln1(x)).split(width, dim=-1)
        q = q.view(batch, length, self.n_heads, head_dim).transpose(1, 2)
        k = k.view(batch, length, self.n_heads, head_dim).transpose(1, 2)
        v = v.view(batch, length, self.n_heads, head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(head_dim)
        causal = torch.triu(
            torch.ones(length, length, dtype=torch.bool, device=x.device), diagonal=1
        )
        scores = scores.masked_fill(causal, float("-inf"))
        mixed = torch.softmax(scores, dim=-1) @ v
        mixed = mixed.transpose(1, 2).reshape(batch, length, width)
        x = x + self.proj(mixed)
        return x + self.mlp(self.ln2(x))


class TinyLm(nn.Module):
    """Pre-norm GPT with tied input/output embeddings."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        self.tok_emb = nn.Embedding(config.vocab_size, config.d_model)
        self.pos_emb = nn.Embedding(config.max_seq_len, config.d_model)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        self.ln_f = nn.LayerNorm(config.d_model)
        # narrow init keeps the tied-head logits near uniform at step zero
        nn.init.normal_(self.tok_emb.weight, std=0.02)
        nn.init.normal_(self.pos_emb.weight, std=0.02)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.dim() != 2:
            raise ConfigError("expected a [batch, length] token tensor")
        length = tokens.shape[1]
        if length > self.config.max_seq_len:
            raise ConfigError(
                f"sequence length {length} exceeds model context {self.config.max_seq_len}"
            )
        positions = torch.arange(length, device=tokens.device)
        x = self.tok_emb(tokens) + self.pos_emb(positions)
        for block in self.blocks:
            x = block(x)
        # tied head: logits share the embedding matrix
        return self.ln_f(x) @ self.tok_emb.weight.t()


def build_model(config: ModelConfig, seed: int) -> TinyLm:
    """Seeded construction so two builds share initial weights exactly."""
    generator_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = TinyLm(config)
    finally:
        torch.random.set_rng_state(generator_state)
    return model


def n_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
