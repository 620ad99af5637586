"""Run configuration for the two training phases.

Stock defaults are the full-scale recipe: the supervised phase trains 4
epochs at batch 8 and lr 1e-6, the preference phase 2 epochs at batch 16
and lr 1e-7, both under a cosine schedule with 0.1 warmup. At tiny scale
the learning rate is the one knob that must be rescaled; everything else
carries over.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import ConfigError

PHASE_IMAO = "imao"
PHASE_MAAO = "maao"

Z0_SUPPLIED = "supplied"
Z0_SHIFTED_PAIRS = "shifted_pairs"

# (epochs, batch_size, learning_rate) per phase; warmup and scheduler are shared.
_PHASE_DEFAULTS = {
    PHASE_IMAO: (4, 8, 1e-6),
    PHASE_MAAO: (2, 16, 1e-7),
}


def format_hparam(value) -> str:
    """Render a hyperparameter for the recipe printout: plain decimals stay
    plain, scientific notation drops the zero-padded exponent (1e-06 prints
    as 1e-6)."""
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, float):
        text = f"{value:g}"
        if "e" in text:
            mantissa, exponent = text.split("e")
            return f"{mantissa}e{int(exponent)}"
        return text
    return str(value)


def lambda_scale(
    n_desirable: int, n_undesirable: int, target: Fraction = Fraction(4, 3)
) -> Fraction:
    """Desirable-side weight that balances the label counts at the target
    total-weight ratio, with the undesirable weight fixed at 1. Exact."""
    if n_desirable <= 0 or n_undesirable <= 0:
        raise ConfigError("lambda scaling needs both labels counted")
    return target * Fraction(n_undesirable, n_desirable)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one run. Construct with just the phase to get the
    stock recipe; pass any field to override it."""

    phase: str
    epochs: int | None = None
    batch_size: int | None = None
    learning_rate: float | None = None
    scheduler: str = "cosine"
    warmup_ratio: float = 0.1
    beta: float = 0.1
    lambda_ratio_target: Fraction = Fraction(4, 3)
    model_preset: str = "tiny"
    z0_mode: str = Z0_SUPPLIED
    z0: float = 0.0
    allow_single_label: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.phase not in _PHASE_DEFAULTS:
            raise ConfigError(f"unknown phase {self.phase!r}")
        epochs, batch, lr = _PHASE_DEFAULTS[self.phase]
        if self.epochs is None:
            object.__setattr__(self, "epochs", epochs)
        if self.batch_size is None:
            object.__setattr__(self, "batch_size", batch)
        if self.learning_rate is None:
            object.__setattr__(self, "learning_rate", lr)
        if self.scheduler != "cosine":
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError("warmup ratio must be in [0, 1)")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.lambda_ratio_target <= 0:
            raise ConfigError("lambda ratio target must be positive")
        if self.z0_mode not in (Z0_SUPPLIED, Z0_SHIFTED_PAIRS):
            raise ConfigError(f"unknown z0 mode {self.z0_mode!r}")
        if self.z0 < 0:
            raise ConfigError("z0 must be >= 0")

    def describe(self) -> str:
        """The recipe as printable key/value lines, byte-stable."""
        rows = [
            ("phase", self.phase),
            ("epochs", self.epochs),
            ("batch size", self.batch_size),
            ("learning rate", format_hparam(self.learning_rate)),
            ("learning rate scheduler", self.scheduler),
            ("warmup ratio", format_hparam(self.warmup_ratio)),
        ]
        if self.phase == PHASE_MAAO:
            rows.append(("beta", format_hparam(self.beta)))
            rows.append(("lambda ratio target", format_hparam(self.lambda_ratio_target)))
        return "\n".join(f"{key}: {value}" for key, value in rows)

    def to_json_dict(self) -> dict:
        return {
            "phase": self.phase,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "scheduler": self.scheduler,
            "warmup_ratio": self.warmup_ratio,
            "beta": self.beta,
            "lambda_ratio_target": str(self.lambda_ratio_target),
            "model_preset": self.model_preset,
            "z0_mode": self.z0_mode,
            "z0": self.z0,
            "allow_single_label": self.allow_single_label,
            "seed": self.seed,
        }
