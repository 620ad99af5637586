"""Desk-scale training bridge for forged dialogue datasets."""

from .config import (
    PHASE_IMAO,
    PHASE_MAAO,
    TrainConfig,
    Z0_SHIFTED_PAIRS,
    Z0_SUPPLIED,
    format_hparam,
    lambda_scale,
)
from .data import (
    BOTH_LABELS_ERROR,
    DESIRABLE,
    UNDESIRABLE,
    PrefExample,
    SftExample,
    collate_mismatched,
    collate_pref,
    collate_sft,
    load_pref_dataset,
    load_sft_dataset,
)
from .errors import ConfigError, DataError, TrainerError
from .model import MODEL_PRESETS, ModelConfig, TinyLm, build_model, n_parameters, preset
from .objectives import (
    estimate_z0,
    masked_nll,
    preference_loss,
    sequence_logprobs,
    token_logprobs,
)
from .tokenizer import (
    EncodedDialogue,
    assistant_targets,
    decode_dialogue,
    encode_dialogue,
    token_weights,
)
from .train import (
    BatchTrace,
    ImaoResult,
    MaaoResult,
    evaluate_sft_loss,
    load_checkpoint,
    save_checkpoint,
    train_imao,
    train_maao,
)
from .verify import MaskReport, MaskViolation, verify_mask_gradients
