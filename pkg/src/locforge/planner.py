"""Training-stage plans and the high-resolution token/shape calculus.

The three-stage schedule is emitted as declarative, machine-checkable
plans (what is trainable, learning rates, sharding, sequence budget,
data routing); this toolkit never launches training. The shape calculus
covers patch-grid token counts, the down-sampling convolution output
size, and position-embedding grid interpolation for resolution changes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import DegenerateGridError, NotDivisibleError, UnknownScaleError
from .model import TaskKind


class Stage(enum.Enum):
    ALIGN_INIT = "align_init"
    PRE_ADAPT = "pre_adapt"
    INSTRUCT_TUNE = "instruct_tune"


class Trainable(enum.Enum):
    PROJECTOR = "projector"
    VISUAL_ENCODER = "visual_encoder"
    LLM = "llm"
    VISUAL_TOKENIZER_PROJECTOR = "visual_tokenizer_projector"


ROUTE_MAIN = "main"
ROUTE_VISUAL_TOKENIZER_PROJECTOR = "visual_tokenizer_projector"

MODEL_SCALES = ("7B", "9B", "13B", "27B")

_CORE_TRAINABLE = frozenset(
    {Trainable.PROJECTOR, Trainable.VISUAL_ENCODER, Trainable.LLM}
)


@dataclass(frozen=True)
class StagePlan:
    stage: Stage
    trainable: frozenset[Trainable]
    base_lr: float
    encoder_lr_scale: float
    sharding_level: str
    max_len: int
    warmup_ratio: float
    schedule: str = "cosine"
    epochs: int = 1
    batch_size: int = 256
    data_routes: Mapping[str, str] = field(default_factory=dict)

    @property
    def encoder_lr(self) -> float:
        return self.base_lr * self.encoder_lr_scale

    def as_dict(self) -> dict[str, object]:
        return {
            "stage": self.stage.value,
            "trainable": sorted(t.value for t in self.trainable),
            "base_lr": self.base_lr,
            "encoder_lr_scale": self.encoder_lr_scale,
            "encoder_lr": self.encoder_lr,
            "sharding_level": self.sharding_level,
            "max_len": self.max_len,
            "warmup_ratio": self.warmup_ratio,
            "schedule": self.schedule,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "data_routes": dict(self.data_routes),
        }


_INSTRUCTION_KINDS = (
    TaskKind.LANGUAGE_ONLY,
    TaskKind.VL_INSTRUCTION,
    TaskKind.CAPTION,
    TaskKind.GENERAL_VQA,
    TaskKind.SCENE_TEXT_VQA,
    TaskKind.DOC_VQA,
    TaskKind.DETECTION,
    TaskKind.REC,
    TaskKind.GROUNDING,
    TaskKind.REG,
    TaskKind.COUNTING,
)


def default_plans(scale: str, halve_stage1_for_largest: bool = False) -> list[StagePlan]:
    """The reference three-stage schedule for a given model scale.

    The largest (27B) scale halves the stage-2/3 base learning rate;
    whether the halving also covers stage 1 is exposed as an override
    and off by default.
    """
    if scale not in MODEL_SCALES:
        raise UnknownScaleError(f"unknown model scale {scale!r}; expected one of {MODEL_SCALES}")
    halve = scale == "27B"
    stage1_lr = 1e-3 / 2 if (halve and halve_stage1_for_largest) else 1e-3
    late_lr = 2e-5 / 2 if halve else 2e-5

    align = StagePlan(
        stage=Stage.ALIGN_INIT,
        trainable=frozenset({Trainable.PROJECTOR}),
        base_lr=stage1_lr,
        encoder_lr_scale=1.0,
        sharding_level="zero2",
        max_len=2048,
        warmup_ratio=0.3,
        data_routes={TaskKind.CAPTION.value: ROUTE_MAIN},
    )
    pre_adapt = StagePlan(
        stage=Stage.PRE_ADAPT,
        trainable=_CORE_TRAINABLE,
        base_lr=late_lr,
        encoder_lr_scale=1.0,
        sharding_level="zero3",
        max_len=4096,
        warmup_ratio=0.3,
        data_routes={
            TaskKind.REC.value: ROUTE_MAIN,
            TaskKind.REG.value: ROUTE_MAIN,
            TaskKind.DETECTION.value: ROUTE_MAIN,
            TaskKind.LANGUAGE_ONLY.value: ROUTE_MAIN,
        },
    )
    instruct = StagePlan(
        stage=Stage.INSTRUCT_TUNE,
        trainable=_CORE_TRAINABLE | {Trainable.VISUAL_TOKENIZER_PROJECTOR},
        base_lr=late_lr,
        encoder_lr_scale=0.1,
        sharding_level="zero3",
        max_len=4096,
        warmup_ratio=0.3,
        data_routes={
            kind.value: (
                ROUTE_VISUAL_TOKENIZER_PROJECTOR
                if kind is TaskKind.COUNTING
                else ROUTE_MAIN
            )
            for kind in _INSTRUCTION_KINDS
        },
    )
    return [align, pre_adapt, instruct]


VIOLATION_ALIGN_TRAINS_PROJECTOR_ONLY = "AlignInit trains exactly Projector"
VIOLATION_PREADAPT_EXCLUDES_TOKENIZER = (
    "PreAdapt trains everything except visual tokenizer parts"
)
VIOLATION_INSTRUCT_COUNTING_ROUTE = (
    "InstructTune routes Counting samples (and only those) to "
    "VisualTokenizerProjector updates"
)
VIOLATION_WARMUP_RANGE = "warmup_ratio must lie in (0, 1)"
VIOLATION_EPOCHS = "epochs must be >= 1"


def validate_plan(plan: StagePlan) -> list[str]:
    """Structural checks; returns the violated clauses (empty when valid)."""
    violations = []
    if plan.stage is Stage.ALIGN_INIT:
        if plan.trainable != frozenset({Trainable.PROJECTOR}):
            violations.append(VIOLATION_ALIGN_TRAINS_PROJECTOR_ONLY)
    elif plan.stage is Stage.PRE_ADAPT:
        if plan.trainable != _CORE_TRAINABLE:
            violations.append(VIOLATION_PREADAPT_EXCLUDES_TOKENIZER)
    else:
        routed_to_tokenizer = {
            kind
            for kind, dest in plan.data_routes.items()
            if dest == ROUTE_VISUAL_TOKENIZER_PROJECTOR
        }
        if (
            routed_to_tokenizer != {TaskKind.COUNTING.value}
            or Trainable.VISUAL_TOKENIZER_PROJECTOR not in plan.trainable
        ):
            violations.append(VIOLATION_INSTRUCT_COUNTING_ROUTE)
    if not 0.0 < plan.warmup_ratio < 1.0:
        violations.append(VIOLATION_WARMUP_RANGE)
    if plan.epochs < 1:
        violations.append(VIOLATION_EPOCHS)
    return violations


# ---------------------------------------------------------------------------
# shape calculus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShapeSpec:
    encoder_res: int
    patch: int
    pretrain_res: int = 336
    kernel: int = 3
    stride: int = 2
    padding: int = 1

    def summary(self) -> dict[str, object]:
        grids = {
            res: patch_grid(res, self.patch)
            for res in sorted({self.pretrain_res, self.encoder_res})
        }
        side, tokens = grids[self.encoder_res]
        out_side, out_tokens = conv_tokens(side, self.kernel, self.stride, self.padding)
        return {
            "patch": self.patch,
            "grids": {
                str(res): {"side": s, "tokens": t} for res, (s, t) in grids.items()
            },
            "connector": {
                "kernel": self.kernel,
                "stride": self.stride,
                "padding": self.padding,
                "out_side": out_side,
                "out_tokens": out_tokens,
            },
        }


def patch_grid(res: int, patch: int) -> tuple[int, int]:
    """Patch-grid side and token count for a square input resolution."""
    if patch <= 0:
        raise ValueError(f"patch must be positive, got {patch}")
    if res % patch != 0:
        raise NotDivisibleError(f"resolution {res} not divisible by patch {patch}")
    side = res // patch
    return side, side * side


def conv_tokens(in_side: int, kernel: int, stride: int, padding: int) -> tuple[int, int]:
    """Output side and token count of the down-sampling convolution."""
    if in_side < kernel:
        raise ValueError(f"input side {in_side} smaller than kernel {kernel}")
    out = (in_side + 2 * padding - kernel) // stride + 1
    return out, out * out


def _source_positions(src_side: int, dst_side: int, mode: str) -> np.ndarray:
    idx = np.arange(dst_side, dtype=float)
    if mode == "corner":
        return idx * (src_side - 1) / (dst_side - 1)
    if mode == "half_pixel":
        pos = (idx + 0.5) * src_side / dst_side - 0.5
        return np.clip(pos, 0.0, src_side - 1)
    raise ValueError(f"unknown interpolation mode {mode!r}")


def interpolate_pos_grid(
    grid: np.ndarray, dst_side: int, mode: str = "corner"
) -> np.ndarray:
    """Bilinearly resample a square grid of embedding vectors.

    The default mapping is corner-aligned (destination index i reads
    source coordinate i*(S-1)/(D-1)), which keeps the four corner
    embeddings bit-identical; ``half_pixel`` is the alternative
    convention. A class token held outside the grid needs no
    interpolation and should simply be reused as is.
    """
    src = np.asarray(grid, dtype=float)
    if src.ndim == 2:
        src = src[:, :, None]
        squeeze = True
    else:
        squeeze = False
    if src.ndim != 3 or src.shape[0] != src.shape[1]:
        raise ValueError(f"expected a square (S, S, D) grid, got {src.shape}")
    src_side = src.shape[0]
    if src_side < 2 or dst_side < 2:
        raise DegenerateGridError(
            f"grid sides must be >= 2 (src {src_side}, dst {dst_side})"
        )
    if dst_side == src_side:
        out = src.copy()
    else:
        pos = _source_positions(src_side, dst_side, mode)
        lo = np.minimum(np.floor(pos).astype(int), src_side - 2)
        frac = pos - lo
        rows = src[lo] * (1 - frac)[:, None, None] + src[lo + 1] * frac[:, None, None]
        out = (
            rows[:, lo] * (1 - frac)[None, :, None]
            + rows[:, lo + 1] * frac[None, :, None]
        )
    return out[:, :, 0] if squeeze else out


def interpolate_with_class_token(
    pos_grid: np.ndarray,
    class_token: Optional[np.ndarray],
    dst_side: int,
    mode: str = "corner",
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Resample the position grid; the class token passes through unchanged."""
    return interpolate_pos_grid(pos_grid, dst_side, mode), class_token
