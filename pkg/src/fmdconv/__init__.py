"""Dynamic-convolution blocks with speed-accuracy trade-off metrics.

A small float64 tensor substrate with a gradient tape, the fast
multi-attention dynamic convolution block and its baselines, trade-off
metrics (inverse efficiency and rate-correct scores), FLOP/parameter
accounting, and a desk-scale training and ablation harness.
"""

from .tensor import (
    GradientTape,
    ShapeError,
    TapeError,
    Tensor,
    philox_rng,
)
from .gradcheck import finite_diff_gradient, max_relative_error
from .attention import AttentionHead, input_attention, kernel_attention, output_attention
from .layers import (
    CondConv2d,
    DynamicConv2d,
    FMDConv2d,
    KernelBank,
    ODConv2d,
    StaticConv2d,
    VARIANTS,
    build_layer,
    naive_forward_oracle,
)
from .metrics import EpochRecord, TradeoffReport, ies, rcs, timed_run, tradeoff_report
from .counting import LayerSpec, ModelSpec, count_flops, count_params, per_kernel_params
from .catalogs import resnet18_spec, resnet50_spec, tiny_spec
from .data import Dataset, load_dataset, make_synthetic_dataset, save_dataset
from .model import TinyCNN, build_model
from .harness import (
    TemperatureSchedule,
    TrainConfig,
    TrainingDiverged,
    evaluate_topk,
    lr_at,
    run_ablation,
    temperature_at,
    train,
)

__version__ = "0.1.0"
