"""Multi-task facial attribute learning.

One shared-trunk CNN predicts emotion, gender, race and age from 50x50
grayscale faces, trained with a weighted sum of per-head masked
cross-entropies, plateau learning-rate reduction and early stopping.
"""

from .data import (
    Batch,
    DatasetSplit,
    LabeledExample,
    batches,
    encode_labels,
    load_cache,
    load_fer_csv,
    load_rafdb,
    one_hot,
    save_cache,
    split,
)
from .heads import CLASS_NAMES, HEAD_ORDER, HEAD_SIZES
from .layers import softmax
from .losses import LossWeights, accuracy, cce, weighted_total_loss
from .model import (
    HeadOutputs,
    LayerSpec,
    Model,
    ModelConfig,
    build_model,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .preprocess import (
    EyePair,
    PreprocessConfig,
    normalize_pixels,
    pose_normalize,
    preprocess_image,
    read_pnm,
    resize_bilinear,
    to_grayscale,
    write_pnm,
)
from .tensor import matmul, rng_uniform, seeded_rng
from .trainer import (
    AdamState,
    CallbackState,
    EarlyStopConfig,
    PlateauConfig,
    TrainConfig,
    TrainHistory,
    adam_step,
    early_stopping,
    evaluate,
    reduce_on_plateau,
    train,
)

__version__ = "0.1.0"
