"""Style-adaptive diffusion TTS at desk scale.

Pipeline: a transformer text encoder and duration predictor produce
frame-level text representations; dual style encoders disentangle fine
timbre and rhythm features from a reference mel under label plus
orthogonality supervision; text-based timbre cross-attention selects
reference timbre per target frame; a SALN-conditioned WaveNet denoiser
generates the mel through ancestral diffusion sampling.
"""

from .config import TrainConfig, load_config, save_config
from .corpus import (
    CorpusManifest,
    ToyCorpus,
    ToyUtterance,
    corpus_digest,
    generate_corpus,
    load_corpus,
)
from .diffusion import NoiseSchedule, build_schedule, diffusion_loss, forward_sample, saln, sample
from .errors import ConfigError, DataFormatError, NumericalError, StyleDiffError
from .etnet import ETNet, coarse_orthogonality, fine_orthogonality, pool
from .evaluate import (
    EvalReport,
    Evaluator,
    ablate,
    evaluate_ground_truth,
    evaluate_model,
    load_evaluator,
    save_evaluator,
    train_evaluator,
)
from .mel import MelSpectrogram, NormStats, denormalize, normalize, read_mel, write_mel
from .model import AdaptiveStyleTTS
from .tca import (
    TimbreCrossAttention,
    shared_phoneme_attention_score,
    uniform_attention_base_rate,
)
from .text import TextEncoder, duration_loss, export_durations, length_regulate
from .training import (
    Trainer,
    create_trainer,
    load_checkpoint,
    model_from_checkpoint,
    restore_trainer,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveStyleTTS",
    "ConfigError",
    "CorpusManifest",
    "DataFormatError",
    "ETNet",
    "EvalReport",
    "Evaluator",
    "MelSpectrogram",
    "NoiseSchedule",
    "NormStats",
    "NumericalError",
    "StyleDiffError",
    "TimbreCrossAttention",
    "TextEncoder",
    "ToyCorpus",
    "ToyUtterance",
    "TrainConfig",
    "Trainer",
    "ablate",
    "build_schedule",
    "coarse_orthogonality",
    "corpus_digest",
    "create_trainer",
    "denormalize",
    "diffusion_loss",
    "duration_loss",
    "evaluate_ground_truth",
    "evaluate_model",
    "export_durations",
    "fine_orthogonality",
    "forward_sample",
    "generate_corpus",
    "length_regulate",
    "load_checkpoint",
    "load_config",
    "load_corpus",
    "load_evaluator",
    "model_from_checkpoint",
    "normalize",
    "pool",
    "read_mel",
    "restore_trainer",
    "saln",
    "sample",
    "save_checkpoint",
    "save_config",
    "save_evaluator",
    "shared_phoneme_attention_score",
    "train_evaluator",
    "uniform_attention_base_rate",
    "write_mel",
    "__version__",
]
