"""Few-shot multi-domain generator adaptation with a weight-modulating hyper-network."""

from ._validation import CheckpointError, ConfigurationError, TrainingError
from .datasets import (
    Domain,
    DomainRegistry,
    ProceduralDomainSpec,
    build_registry,
    default_target_specs,
    load_image_folders,
    render_domain_samples,
    source_spec,
)
from .encoders import CallableEncoder, CompositeEncoder, EncoderSpec, ToyEncoder, augment, make_encoder
from .estimator import LatentInverter, MultiDomainAdapter, SourceGenerator
from .hypernet import (
    AdaptationModule,
    LayerModulation,
    ModulationSet,
    interpolate_domains,
    reconstruct_residual,
    scale_modulation,
)
from .inference import AdaptedGenerator, InversionResult, invert_image, invert_registry, style_mix
from .losses import (
    LossReport,
    LossWeights,
    contrastive_adaptation_loss,
    cosine_sim,
    identity_loss,
    mtg_loss,
    total_loss,
)
from .store import Checkpoint, load_checkpoint, save_checkpoint
from .synthesis import (
    Generator,
    LayerConfig,
    SynthesisConfig,
    conv_forward,
    conv_forward_adapted,
    demodulate,
    modulate,
)
from .training import PretrainConfig, Trainer, TrainingConfig, pretrain_source, run_training

__version__ = "0.1.0"
