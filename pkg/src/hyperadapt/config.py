"""Human-readable YAML run configuration.

``default_config_text()`` renders every field with its default and a short
comment; ``load_run_config`` rejects unknown keys and missing seeds.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from ._validation import ConfigurationError
from .encoders import EncoderSpec
from .synthesis import SynthesisConfig
from .training import PretrainConfig, TrainingConfig


@dataclass
class InversionConfig:
    steps: int = 500
    lr: float = 0.05
    w_plus: bool = False
    seed: int = 0


@dataclass
class DataConfig:
    resolution: int = 32
    source_samples: int = 256
    source_seed: int = 0
    target_samples: int = 1
    target_seed: int = 1
    image_folder: Optional[str] = None


@dataclass
class RunConfig:
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    generator_seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def to_dict(self) -> dict:
        return {
            "synthesis": self.synthesis.to_dict(),
            "generator_seed": self.generator_seed,
            "data": asdict(self.data),
            "pretrain": asdict(self.pretrain),
            "inversion": asdict(self.inversion),
            "training": self.training.to_dict(),
        }


_SEED_KEYS = [("generator_seed",), ("data", "source_seed"), ("data", "target_seed"), ("pretrain", "seed"),
              ("inversion", "seed"), ("training", "seed"), ("training", "encoder", "seed")]

_TEMPLATE = """\
# Run configuration. Every key is optional; omitted keys take the value shown.
# Seeds may not be null: all randomness is derived from them.

generator_seed: {generator_seed}      # initialization of the source generator

synthesis:                  # toy source generator
  z_dim: {s[z_dim]}
  w_dim: {s[w_dim]}
  channels: {s[channels]}  # width per resolution block, starting at 4x4
  kernel_size: {s[kernel_size]}
  mapping_layers: {s[mapping_layers]}
  first_block_convs: {s[first_block_convs]}
  block_convs: {s[block_convs]}
  fine_blocks: {s[fine_blocks]}            # top resolutions that receive the style-mixing latent
  fine_cutoff: {fine_cutoff}        # explicit first fine layer index; overrides fine_blocks

data:
  resolution: {d[resolution]}
  source_samples: {d[source_samples]}      # procedural gray-circle images for pretraining
  source_seed: {d[source_seed]}
  target_samples: {d[target_samples]}        # 1 = one training image per target domain
  target_seed: {d[target_seed]}
  image_folder: {image_folder}      # one sub-folder of images per domain; null = procedural targets

pretrain:
  steps: {p[steps]}
  batch_size: {p[batch_size]}
  lr: {p[lr]}
  seed: {p[seed]}
  embed_weight: {p[embed_weight]}

inversion:                  # latent recovery for w_c and translation
  steps: {i[steps]}
  lr: {i[lr]}
  w_plus: {w_plus}            # optimize one latent per layer instead of a single w
  seed: {i[seed]}

training:
  lr: {t[lr]}                # learning rate 0.002
  beta1: {t[beta1]}               # Adam beta1
  beta2: {t[beta2]}              # Adam beta2
  batch_size: {t[batch_size]}             # batch size 4
  steps: {t[steps]}
  tau: {t[tau]}                # contrastive temperature
  seed: {t[seed]}
  lambda_contra: {t[lambda_contra]}
  lambda_mtg: {t[lambda_mtg]}
  lambda_id: {lambda_id}          # null = 3 when every domain contains faces, else 0
  latent_dim: {t[latent_dim]}            # width of the domain latent v
  mapping_layers: {t[mapping_layers]}
  adapt_to_rgb: {adapt_to_rgb}        # also adapt the final 1x1 colour layer
  augment_negatives: {aug_neg}
  augment_positives: {aug_pos}
  domain_weights: {domain_weights}     # sampling weight per domain; null = uniform
  encoder:
    kind: {e[kind]}
    dim: {e[dim]}
    seed: {e[seed]}
    widths: {e[widths]}
    input_gain: {e[input_gain]}
    luminance_weight: {e[luminance_weight]}
"""


def _yaml_scalar(v) -> str:
    return yaml.safe_dump(v, default_flow_style=True).strip().removesuffix("...").strip()


def default_config_text(config: Optional[RunConfig] = None) -> str:
    config = config or RunConfig()
    d = config.to_dict()
    s = dict(d["synthesis"], channels=_yaml_scalar(d["synthesis"]["channels"]))
    t = d["training"]
    e = dict(t["encoder"], widths=_yaml_scalar(t["encoder"]["widths"]))
    return _TEMPLATE.format(
        generator_seed=d["generator_seed"], s=s, fine_cutoff=_yaml_scalar(s["fine_cutoff"]), d=d["data"],
        image_folder=_yaml_scalar(d["data"]["image_folder"]), p=d["pretrain"], i=d["inversion"],
        w_plus=_yaml_scalar(d["inversion"]["w_plus"]), t=t, lambda_id=_yaml_scalar(t["lambda_id"]),
        adapt_to_rgb=_yaml_scalar(t["adapt_to_rgb"]), aug_neg=_yaml_scalar(t["augment_negatives"]),
        aug_pos=_yaml_scalar(t["augment_positives"]), domain_weights=_yaml_scalar(t["domain_weights"]), e=e,
    )


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _names(cls) -> list[str]:
    return [f.name for f in fields(cls)]


def run_config_from_dict(raw: Optional[dict]) -> RunConfig:
    raw = dict(raw or {})
    _check_keys(raw, _names(RunConfig), "config")
    for path in _SEED_KEYS:
        node = raw
        for key in path[:-1]:
            node = node.get(key) or {}
        if path[-1] in node and node[path[-1]] is None:
            raise ConfigurationError(f"{'.'.join(path)} must be an integer seed")
    sections = {"synthesis": SynthesisConfig, "data": DataConfig, "pretrain": PretrainConfig,
                "inversion": InversionConfig, "training": TrainingConfig}
    kwargs = {}
    for name, cls in sections.items():
        sec = raw.get(name) or {}
        if not isinstance(sec, dict):
            raise ConfigurationError(f"section {name!r} must be a mapping")
        _check_keys(sec, _names(cls), name)
        if name == "training" and "encoder" in sec:
            _check_keys(sec["encoder"] or {}, _names(EncoderSpec), "training.encoder")
            sec = dict(sec, encoder=EncoderSpec.from_dict(sec["encoder"] or {}))
        try:
            kwargs[name] = cls(**sec)
        except (TypeError, ValueError) as err:
            raise ConfigurationError(f"invalid {name} section: {err}") from err
    if "generator_seed" in raw:
        kwargs["generator_seed"] = int(raw["generator_seed"])
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigurationError(f"{path}: invalid YAML ({err})") from err
    if raw is not None and not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return run_config_from_dict(raw)
