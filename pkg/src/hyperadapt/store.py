"""Single-file checkpoint archives.

A checkpoint is an uncompressed zip holding ``manifest.json`` and one raw
little-endian float32 blob per array. Entry timestamps are pinned and the
manifest is written with sorted keys, so saving the same state twice gives
byte-identical files. Writes go to a temporary file in the target directory
and are moved into place with :func:`os.replace`.
"""

from __future__ import annotations

import json
import os
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ._validation import CheckpointError
from .datasets import Domain, DomainRegistry
from .hypernet import AdaptationModule
from .synthesis import Generator, SynthesisConfig
from .training import TrainingConfig, Trainer

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
DTYPE = "<f4"
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    """Everything needed to resume training or run inference."""

    generator: Generator
    adaptation: Optional[AdaptationModule] = None
    registry: Optional[DomainRegistry] = None
    training: Optional[TrainingConfig] = None
    optimizer: dict = field(default_factory=dict)
    step: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_trainer(cls, trainer: Trainer, meta: Optional[dict] = None) -> "Checkpoint":
        return cls(trainer.generator, trainer.adaptation, trainer.registry, trainer.config,
                   trainer.optimizer_arrays(), trainer.step_count, dict(meta or {}))

    def trainer(self) -> Trainer:
        """Rebuild a trainer positioned at ``step`` with restored Adam moments."""
        if self.adaptation is None or self.registry is None:
            raise CheckpointError("checkpoint holds no adaptation state to resume")
        tr = Trainer(self.generator, self.registry, self.training or TrainingConfig(), adaptation=self.adaptation)
        tr.load_optimizer_arrays(self.optimizer, self.step)
        return tr

    def adapted_generator(self):
        from .inference import AdaptedGenerator

        if self.adaptation is None or self.registry is None:
            raise CheckpointError("checkpoint holds no trained adaptation module")
        return AdaptedGenerator(self.generator, self.adaptation, self.registry.style_latents(), self.registry.names)


# ---------------------------------------------------------------------------
# encoding


def _collect(ckpt: Checkpoint) -> tuple[dict, dict]:
    arrays: dict[str, torch.Tensor] = {}
    for k, v in ckpt.generator.state_dict().items():
        arrays[f"generator/{k}"] = v
    manifest = {
        "format_version": FORMAT_VERSION,
        "step": int(ckpt.step),
        "synthesis": ckpt.generator.config.to_dict(),
        "adaptation": None,
        "registry": None,
        "training": ckpt.training.to_dict() if ckpt.training is not None else None,
        "meta": ckpt.meta,
    }
    if ckpt.adaptation is not None:
        a = ckpt.adaptation
        manifest["adaptation"] = {"n_domains": a.n_domains, "latent_dim": a.latent_dim,
                                  "mapping_layers": a.mapping_layers, "adapt_to_rgb": a.adapt_to_rgb}
        for k, v in a.state_dict().items():
            arrays[f"adaptation/{k}"] = v
    for k, v in sorted(ckpt.optimizer.items()):
        arrays[f"optimizer/{k}"] = v
    if ckpt.registry is not None:
        entries = []
        for d in ckpt.registry:
            entries.append({"name": d.name, "contains_faces": d.contains_faces, "has_latents": d.latents is not None})
            arrays[f"registry/{d.index}/images"] = d.images
            if d.latents is not None:
                arrays[f"registry/{d.index}/latents"] = d.latents
        manifest["registry"] = entries
    return manifest, arrays


def _blob(t: torch.Tensor) -> bytes:
    return np.ascontiguousarray(t.detach().cpu().numpy(), dtype=DTYPE).tobytes()


def _zip_entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write ``ckpt`` atomically. Arrays are stored as float32."""
    manifest, arrays = _collect(ckpt)
    blobs = {}
    manifest["arrays"] = []
    for name, t in arrays.items():
        blobs[name] = _blob(t)
        manifest["arrays"].append({"name": name, "shape": list(t.shape), "dtype": DTYPE, "nbytes": len(blobs[name])})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            with zipfile.ZipFile(fh, "w") as zf:
                zf.writestr(_zip_entry(MANIFEST), json.dumps(manifest, sort_keys=True, indent=1))
                for name, data in blobs.items():
                    zf.writestr(_zip_entry(f"arrays/{name}"), data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# ---------------------------------------------------------------------------
# decoding


def read_manifest(path) -> dict:
    try:
        with zipfile.ZipFile(path) as zf:
            return json.loads(zf.read(MANIFEST))
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError) as err:
        raise CheckpointError(f"{path}: not a readable checkpoint ({err})") from err


def _read_arrays(zf: zipfile.ZipFile, manifest: dict) -> dict[str, torch.Tensor]:
    out = {}
    for entry in manifest.get("arrays", []):
        name, shape = entry["name"], tuple(entry["shape"])
        if entry.get("dtype") != DTYPE:
            raise CheckpointError(f"array {name!r}: unsupported dtype {entry.get('dtype')!r}")
        try:
            data = zf.read(f"arrays/{name}")
        except KeyError:
            raise CheckpointError(f"array {name!r} listed in manifest but missing from archive") from None
        except (zipfile.BadZipFile, EOFError, OSError) as err:
            raise CheckpointError(f"array {name!r}: truncated or corrupt ({err})") from err
        expected = int(np.prod(shape, dtype=np.int64)) * 4
        if len(data) != entry["nbytes"] or len(data) != expected:
            raise CheckpointError(f"array {name!r}: {len(data)} bytes on disk, expected {expected} for shape {shape}")
        out[name] = torch.from_numpy(np.frombuffer(data, dtype=DTYPE).reshape(shape).copy())
    return out


def _load_module(module: torch.nn.Module, prefix: str, arrays: dict) -> None:
    state = module.state_dict()
    loaded = {}
    for k, ref in state.items():
        name = f"{prefix}/{k}"
        if name not in arrays:
            raise CheckpointError(f"array {name!r} missing from checkpoint")
        if tuple(arrays[name].shape) != tuple(ref.shape):
            raise CheckpointError(f"array {name!r}: shape {tuple(arrays[name].shape)} does not match "
                                  f"model shape {tuple(ref.shape)}")
        loaded[k] = arrays[name].to(ref.dtype)
    extra = sorted(n for n in arrays if n.startswith(prefix + "/") and n[len(prefix) + 1:] not in state)
    if extra:
        raise CheckpointError(f"unexpected arrays for {prefix}: {extra}")
    module.load_state_dict(loaded)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such checkpoint")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read(MANIFEST))
            version = manifest.get("format_version")
            if version != FORMAT_VERSION:
                raise CheckpointError(f"{path}: format version {version!r}, this build reads {FORMAT_VERSION}")
            arrays = _read_arrays(zf, manifest)
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError) as err:
        raise CheckpointError(f"{path}: not a readable checkpoint ({err})") from err

    generator = Generator(SynthesisConfig.from_dict(manifest["synthesis"]))
    _load_module(generator, "generator", arrays)
    generator.requires_grad_(False).eval()

    adaptation = None
    if manifest.get("adaptation") is not None:
        a = manifest["adaptation"]
        adaptation = AdaptationModule(a["n_domains"], generator.layer_shapes(), a["latent_dim"],
                                      a["mapping_layers"], a["adapt_to_rgb"])
        _load_module(adaptation, "adaptation", arrays)

    registry = None
    if manifest.get("registry") is not None:
        domains = []
        for i, entry in enumerate(manifest["registry"]):
            images = arrays.get(f"registry/{i}/images")
            if images is None:
                raise CheckpointError(f"array 'registry/{i}/images' missing from checkpoint")
            latents = arrays.get(f"registry/{i}/latents")
            if entry["has_latents"] and latents is None:
                raise CheckpointError(f"array 'registry/{i}/latents' missing from checkpoint")
            domains.append(Domain(entry["name"], i, images, latents, entry["contains_faces"]))
        registry = DomainRegistry(domains)

    if adaptation is not None and registry is not None and adaptation.n_domains != len(registry):
        raise CheckpointError(f"{path}: hyper-network expects {adaptation.n_domains} domains, "
                              f"registry holds {len(registry)}")
    training = TrainingConfig.from_dict(manifest["training"]) if manifest.get("training") else None
    optimizer = {k[len("optimizer/"):]: v for k, v in arrays.items() if k.startswith("optimizer/")}
    return Checkpoint(generator, adaptation, registry, training, optimizer, int(manifest["step"]),
                      manifest.get("meta") or {})


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialized archive as bytes (handy for hashing and tests)."""
    with tempfile.TemporaryDirectory() as d:
        p = save_checkpoint(ckpt, Path(d) / "ckpt.zip")
        return p.read_bytes()


__all__ = ["Checkpoint", "FORMAT_VERSION", "save_checkpoint", "load_checkpoint", "read_manifest",
           "checkpoint_bytes"]
