"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from ._validation import CheckpointError, ConfigurationError, TrainingError
from .config import RunConfig, default_config_text, load_run_config
from .datasets import build_registry, default_target_specs, load_image, load_image_folders, source_spec
from .encoders import make_encoder
from .inference import invert_image, invert_registry, save_grid, z_from_seed
from .params import analytic_report, measured_report, scaling_table
from .store import Checkpoint, load_checkpoint, save_checkpoint
from .synthesis import Generator
from .training import Trainer, pretrain_source

log = logging.getLogger("hyperadapt")


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _run_config(args) -> RunConfig:
    return load_run_config(args.config) if getattr(args, "config", None) else RunConfig()


def _domain_index(registry, value: str) -> int:
    if value.isdigit():
        i = int(value)
        if not 0 <= i < len(registry):
            raise UsageError(f"domain index {i} out of range [0, {len(registry)})")
        return i
    try:
        return registry.index_of(value)
    except ValueError as err:
        raise UsageError(str(err)) from None


def _load_trained(path):
    ckpt = load_checkpoint(path)
    if ckpt.adaptation is None:
        raise UsageError(f"{path} holds no trained hyper-network; run `train` first")
    return ckpt, ckpt.adapted_generator()


def _cell(seed, domain, alpha, kappa, **extra) -> dict:
    return {"seed": seed, "c": domain, "alpha": alpha, "kappa": kappa, **extra}


# ---------------------------------------------------------------------------
# commands


def cmd_config(args) -> int:
    text = default_config_text(_run_config(args))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_pretrain(args) -> int:
    cfg = _run_config(args)
    if args.steps is not None:
        cfg.pretrain.steps = args.steps
    G = Generator(cfg.synthesis, seed=cfg.generator_seed)
    if G.resolution != cfg.data.resolution:
        raise ConfigurationError(f"synthesis resolution {G.resolution} != data.resolution {cfg.data.resolution}")
    encoder = make_encoder(cfg.training.encoder, G.resolution)
    if args.images:
        from .datasets import IMAGE_SUFFIXES

        files = sorted(p for p in Path(args.images).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise UsageError(f"no images found in {args.images}")
        source = torch.stack([load_image(f, G.resolution) for f in files])
    else:
        source = source_spec(cfg.data.source_samples, cfg.data.source_seed)
    losses = pretrain_source(G, source, cfg.pretrain, encoder)
    save_checkpoint(Checkpoint(G, meta={"stage": "pretrain", "run_config": cfg.to_dict(),
                                        "final_loss": losses[-1] if losses else None}), args.out)
    print(f"pretrained source generator ({len(losses)} steps) -> {args.out}")
    return 0


def cmd_prepare(args) -> int:
    src = load_checkpoint(args.source)
    cfg = _run_config(args)
    G = src.generator
    if args.images:
        registry = load_image_folders(args.images, G.resolution)
    else:
        registry = build_registry(default_target_specs(cfg.data.target_samples, cfg.data.target_seed), G.resolution)
    if args.faces:
        for d in registry:
            d.contains_faces = True
    encoder = make_encoder(cfg.training.encoder, G.resolution)
    inv = cfg.inversion
    results = invert_registry(registry, G, encoder, inv.steps, inv.lr, inv.seed)
    meta = dict(src.meta, stage="prepare", inversion=[
        {"domain": d.name, "pixel_error": r.pixel_error.tolist(), "embedding_similarity": r.embedding_similarity.tolist()}
        for d, r in zip(registry, results)])
    save_checkpoint(Checkpoint(G, registry=registry, training=cfg.training, meta=meta), args.out)
    for d, r in zip(registry, results):
        print(f"{d.name}: inversion sim {float(r.embedding_similarity.mean()):.4f} "
              f"L1 {float(r.pixel_error.mean()):.4f}")
    print(f"registry of {len(registry)} domain(s) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.registry is None or not ckpt.registry.has_latents:
        raise UsageError(f"{args.checkpoint} has no prepared registry; run `prepare` first")
    if args.config:
        ckpt.training = load_run_config(args.config).training
    if ckpt.adaptation is not None:
        trainer = ckpt.trainer()
    else:
        trainer = Trainer(ckpt.generator, ckpt.registry, ckpt.training or RunConfig().training)
    target = trainer.config.steps if args.steps is None else trainer.step_count + args.steps
    out = Path(args.out)

    def save(tr):
        save_checkpoint(Checkpoint.from_trainer(tr, dict(ckpt.meta, stage="train")), out)

    trainer.run(max(target - trainer.step_count, 0), log_path=args.log, checkpoint_fn=save,
                checkpoint_every=args.checkpoint_every)
    save(trainer)
    print(f"trained to step {trainer.step_count} -> {out}")
    return 0


def cmd_synth(args) -> int:
    ckpt, ag = _load_trained(args.checkpoint)
    d = _domain_index(ckpt.registry, args.domain)
    seeds = args.seeds
    z = torch.cat([z_from_seed(s, ag.generator.config.z_dim) for s in seeds])
    images = ag.synthesize(z, d, args.alpha, args.kappa)
    meta = [[_cell(s, ckpt.registry.names[d], args.alpha, args.kappa) for s in seeds]]
    save_grid([list(images)], args.out, meta)
    print(f"{len(seeds)} image(s) -> {args.out}")
    return 0


def cmd_interp(args) -> int:
    ckpt, ag = _load_trained(args.checkpoint)
    a, b = _domain_index(ckpt.registry, args.src), _domain_index(ckpt.registry, args.dst)
    z = torch.cat([z_from_seed(s, ag.generator.config.z_dim) for s in args.seeds])
    frames = ag.domain_sweep(z, a, b, args.steps, args.alpha, args.kappa, space=args.space)
    names = ckpt.registry.names
    ts = [i / (args.steps - 1) for i in range(args.steps)]
    cells = [list(f) for f in frames]
    meta = [[_cell(s, {names[a]: 1 - t, names[b]: t}, args.alpha, args.kappa, t=t) for s in args.seeds] for t in ts]
    save_grid(cells, args.out, meta)
    print(f"{args.steps} frame(s) x {len(args.seeds)} seed(s) -> {args.out}")
    return 0


def cmd_translate(args) -> int:
    ckpt, ag = _load_trained(args.checkpoint)
    G = ag.generator
    image = load_image(args.image, G.resolution)[None]
    encoder = make_encoder((ckpt.training or RunConfig().training).encoder, G.resolution)
    inv = invert_image(image, G, encoder, args.inversion_steps, args.inversion_lr, w_plus=False)
    outputs = ag.translate(inv.latents, alpha=args.alpha, kappa=args.kappa)
    row = [image[0], ag.source(w=inv.latents)[0]] + [o[0] for o in outputs]
    meta = [[{"input": str(args.image)}, {"inversion": True, "pixel_error": float(inv.pixel_error[0]),
                                          "embedding_similarity": float(inv.embedding_similarity[0])}]
            + [_cell(None, n, args.alpha, args.kappa) for n in ckpt.registry.names]]
    save_grid([row], args.out, meta)
    print(f"inverted (sim {float(inv.embedding_similarity[0]):.4f}) and translated to "
          f"{len(ckpt.registry)} domain(s) -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    ckpt, ag = _load_trained(args.checkpoint)
    d = _domain_index(ckpt.registry, args.domain)
    z = z_from_seed(args.seed, ag.generator.config.z_dim)
    cells, meta = [], []
    for alpha in args.alphas:
        cells.append([ag.synthesize(z, d, alpha, kappa)[0] for kappa in args.kappas])
        meta.append([_cell(args.seed, ckpt.registry.names[d], alpha, kappa) for kappa in args.kappas])
    save_grid(cells, args.out, meta)
    print(f"{len(args.alphas)}x{len(args.kappas)} sweep -> {args.out}")
    return 0


def cmd_params(args) -> int:
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        if ckpt.adaptation is None:
            raise UsageError(f"{args.checkpoint} holds no hyper-network to count")
        measured = measured_report(ckpt.generator, ckpt.adaptation)
        a = ckpt.adaptation
        analytic = analytic_report(ckpt.generator.config, a.n_domains, a.latent_dim, a.mapping_layers,
                                   a.adapt_to_rgb)
    else:
        cfg = _run_config(args)
        t = cfg.training
        analytic = analytic_report(cfg.synthesis, args.domains, t.latent_dim, t.mapping_layers, t.adapt_to_rgb)
        measured = None
    print(analytic.format())
    if measured is not None:
        ok = measured == analytic
        print(f"measured counts {'match' if ok else 'DIFFER FROM'} the analytic formula")
        if not ok:
            return 1
    if args.scaling:
        cfg = _run_config(args)
        rows = scaling_table(cfg.synthesis, args.scaling, cfg.training.latent_dim, cfg.training.mapping_layers,
                             cfg.training.adapt_to_rgb)
        print(f"\n{'N':>4} {'conditional':>12} {'separate':>12}")
        for r in rows:
            print(f"{r['n_domains']:>4} {r['conditional']:>12} {r['separate']:>12}")
    if args.json:
        Path(args.json).write_text(json.dumps({"total": analytic.total, "generator": analytic.generator,
                                               "adaptation": analytic.adaptation,
                                               "separate": analytic.separate_models}, indent=2))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperadapt", description="Few-shot multi-domain generator adaptation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("config", cmd_config, "print the default run configuration (YAML)")
    sp.add_argument("--config", help="start from this file instead of the defaults")
    sp.add_argument("--out", help="write to a file instead of stdout")

    sp = add("pretrain", cmd_pretrain, "train the source generator")
    sp.add_argument("--config")
    sp.add_argument("--images", help="folder of source images (default: procedural gray circles)")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--out", required=True)

    sp = add("prepare", cmd_prepare, "build the target registry and cache inverted latents")
    sp.add_argument("--source", required=True, help="checkpoint from `pretrain`")
    sp.add_argument("--config")
    sp.add_argument("--images", help="root folder with one sub-folder per target domain")
    sp.add_argument("--faces", action="store_true", help="mark every domain as containing faces")
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train (or resume) the hyper-network")
    sp.add_argument("--checkpoint", required=True, help="checkpoint from `prepare` or a previous `train`")
    sp.add_argument("--config", help="override the training section stored in the checkpoint")
    sp.add_argument("--steps", type=int, help="number of additional steps (default: up to training.steps)")
    sp.add_argument("--log", help="CSV loss log")
    sp.add_argument("--checkpoint-every", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("synth", cmd_synth, "synthesize images for one domain")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--domain", required=True, help="domain name or index")
    sp.add_argument("--seeds", type=_ints, default=[0])
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--out", required=True)

    sp = add("interp", cmd_interp, "sweep between two domains")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--from", dest="src", required=True)
    sp.add_argument("--to", dest="dst", required=True)
    sp.add_argument("--steps", type=int, default=5)
    sp.add_argument("--seeds", type=_ints, default=[0])
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--space", choices=("c", "v"), default="c", help="interpolate conditions or domain latents")
    sp.add_argument("--out", required=True)

    sp = add("translate", cmd_translate, "invert an image and render it in every domain")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--inversion-steps", type=int, default=500)
    sp.add_argument("--inversion-lr", type=float, default=0.05)
    sp.add_argument("--out", required=True)

    sp = add("sweep", cmd_sweep, "alpha x kappa grid for one domain")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--domain", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--alphas", type=_floats, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    sp.add_argument("--kappas", type=_floats, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    sp.add_argument("--out", required=True)

    sp = add("params", cmd_params, "analytic parameter-count report")
    sp.add_argument("--config")
    sp.add_argument("--checkpoint", help="also count a trained checkpoint and compare")
    sp.add_argument("--domains", type=int, default=4)
    sp.add_argument("--scaling", type=_ints, nargs="?", const=[1, 2, 5, 10],
                    help="also tabulate sizes for these domain counts (default 1,2,5,10)")
    sp.add_argument("--json", help="write totals as JSON")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigurationError) as err:
        print(f"hyperadapt {args.command}: error: {err}", file=sys.stderr)
        return 2
    except (CheckpointError, TrainingError, ValueError, OSError) as err:
        print(f"hyperadapt {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
