"""Analytic and measured parameter counts.

One conditional model holds the frozen generator plus a hyper-network whose
size depends on the domain count only through the first mapping layer
(``N * D_v`` weights). The separate-models baseline keeps one generator per
domain and grows by a whole generator per domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .hypernet import (
    ADAPT_TO_RGB,
    DEFAULT_LATENT_DIM,
    AdaptationModule,
    expected_adaptation_params,
    full_residual_params,
    head_params_per_layer,
    is_adapted,
)
from .synthesis import Generator, SynthesisConfig, expected_generator_params


@dataclass(frozen=True)
class LayerRow:
    index: int
    c_in: int
    c_out: int
    kernel_size: int
    resolution: int
    adapted: bool
    head_params: int
    full_residual: int


@dataclass(frozen=True)
class ParameterReport:
    n_domains: int
    latent_dim: int
    layers: tuple
    generator: int
    adaptation: int

    @property
    def total(self) -> int:
        return self.generator + self.adaptation

    @property
    def separate_models(self) -> int:
        return self.n_domains * self.generator

    def format(self) -> str:
        lines = [f"parameter report: {self.n_domains} domain(s), domain latent dim {self.latent_dim}",
                 f"{'layer':>5} {'shape':>16} {'res':>4} {'heads':>8} {'full residual':>14}"]
        for r in self.layers:
            shape = f"{r.c_out}x{r.c_in}x{r.kernel_size}x{r.kernel_size}"
            heads = str(r.head_params) if r.adapted else "-"
            lines.append(f"{r.index:>5} {shape:>16} {r.resolution:>4} {heads:>8} {r.full_residual:>14}")
        mapping = self.adaptation - sum(r.head_params for r in self.layers if r.adapted)
        lines += [
            f"hyper-network mapping: {mapping}",
            f"hyper-network total:   {self.adaptation}",
            f"frozen generator:      {self.generator}",
            f"conditional total:     {self.total}",
            f"separate models:       {self.separate_models}",
        ]
        return "\n".join(lines)


def analytic_report(config: SynthesisConfig = SynthesisConfig(), n_domains: int = 4,
                    latent_dim: int = DEFAULT_LATENT_DIM, mapping_layers: int = 2,
                    adapt_to_rgb: bool = ADAPT_TO_RGB) -> ParameterReport:
    rows = []
    for i, cfg in enumerate(config.layers):
        adapted = is_adapted(cfg, adapt_to_rgb)
        rows.append(LayerRow(i, cfg.c_in, cfg.c_out, cfg.kernel_size, cfg.resolution, adapted,
                             head_params_per_layer(cfg, latent_dim) if adapted else 0, full_residual_params(cfg)))
    return ParameterReport(n_domains, latent_dim, tuple(rows), expected_generator_params(config),
                           expected_adaptation_params(n_domains, config.layers, latent_dim, mapping_layers,
                                                      adapt_to_rgb))


def measured_report(generator: Generator, adaptation: AdaptationModule) -> ParameterReport:
    """Same report, counted from instantiated modules."""
    rows = []
    heads = dict(zip(adaptation.adapted, adaptation.layer_heads))
    for i, cfg in enumerate(generator.layer_shapes()):
        n = sum(p.numel() for p in heads[i].parameters()) if i in heads else 0
        rows.append(LayerRow(i, cfg.c_in, cfg.c_out, cfg.kernel_size, cfg.resolution, i in heads, n,
                             generator.layers[i].weight.numel()))
    return ParameterReport(adaptation.n_domains, adaptation.latent_dim, tuple(rows), generator.parameter_count(),
                           adaptation.parameter_count())


def scaling_table(config: SynthesisConfig = SynthesisConfig(), domain_counts: Sequence[int] = (1, 2, 5, 10),
                  latent_dim: int = DEFAULT_LATENT_DIM, mapping_layers: int = 2,
                  adapt_to_rgb: bool = ADAPT_TO_RGB, measure: bool = True) -> list[dict]:
    """Conditional vs separate-model sizes for each domain count."""
    rows = []
    gen = Generator(config) if measure else None
    for n in domain_counts:
        rep = analytic_report(config, n, latent_dim, mapping_layers, adapt_to_rgb)
        row = {"n_domains": n, "conditional": rep.total, "separate": rep.separate_models,
               "generator": rep.generator, "adaptation": rep.adaptation}
        if measure:
            a = AdaptationModule(n, gen.layer_shapes(), latent_dim, mapping_layers, adapt_to_rgb)
            row["measured_conditional"] = gen.parameter_count() + a.parameter_count()
            row["measured_separate"] = n * gen.parameter_count()
        rows.append(row)
    return rows
