"""JSON run configuration shared by ``train``, ``eval`` and ``bench``."""
from __future__ import annotations

import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .bench import DEFAULT_DOMAINS, BenchConfig, DomainSpec
from .exceptions import ConfigError
from .net import SgdConfig
from .pipeline import PipelineConfig
from .style import StyleConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainSection(_Strict):
    domain_id: int
    intensity_offset: float = 0.0
    contrast_scale: float = Field(1.0, gt=0)
    noise_sigma: float = Field(0.05, ge=0)
    texture_freq: float = 0.1
    texture_amp: float = 0.1


class DataSection(_Strict):
    domains: list[DomainSection] = Field(
        default_factory=lambda: [DomainSection(**vars(d)) for d in DEFAULT_DOMAINS])
    train_per_domain: int = Field(200, ge=1)
    test_per_domain: int = Field(50, ge=1)
    image_size: int = Field(32, ge=4, multiple_of=2)
    held_out: int = 0
    data_seed: int = 1234


class ModelSection(_Strict):
    stem_ch: int = Field(8, ge=1)
    feat_ch: int = Field(8, ge=1)
    slope: float = 0.01


class WeightsSection(_Strict):
    seg: float = 1.0
    contrast: float = 1.0


class LossesSection(_Strict):
    tau: float = Field(0.5, gt=0)
    smooth: float = Field(1.0, gt=0)
    include_background: bool = True
    weights: WeightsSection = Field(default_factory=WeightsSection)


class AugmentSection(_Strict):
    perturb_prob: float = Field(0.5, ge=0, le=1)
    eps: float = Field(1e-6, gt=0)
    mix: float = Field(1.0, ge=0, le=1)


class PrlSection(_Strict):
    mode: Literal["none", "mean", "full"] = "full"
    stats_source: Literal["augmented", "source", "both"] = "augmented"
    query_rate: float = Field(1.0, gt=0, le=1)


class OptimSection(_Strict):
    lr: float = Field(0.02, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    epochs: int = Field(8, ge=1)
    batch_size: int = Field(8, ge=1)


class RunConfig(_Strict):
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    losses: LossesSection = Field(default_factory=LossesSection)
    augment: AugmentSection = Field(default_factory=AugmentSection)
    wesp: bool = True
    prl: PrlSection = Field(default_factory=PrlSection)
    optim: OptimSection = Field(default_factory=OptimSection)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    output_dir: Optional[str] = None

    def pipeline(self):
        return PipelineConfig(
            prl=self.prl.mode, stats_source=self.prl.stats_source, wesp=self.wesp,
            tau=self.losses.tau, smooth=self.losses.smooth,
            include_background=self.losses.include_background,
            seg_weight=self.losses.weights.seg, contrast_weight=self.losses.weights.contrast,
            query_rate=self.prl.query_rate,
            style=StyleConfig(perturb_prob=self.augment.perturb_prob, eps=self.augment.eps,
                              mix=self.augment.mix))

    def sgd(self, seed):
        o = self.optim
        return SgdConfig(lr=o.lr, momentum=o.momentum, epochs=o.epochs,
                         batch_size=o.batch_size, seed=seed)

    def domain_specs(self):
        return tuple(DomainSpec(**d.model_dump()) for d in self.data.domains)

    def bench(self, ablations, seeds=None, threads=1):
        return BenchConfig(
            domains=self.domain_specs(), train_per_domain=self.data.train_per_domain,
            test_per_domain=self.data.test_per_domain, image_size=self.data.image_size,
            data_seed=self.data.data_seed, seeds=tuple(seeds or self.seeds),
            ablations=tuple(ablations), epochs=self.optim.epochs,
            batch_size=self.optim.batch_size, lr=self.optim.lr, momentum=self.optim.momentum,
            tau=self.losses.tau, smooth=self.losses.smooth,
            include_background=self.losses.include_background,
            seg_weight=self.losses.weights.seg, contrast_weight=self.losses.weights.contrast,
            stats_source=self.prl.stats_source, query_rate=self.prl.query_rate,
            model=self.model.model_dump(), perturb_prob=self.augment.perturb_prob,
            style_mix=self.augment.mix, threads=threads)


def load_config(path=None):
    """Parse and validate a RunConfig; ``None`` gives all defaults."""
    try:
        if path is None:
            return RunConfig()
        with open(path) as fh:
            return RunConfig.model_validate(json.load(fh))
    except (ValidationError, json.JSONDecodeError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
