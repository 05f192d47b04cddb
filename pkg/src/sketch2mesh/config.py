"""Pipeline configuration: an INI-style ``key = value`` file with sections.

Grammar::

    file    := (section | comment | blank)*
    section := "[" name "]" NEWLINE (entry | comment | blank)*
    entry   := key "=" value
    comment := ("#" | ";") text

Values are parsed by the type of the matching dataclass field: integers,
floats, booleans (true/false/yes/no/1/0), strings, or comma-separated lists.
Unknown sections and keys are rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .implicit import (ImplicitDecoderConfig, ImplicitTrainConfig, ViewEncoderConfig, ViewTrainConfig,
                       VoxelEncoderConfig)
from .shapes import SHAPE_KINDS
from .sketch25d import Sketch25DConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    shapes: tuple[str, ...] = SHAPE_KINDS
    image_size: int = 64
    num_views: int = 12
    half_extent: float = 0.8
    voxel_resolutions: tuple[int, ...] = (16, 32)
    cloud_points: int = 10_000


@dataclass
class Stage1Section:
    encoder_channels: tuple[int, ...] = ()
    disc_channels: tuple[int, ...] = (8, 16, 32, 64)
    lambdas: tuple[float, ...] = (1.0, 1.0, 1.0, 0.01)
    dropout: float = 0.5
    dropout_layers: int = 3
    slope: float = 0.2
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    separate_decoders: bool = False
    steps: int = 400
    lr: float = 1e-3
    disc_lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 4
    checkpoint_every: int = 0


@dataclass
class ImplicitSection:
    num_fc_layers: int = 5
    hidden: tuple[int, ...] = ()
    encoder_resolution: int = 32
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    resolutions: tuple[int, ...] = (16, 32)
    steps: tuple[int, ...] = (300, 100)
    points_per_shape: int = 4096
    batch_shapes: int = 4
    lr: float = 2e-4
    lr_floor: float = 0.1
    w_surf: float = 4.0
    invert_labels: bool = False


@dataclass
class ViewSection:
    view_index: int = -1            # -1: slanted front view
    input: str = "map"              # "map" (5-channel 2.5D view) or "sketch"
    channels: tuple[int, ...] = (16, 32, 64, 128)
    steps: int = 300
    lr: float = 5e-4
    batch_size: int = 4


@dataclass
class InferSection:
    resolution: int = 32
    threshold: float = 0.5
    smooth_iterations: int = 0


@dataclass
class RunSection:
    seed: int = 0
    threads: int = 1


SECTIONS = {"data": DataSection, "stage1": Stage1Section, "implicit": ImplicitSection,
            "view": ViewSection, "infer": InferSection, "run": RunSection}


@dataclass
class PipelineConfig:
    data: DataSection = field(default_factory=DataSection)
    stage1: Stage1Section = field(default_factory=Stage1Section)
    implicit: ImplicitSection = field(default_factory=ImplicitSection)
    view: ViewSection = field(default_factory=ViewSection)
    infer: InferSection = field(default_factory=InferSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------ derived configs
    def sketch25d(self) -> Sketch25DConfig:
        s = self.stage1
        return Sketch25DConfig(image_size=self.data.image_size, num_views=self.data.num_views,
                               encoder_channels=s.encoder_channels, disc_channels=s.disc_channels,
                               lambdas=s.lambdas, slope=s.slope, dropout=s.dropout,
                               dropout_layers=s.dropout_layers, bn_momentum=s.bn_momentum, bn_eps=s.bn_eps,
                               separate_decoders=s.separate_decoders, seed=self.run.seed)

    def train25d(self) -> TrainConfig:
        s = self.stage1
        return TrainConfig(steps=s.steps, lr=s.lr, disc_lr=s.disc_lr, beta1=s.beta1, beta2=s.beta2,
                           batch_size=s.batch_size, checkpoint_every=s.checkpoint_every, seed=self.run.seed)

    def decoder(self) -> ImplicitDecoderConfig:
        return ImplicitDecoderConfig(num_fc_layers=self.implicit.num_fc_layers, hidden=self.implicit.hidden,
                                     seed=self.run.seed)

    def voxel_encoder(self) -> VoxelEncoderConfig:
        return VoxelEncoderConfig(input_resolution=self.implicit.encoder_resolution,
                                  channels=self.implicit.encoder_channels, seed=self.run.seed)

    def implicit_train(self) -> ImplicitTrainConfig:
        i = self.implicit
        return ImplicitTrainConfig(resolutions=i.resolutions, steps=i.steps, points_per_shape=i.points_per_shape,
                                   batch_shapes=i.batch_shapes, lr=i.lr, lr_floor=i.lr_floor, w_surf=i.w_surf,
                                   invert_labels=i.invert_labels, seed=self.run.seed)

    def view_encoder(self) -> ViewEncoderConfig:
        return ViewEncoderConfig(image_size=self.data.image_size,
                                 in_channels=5 if self.view.input == "map" else 1,
                                 channels=self.view.channels, seed=self.run.seed)

    def view_train(self) -> ViewTrainConfig:
        v = self.view
        return ViewTrainConfig(steps=v.steps, lr=v.lr, batch_size=v.batch_size, seed=self.run.seed)

    # ------------------------------------------------------------ validation and hashing
    def validate(self) -> None:
        d = self.data
        unknown = [s for s in d.shapes if s not in SHAPE_KINDS]
        if unknown or not d.shapes:
            raise ConfigError(f"data.shapes must be a non-empty subset of {SHAPE_KINDS}, got {d.shapes}")
        if d.half_extent <= 0 or d.cloud_points < 1:
            raise ConfigError("data.half_extent and data.cloud_points must be positive")
        if not d.voxel_resolutions or min(d.voxel_resolutions) < 2:
            raise ConfigError("data.voxel_resolutions must list resolutions >= 2")
        if self.view.input not in ("map", "sketch"):
            raise ConfigError(f"view.input must be 'map' or 'sketch', got {self.view.input!r}")
        if not -1 <= self.view.view_index < d.num_views:
            raise ConfigError(f"view.view_index must be -1 or below {d.num_views}")
        if self.infer.resolution < 2 or not 0.0 < self.infer.threshold < 1.0:
            raise ConfigError("infer.resolution must be >= 2 and infer.threshold in (0, 1)")
        if self.run.threads < 1:
            raise ConfigError("run.threads must be >= 1")
        try:
            self.sketch25d()
            self.train25d()
            self.decoder()
            self.voxel_encoder()
            self.implicit_train()
            self.view_encoder()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def stage1_hash(self) -> str:
        return _hash(self.sketch25d().structure())

    def stage2_hash(self) -> str:
        dec, enc, view = self.decoder(), self.voxel_encoder(), self.view_encoder()
        return _hash({"decoder": [dec.num_fc_layers, list(dec.hidden), dec.latent_dim],
                      "encoder": [enc.input_resolution, list(enc.channels)],
                      "view": [view.image_size, view.in_channels, list(view.channels)]})

    def to_text(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for f in dataclasses.fields(SECTIONS[name]):
                v = getattr(getattr(self, name), f.name)
                if isinstance(v, tuple):
                    v = ", ".join(str(x) for x in v)
                elif isinstance(v, bool):
                    v = "true" if v else "false"
                lines.append(f"{f.name} = {v}")
            lines.append("")
        return "\n".join(lines)


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


_BOOLS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _parse(value: str, tp, where: str):
    try:
        if tp is bool:
            if value.lower() not in _BOOLS:
                raise ValueError(f"not a boolean: {value!r}")
            return _BOOLS[value.lower()]
        if typing.get_origin(tp) is tuple:
            item = typing.get_args(tp)[0]
            return tuple(_parse(v.strip(), item, where) for v in value.split(",") if v.strip())
        return tp(value)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(text: str, source: str = "<string>") -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    sections = {}
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]; expected one of {sorted(SECTIONS)}")
        cls = SECTIONS[name]
        hints = typing.get_type_hints(cls)
        values = {}
        for key, raw in cp.items(name):
            if key not in hints:
                raise ConfigError(f"{source}: unknown key {key!r} in [{name}]")
            values[key] = _parse(raw, hints[key], f"{source} [{name}] {key}")
        sections[name] = cls(**values)
    return PipelineConfig(**sections)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    return parse_config(p.read_text(), str(p))
