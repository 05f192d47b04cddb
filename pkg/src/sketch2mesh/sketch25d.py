"""Sketch to multi-view 2.5D maps: U-net encoder / multi-view decoder and its losses.

The generator maps a ``1 x S x S`` line drawing to ``V`` five-channel maps
(depth, normal xyz, foreground). A per-view discriminator scores five-channel
maps as real or generated.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .nn import Graph, ParamStore, Tensor, adam_step
from .nn import ops
from .nn.checkpoint import config_entry, write_checkpoint

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


def default_encoder_channels(image_size: int) -> tuple[int, ...]:
    """Stride-2 layer widths taking ``image_size`` down to 2x2 with 512 maps at the bottom."""
    layers = int(np.log2(image_size)) - 1
    if image_size == 256:
        return (64, 128, 256, 512, 512, 512, 512)
    return tuple(min(16 * 2 ** i, 128) for i in range(layers - 1)) + (512,)


@dataclass
class Sketch25DConfig:
    image_size: int = 64
    num_views: int = 12
    encoder_channels: tuple[int, ...] = ()
    disc_channels: tuple[int, ...] = (8, 16, 32, 64)
    lambdas: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 0.01)
    slope: float = 0.2
    dropout: float = 0.5
    dropout_layers: int = 3
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    separate_decoders: bool = False
    seed: int = 0

    def __post_init__(self):
        s = self.image_size
        if s < 16 or s & (s - 1):
            raise ValueError(f"image_size must be a power of two >= 16, got {s}")
        if not self.encoder_channels:
            self.encoder_channels = default_encoder_channels(s)
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.disc_channels = tuple(int(c) for c in self.disc_channels)
        self.lambdas = tuple(float(x) for x in self.lambdas)
        if len(self.encoder_channels) != int(np.log2(s)) - 1:
            raise ValueError(f"image_size {s} needs {int(np.log2(s)) - 1} encoder layers, "
                             f"got {len(self.encoder_channels)}")
        if self.encoder_channels[-1] != 512:
            raise ValueError("the encoder must end in 512 feature maps")
        if len(self.lambdas) != 4:
            raise ValueError("lambdas needs four weights")
        if self.num_views not in (12, 14):
            raise ValueError("num_views must be 12 or 14")

    def structure(self) -> dict:
        d = asdict(self)
        for k in ("lambdas", "dropout", "seed", "bn_momentum"):
            d.pop(k)
        return d


class Sketch25DModel:
    """Generator and discriminator parameter stores plus the forward passes."""

    def __init__(self, config: Sketch25DConfig):
        self.config = config
        self.gen = ParamStore("gen")
        self.disc = ParamStore("disc")
        rng = np.random.default_rng(config.seed)
        ch = config.encoder_channels
        prev = 1
        for i, c in enumerate(ch):
            ops.init_conv(self.gen, f"gen.enc{i}", prev, c, 4, rng)
            ops.init_batchnorm(self.gen, f"gen.enc{i}.bn", c)
            prev = c
        heads = range(config.num_views) if config.separate_decoders else [None]
        for h in heads:
            self._init_decoder(rng, self._decoder_prefix(h), 5 if h is not None else 5 * config.num_views)
        prev = 5
        for i, c in enumerate(config.disc_channels):
            ops.init_conv(self.disc, f"disc.conv{i}", prev, c, 4, rng)
            prev = c
        side = config.image_size >> len(config.disc_channels)
        ops.init_dense(self.disc, "disc.fc", prev * side * side, 1, rng)

    @staticmethod
    def _decoder_prefix(head: Optional[int]) -> str:
        return "gen.dec" if head is None else f"gen.dec{head}"

    def _init_decoder(self, rng, prefix: str, out_channels: int) -> None:
        ch = self.config.encoder_channels
        L = len(ch)
        prev = ch[-1]
        for j in range(L - 1):
            skip = ch[L - 2 - j]
            ops.init_conv(self.gen, f"{prefix}.up{j}", prev + skip, skip, 3, rng)
            ops.init_batchnorm(self.gen, f"{prefix}.up{j}.bn", skip)
            prev = skip
        ops.init_conv(self.gen, f"{prefix}.out", prev + 1, out_channels, 3, rng)

    # ------------------------------------------------------------ forward

    def _check_input(self, sketch: np.ndarray) -> np.ndarray:
        s = self.config.image_size
        x = np.asarray(sketch, dtype=np.float64)
        if x.ndim == 2:
            x = x[None, None]
        elif x.ndim == 3:
            x = x[:, None]
        if x.shape[1:] != (1, s, s):
            raise ValueError(f"sketch must be 1 x {s} x {s}, got {x.shape[1:]}")
        return x

    def encode(self, x: Tensor) -> list[Tensor]:
        cfg = self.config
        feats = []
        h = x
        for i in range(len(cfg.encoder_channels)):
            h = ops.conv2d(h, f"gen.enc{i}", stride=2, pad=1)
            h = ops.batchnorm(h, f"gen.enc{i}.bn", cfg.bn_eps, cfg.bn_momentum)
            h = ops.leaky_relu(h, cfg.slope)
            feats.append(h)
        if h.shape[1:] != (512, 2, 2):
            raise AssertionError(f"bottleneck shape {h.shape[1:]} != (512, 2, 2)")
        return feats

    def decode(self, x: Tensor, feats: list[Tensor], prefix: str,
               zero_skip: Optional[int] = None) -> Tensor:
        cfg = self.config
        L = len(feats)
        h = feats[-1]
        for j in range(L - 1):
            skip = feats[L - 2 - j]
            if zero_skip == L - 2 - j:
                skip = skip * 0.0
            h = ops.concat_channels(ops.upsample_nearest(h, 2), skip)
            h = ops.conv2d(h, f"{prefix}.up{j}", stride=1, pad=1)
            h = ops.batchnorm(h, f"{prefix}.up{j}.bn", cfg.bn_eps, cfg.bn_momentum)
            h = ops.leaky_relu(h, cfg.slope)
            if j < cfg.dropout_layers:
                h = ops.dropout(h, cfg.dropout)
        h = ops.concat_channels(ops.upsample_nearest(h, 2), x)
        return ops.conv2d(h, f"{prefix}.out", stride=1, pad=1)

    def forward(self, g: Graph, sketch: np.ndarray | Tensor, zero_skip: Optional[int] = None):
        """Predicted ``(depth, normal, mask)`` tensors shaped ``B x V x S x S``,
        ``B x V x 3 x S x S`` and ``B x V x S x S``."""
        cfg = self.config
        x = sketch if isinstance(sketch, Tensor) else g.constant(self._check_input(sketch))
        feats = self.encode(x)
        B, S, V = x.shape[0], cfg.image_size, cfg.num_views
        if cfg.separate_decoders:
            raw = [self.decode(x, feats, self._decoder_prefix(v), zero_skip).reshape(B, 1, 5, S, S)
                   for v in range(V)]
            out = raw[0]
            for r in raw[1:]:
                out = _concat_axis1(out, r)
        else:
            out = self.decode(x, feats, self._decoder_prefix(None), zero_skip).reshape(B, V, 5, S, S)
        depth = ops.tanh(out[:, :, 0])
        normal = ops.l2_normalize(out[:, :, 1:4], axis=2)
        mask = ops.sigmoid(out[:, :, 4])
        return depth, normal, mask

    def discriminate(self, g: Graph, maps: Tensor) -> Tensor:
        """Probability of "real" for each ``5 x S x S`` map; returns shape ``N x 1``."""
        h = maps
        for i in range(len(self.config.disc_channels)):
            h = ops.leaky_relu(ops.conv2d(h, f"disc.conv{i}", stride=2, pad=1), self.config.slope)
        return ops.sigmoid(ops.dense(ops.flatten(h), "disc.fc"))

    def predict(self, sketch: np.ndarray) -> np.ndarray:
        """Evaluation-mode forward; returns ``B x V x 5 x S x S`` as a numpy array."""
        g = Graph(self.gen, train=False)
        d, n, m = self.forward(g, sketch)
        g.release()
        return pack_maps(d.data, n.data, m.data)

    def num_parameters(self) -> int:
        return self.gen.num_parameters() + self.disc.num_parameters()

    def entries(self) -> dict[str, np.ndarray]:
        e = self.gen.to_entries()
        e.update(self.disc.to_entries())
        return e

    def load_entries(self, entries: dict[str, np.ndarray]) -> None:
        self.gen.load_entries(entries)
        self.disc.load_entries(entries)


def _concat_axis1(a: Tensor, b: Tensor) -> Tensor:
    na = a.shape[1]
    return a.graph.record(np.concatenate([a.data, b.data], axis=1), (a, b),
                          lambda gr: (gr[:, :na], gr[:, na:]))


def pack_maps(depth: np.ndarray, normal: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.concatenate([depth[:, :, None], normal, mask[:, :, None]], axis=2)


def maps_as_tensor(g: Graph, depth: Tensor, normal: Tensor, mask: Tensor) -> Tensor:
    """Stack predicted channels into ``(B*V) x 5 x S x S`` for the discriminator."""
    B, V, S = depth.shape[0], depth.shape[1], depth.shape[2]
    d = depth.reshape(B, V, 1, S, S)
    m = mask.reshape(B, V, 1, S, S)
    out = _concat_axis1(d.transpose(0, 2, 1, 3, 4), normal.transpose(0, 2, 1, 3, 4))
    out = _concat_axis1(out, m.transpose(0, 2, 1, 3, 4))       # B x 5 x V x S x S
    return out.transpose(0, 2, 1, 3, 4).reshape(B * V, 5, S, S)


# ---------------------------------------------------------------- losses

def loss_depth(pred: Tensor, gt: np.ndarray, fg: np.ndarray) -> Tensor:
    """Foreground-masked L1 depth error, summed over pixels, views and batch."""
    return ((pred - gt).abs() * fg).sum()


def loss_normal(pred: Tensor, gt: np.ndarray, fg: np.ndarray) -> Tensor:
    """Foreground-masked ``1 - cos`` normal error; the channel axis is ``-3``."""
    cos = (pred * gt).sum(axis=-3)
    return ((1.0 - cos) * fg).sum()


def loss_mask(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Binary cross-entropy summed over pixels and views."""
    p = pred.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(p.log() * gt + (1.0 - p).log() * (1.0 - gt)).sum()


def loss_adversarial(prob_fake: Tensor) -> Tensor:
    """Generator term: ``-sum log D(fake)``."""
    return -prob_fake.clip(PROB_CLAMP, 1.0 - PROB_CLAMP).log().sum()


def discriminator_loss(prob_real: Tensor, prob_fake: Tensor) -> Tensor:
    """``-sum [log D(real) + log(1 - D(fake))]``."""
    pr = prob_real.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    pf = prob_fake.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(pr.log().sum() + (1.0 - pf).log().sum())


def split_gt(maps: np.ndarray):
    """``B x V x 5 x S x S`` ground truth into depth, normal, foreground arrays."""
    maps = np.asarray(maps, dtype=np.float64)
    return maps[:, :, 0], maps[:, :, 1:4], maps[:, :, 4]


def total_loss_25d(model: Sketch25DModel, g: Graph, sketches: np.ndarray, gt_maps: np.ndarray,
                   lambdas: Optional[Sequence[float]] = None):
    """Weighted four-term loss.

    Returns ``(total, terms, (depth, normal, mask))``; ``terms`` is keyed by name.
    """
    lam = model.config.lambdas if lambdas is None else tuple(lambdas)
    depth, normal, mask = model.forward(g, sketches)
    gd, gn, gf = split_gt(gt_maps)
    terms = {
        "depth": loss_depth(depth, gd, gf),
        "normal": loss_normal(normal, gn, gf),
        "mask": loss_mask(mask, gf),
    }
    if lam[3] != 0.0:
        terms["adv"] = loss_adversarial(model.discriminate(g, maps_as_tensor(g, depth, normal, mask)))
    total = terms["depth"] * lam[0] + terms["normal"] * lam[1] + terms["mask"] * lam[2]
    if "adv" in terms:
        total = total + terms["adv"] * lam[3]
    return total, terms, (depth, normal, mask)


# ---------------------------------------------------------------- reporting

def per_pixel_metrics(pred_maps: np.ndarray, gt_maps: np.ndarray) -> dict[str, float]:
    """Per-foreground-pixel depth L1 and mean normal angle (degrees) over ground-truth foreground."""
    pd, pn, pm = split_gt(pred_maps)
    gd, gn, gf = split_gt(gt_maps)
    fg = gf >= 0.5
    count = max(int(fg.sum()), 1)
    # atan2 keeps small angles accurate where arccos would not
    angle = np.arctan2(np.linalg.norm(np.cross(pn, gn, axis=2), axis=2), (pn * gn).sum(axis=2))
    return {
        "depth_l1": float(np.abs(pd - gd)[fg].sum() / count),
        "normal_deg": float(np.degrees(angle[fg]).sum() / count),
        "mask_acc": float(((pm >= 0.5) == fg).mean()),
    }


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    steps: int = 400
    lr: float = 1e-3
    disc_lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 4
    checkpoint_every: int = 0
    seed: int = 0


@dataclass
class TrainResult:
    trace: list[dict] = field(default_factory=list)
    step: int = 0


def train_25d(model: Sketch25DModel, sketches: np.ndarray, gt_maps: np.ndarray, train: TrainConfig,
              start_step: int = 0, checkpoint_dir: Optional[Path] = None, config_hash: str = "",
              trace: Optional[list[dict]] = None) -> TrainResult:
    """Alternate one discriminator and one generator Adam step per iteration.

    ``sketches`` is ``T x S x S``; ``gt_maps`` is ``T x V x 5 x S x S``. Batches are
    drawn from a permutation seeded by ``(seed, epoch)``, so a resumed run sees the
    same batches as an uninterrupted one.
    """
    sketches = np.asarray(sketches, dtype=np.float64)
    gt_maps = np.asarray(gt_maps, dtype=np.float64)
    T = len(sketches)
    if T == 0:
        raise ValueError("empty training set")
    bs = min(train.batch_size, T)
    if bs < 2:
        raise ValueError("batch-norm training needs at least 2 examples per batch")
    lam = model.config.lambdas
    use_adv = lam[3] != 0.0
    result = TrainResult(trace=list(trace or []), step=start_step)
    per_epoch = T // bs
    for step in range(start_step, train.steps):
        epoch, k = divmod(step, per_epoch)
        perm = np.random.default_rng([train.seed, epoch]).permutation(T)
        idx = np.sort(perm[k * bs:(k + 1) * bs])
        x, y = sketches[idx], gt_maps[idx]
        g = Graph(model.gen, model.disc, rng=np.random.default_rng([train.seed, step, 1]))
        depth, normal, mask = model.forward(g, x)
        rec: dict = {"step": step + 1}
        if use_adv:
            # discriminator step on detached fakes
            gd = Graph(model.disc)
            fake = gd.constant(pack_maps(depth.data, normal.data, mask.data).reshape(-1, 5, *depth.shape[2:]))
            real = gd.constant(y.reshape(-1, 5, *y.shape[3:]))
            dl = discriminator_loss(model.discriminate(gd, real), model.discriminate(gd, fake))
            gd.backward(dl)
            adam_step(model.disc, train.disc_lr, train.beta1, train.beta2)
            rec["disc"] = dl.item()
        gdp, gn, gf = split_gt(y)
        terms = {"depth": loss_depth(depth, gdp, gf), "normal": loss_normal(normal, gn, gf),
                 "mask": loss_mask(mask, gf)}
        total = terms["depth"] * lam[0] + terms["normal"] * lam[1] + terms["mask"] * lam[2]
        if use_adv:
            terms["adv"] = loss_adversarial(model.discriminate(g, maps_as_tensor(g, depth, normal, mask)))
            total = total + terms["adv"] * lam[3]
        g.backward(total)
        adam_step(model.gen, train.lr, train.beta1, train.beta2)
        rec["total"] = total.item()
        rec.update({k: v.item() for k, v in terms.items()})
        fg = max(float(gf.sum()), 1.0)
        rec["depth_per_fg"] = rec["depth"] / fg
        result.trace.append(rec)
        result.step = step + 1
        if checkpoint_dir is not None and train.checkpoint_every and result.step % train.checkpoint_every == 0:
            save_stage1(model, Path(checkpoint_dir) / f"stage1_step{result.step:06d}.ckpt", result.step, config_hash)
        if result.step % 50 == 0:
            log.info("stage1 step %d total %.4g depth/fg %.4f", result.step, rec["total"], rec["depth_per_fg"])
    return result


def save_stage1(model: Sketch25DModel, path: Path, step: int, config_hash: str) -> None:
    entries = model.entries()
    entries["__step"] = np.array([step], dtype=np.float64)
    entries.update(config_entry(config_hash))
    write_checkpoint(path, entries)


def write_trace(trace: list[dict], path: Path) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in trace))


def smoothed(values: Sequence[float], window: int = 100) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy()
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window
