"""HRAN assembly: residual attention feature groups, hierarchical banks and variants."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import List, Mapping, NamedTuple, Optional

import numpy as np

from .autodiff import DimensionError, Tensor, add
from .config import ModelConfig, make_rng
from .layers import Bank, Composite, Conv, ResidualBlock, Upsampler, make_attention


class RafgOutput(NamedTuple):
    out: Tensor
    fbank_out: Optional[Tensor]
    abank_out: Optional[Tensor]
    rb_outputs: List[Tensor]


class RAFG(Composite):
    """Residual attention feature group.

    The residual path chains the blocks. In the parallel layout each block
    output is also gated by its own attention layer; the gated maps feed the
    attention bank while the raw block outputs feed the feature bank, and the
    two bank outputs are summed. In-place attention gates the residual branch
    inside each block instead and drops the attention bank.
    """

    kind = "rafg"

    def __init__(self, name: str, cfg: ModelConfig):
        super().__init__(name)
        C, B, wn = cfg.channels, cfg.blocks_per_rafg, cfg.weight_norm
        self.channels = C
        in_place = cfg.placement == "in_place"
        parallel = cfg.attention != "none" and not in_place

        def att(prefix, index=""):
            return make_attention(cfg.attention, prefix, C, index, cfg.ca_reduction, cfg.eca_kernel)

        self.blocks = [ResidualBlock(f"{name}.rb{j}", C, wn, att(f"{name}.", j) if in_place else None)
                       for j in range(B)]
        self.attentions = [att(f"{name}.", j) for j in range(B)] if parallel else []
        plain = cfg.attention == "none" and not cfg.banks
        self.fbank = None if plain else Bank(f"{name}.fbank", B, C, wn)
        self.abank = Bank(f"{name}.abank", B, C, wn, att(f"{name}.abank.")) if parallel else None

    def sublayers(self):
        extra = [layer for layer in (self.fbank, self.abank) if layer is not None]
        return self.blocks + self.attentions + extra

    def __call__(self, p, x) -> RafgOutput:
        self._check_channels(x, self.channels)
        h, rb_outputs = x, []
        for block in self.blocks:
            h = block(p, h)
            rb_outputs.append(h)
        fbank_out = self.fbank(p, rb_outputs) if self.fbank is not None else None
        abank_out = None
        if self.abank is not None:
            gated = [a(p, r) for a, r in zip(self.attentions, rb_outputs)]
            abank_out = self.abank(p, gated)
        if fbank_out is None:
            out = h
        elif abank_out is None:
            out = fbank_out
        else:
            out = add(fbank_out, abank_out)
        return RafgOutput(out, fbank_out, abank_out, rb_outputs)


@dataclass
class ParamCount:
    total: int
    table: "OrderedDict[str, tuple]"

    def by_layer(self) -> "OrderedDict[str, int]":
        out: "OrderedDict[str, int]" = OrderedDict()
        for name, shape in self.table.items():
            layer = name.rsplit(".", 1)[0]
            out[layer] = out.get(layer, 0) + int(np.prod(shape, dtype=np.int64))
        return out

    def format_table(self) -> str:
        rows = [(name, "x".join(map(str, shape)), int(np.prod(shape, dtype=np.int64)))
                for name, shape in self.table.items()]
        width = max([len(r[0]) for r in rows] + [5])
        swidth = max([len(r[1]) for r in rows] + [5])
        lines = [f"{name:<{width}}  {shp:>{swidth}}  {n:>10,d}" for name, shp, n in rows]
        lines.append(f"{'total':<{width}}  {'':>{swidth}}  {self.total:>10,d}")
        return "\n".join(lines)

    def format_kv(self) -> str:
        lines = [f"param={name} shape={'x'.join(map(str, shape))} count={int(np.prod(shape, dtype=np.int64))}"
                 for name, shape in self.table.items()]
        lines.append(f"total={self.total}")
        return "\n".join(lines)


class HRAN:
    """Hierarchical residual attention network.

    ``F0 = conv3x3(I_LR)``; the RAFGs are chained from ``F0``; global banks
    aggregate the per-group bank outputs; ``F0`` is added back before the
    sub-pixel upsampler. Parameters are plain float32 arrays in ``params``.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, params: Optional[Mapping[str, np.ndarray]] = None):
        self.config = cfg = config
        C, wn = cfg.channels, cfg.weight_norm
        self.head = Conv("head.conv0", 3, C, 3, wn)
        self.rafgs = [RAFG(f"rafg{i}", cfg) for i in range(cfg.num_rafgs)]
        parallel = cfg.attention != "none" and cfg.placement == "parallel"
        self.global_fbank = Bank("global.fbank", cfg.num_rafgs, C, wn) if cfg.banks else None
        self.global_abank = None
        if cfg.banks and parallel:
            att = make_attention(cfg.attention, "global.abank.", C, "", cfg.ca_reduction, cfg.eca_kernel)
            self.global_abank = Bank("global.abank", cfg.num_rafgs, C, wn, att)
        self.upsampler = Upsampler("head", C, cfg.scale, wn)
        self.layers = [self.head] + self.rafgs + [b for b in (self.global_fbank, self.global_abank) if b] \
            + [self.upsampler]
        if params is None:
            rng = make_rng(seed)
            params = OrderedDict()
            for layer in self.layers:
                params.update(layer.init_params(rng))
        else:
            self._check_param_set(params)
            params = OrderedDict((k, np.array(params[k], dtype=np.float32)) for k in self.param_shapes())
        self.params = params

    def param_shapes(self) -> "OrderedDict[str, tuple]":
        shapes: "OrderedDict[str, tuple]" = OrderedDict()
        for layer in self.layers:
            for name, shape in layer.param_shapes().items():
                if name in shapes:
                    raise RuntimeError(f"duplicate parameter name {name}")
                shapes[name] = tuple(shape)
        return shapes

    def _check_param_set(self, params):
        expected = self.param_shapes()
        missing = sorted(set(expected) - set(params))
        unknown = sorted(set(params) - set(expected))
        if missing or unknown:
            raise KeyError(f"parameter set mismatch: missing={missing[:5]} unknown={unknown[:5]}")
        for name, shape in expected.items():
            if tuple(np.shape(params[name])) != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {np.shape(params[name])}")

    def _tensors(self, params):
        if params is None:
            params = self.params
        return {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}

    def trunk(self, x, params=None):
        """Return ``(F, F0, rafg outputs)`` for an LR batch."""
        p = self._tensors(params)
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype_of(p)))
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"expected an (n, 3, h, w) batch, got shape {x.shape}")
        if not np.isfinite(x.data).all():
            raise ValueError("input contains non-finite values")
        f0 = self.head(p, x)
        h, outs = f0, []
        for rafg in self.rafgs:
            r = rafg(p, h)
            outs.append(r)
            h = r.out
        if self.global_fbank is None:
            trunk = h
        else:
            srcs = [r.fbank_out if r.fbank_out is not None else r.out for r in outs]
            trunk = self.global_fbank(p, srcs)
            if self.global_abank is not None:
                trunk = add(trunk, self.global_abank(p, [r.abank_out for r in outs]))
        return add(trunk, f0), f0, outs

    @staticmethod
    def dtype_of(p):
        for v in p.values():
            return v.dtype
        return np.float32

    def forward(self, x, params=None) -> Tensor:
        """Unclamped SR output ``(n, 3, s*h, s*w)``; differentiable if ``params`` are tracked."""
        p = self._tensors(params)
        feat, _, _ = self.trunk(x, p)
        return self.upsampler(p, feat)

    def predict(self, x) -> np.ndarray:
        """Inference: forward pass clamped to [0, 1]."""
        return np.clip(self.forward(x).data, 0.0, 1.0)

    def count_params(self) -> ParamCount:
        table = self.param_shapes()
        total = sum(int(np.prod(s, dtype=np.int64)) for s in table.values())
        return ParamCount(total, table)


def build_variant(config: ModelConfig, seed: int = 0) -> HRAN:
    """Build the model for an ablation configuration.

    * ``attention="none", banks=False``: plain stacked residual blocks.
    * ``placement="in_place"``: attention gates each block's branch; no attention banks.
    * ``banks=False``: no global banks; the last group output plus ``F0`` feeds the upsampler.
    """
    return HRAN(config, seed)


def count_params(model: HRAN) -> ParamCount:
    return model.count_params()


def average_feature_map(t: np.ndarray) -> np.ndarray:
    """Channel-mean of the first sample, min-max scaled to uint8 (constant maps become 128)."""
    m = np.asarray(t, dtype=np.float64)[0].mean(axis=0)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.full(m.shape, 128, dtype=np.uint8)
    return np.floor((m - lo) / (hi - lo) * 255 + 0.5).astype(np.uint8)


def dump_feature_maps(model: HRAN, lr: np.ndarray, out_dir) -> list:
    """Write ``rafg{i}_rb{j}.png`` and ``rafg{i}_out.png`` for the first image of ``lr``."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, _, outs = model.trunk(lr)
    written = []
    for i, r in enumerate(outs):
        maps = [(f"rafg{i}_rb{j}.png", rb.data) for j, rb in enumerate(r.rb_outputs)]
        maps.append((f"rafg{i}_out.png", r.out.data))
        for fname, arr in maps:
            path = out_dir / fname
            Image.fromarray(average_feature_map(arr), mode="L").save(path, format="PNG")
            written.append(path)
    return written
