"""Builders for the five-stage backbone family and the four-stage baseline.

``build_hiri_vit`` produces the published S/B/L variants. The four-stage
multi-stage-ViT baseline (``build_mvit_baseline``) is the ablation ladder
starting point; rows 1..6 progressively add CFFN, attention removal in the
early stages, BN, a conv stem, and inverted-residual downsampling.
"""

from __future__ import annotations

from .blocks import (
    ClassifierHead,
    ConvFFNBlock,
    ConvStem,
    CostRecorder,
    DownsampleA,
    DownsampleB,
    FFNBlock,
    HighResBlock,
    HighResStem,
    Module,
    PlainDownsample,
    TransformerBlock,
    ViTStem,
)
from .config import ModelConfig, StageSpec
from .engine import Tensor
from .errors import ConfigError, ShapeError
from .params import ParamTree, init_tree

_STEM_CLS = {"hr": HighResStem, "conv": ConvStem, "vit": ViTStem}
_DOWN_CLS = {"irds_a": DownsampleA, "irds_b": DownsampleB, "conv": PlainDownsample}


class Stage(Module):
    def __init__(self, blocks):
        super().__init__()
        self.blocks = []
        for i, b in enumerate(blocks, 1):
            self.blocks.append(self.add_child(f"block{i}", b))

    def forward(self, x):
        for b in self.blocks:
            x = b(x)
        return x

    def trace(self, in_shape, rec, path=""):
        s = in_shape
        for i, b in enumerate(self.blocks, 1):
            s = b.trace(s, rec, f"{path}.block{i}")
        return s


def _make_blocks(spec: StageSpec):
    blocks = []
    for _ in range(spec.depth):
        if spec.kind == "hr":
            blocks.append(HighResBlock(spec.channels, spec.expansion))
        elif spec.kind == "ffn":
            blocks.append(FFNBlock(spec.channels, spec.expansion, norm=spec.norm))
        elif spec.kind == "cffn":
            blocks.append(ConvFFNBlock(spec.channels, spec.expansion, norm=spec.norm))
        elif spec.kind == "transformer":
            blocks.append(TransformerBlock(
                spec.channels, spec.expansion, spec.heads, spec.sr_ratio,
                kv_reduce=spec.kv_reduce, attn_norm=spec.attn_norm,
                ffn_norm=spec.norm, use_cffn=spec.use_cffn))
        else:
            raise ConfigError(f"unknown stage kind {spec.kind!r}")
    return blocks


class Model(Module):
    """A built backbone: stem, interleaved downsamplers and stages, head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        grids = config.stage_grids()
        c_first = config.stages[0].channels
        self.stem = self.add_child("stem", _STEM_CLS[config.stem](3, c_first))
        self.stages = []
        self.downsamplers = []
        for i, spec in enumerate(config.stages):
            if i > 0:
                prev = config.stages[i - 1]
                ds = _DOWN_CLS[config.downsamplers[i - 1]](
                    prev.channels, spec.channels,
                    in_grid=grids[i - 1], out_grid=grids[i])
                self.downsamplers.append(self.add_child(f"ds{i}", ds))
            self.stages.append(self.add_child(f"stage{i + 1}", Stage(_make_blocks(spec))))
        self.head = self.add_child("head", ClassifierHead(
            config.stages[-1].channels, config.num_classes,
            hidden=config.head_hidden))

    # -- execution -------------------------------------------------------

    def forward_features(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected N x 3 x H x W input, got {x.shape}")
        x = self.stem(x)
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = self.downsamplers[i - 1](x)
            x = stage(x)
        return x

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.forward_features(x))

    def forward_dense_logits(self, x: Tensor) -> Tensor:
        """Per-position class logits: the head applied without pooling."""
        return self.head.forward_dense(self.forward_features(x))

    # -- analysis ----------------------------------------------------------

    def trace(self, in_shape, rec, path="model"):
        s = self.stem.trace(in_shape, rec, f"{path}.stem")
        for i, stage in enumerate(self.stages):
            if i > 0:
                s = self.downsamplers[i - 1].trace(s, rec, f"{path}.ds{i}")
            s = stage.trace(s, rec, f"{path}.stage{i + 1}")
        return self.head.trace(s, rec, f"{path}.head")

    def stage_boundary_shapes(self, in_shape):
        """Feature shape after every stage, by shape inference alone."""
        rec = CostRecorder()
        shapes = []
        s = self.stem.trace(in_shape, rec, "stem")
        for i, stage in enumerate(self.stages):
            if i > 0:
                s = self.downsamplers[i - 1].trace(s, rec, f"ds{i}")
            s = stage.trace(s, rec, f"stage{i + 1}")
            shapes.append(s)
        return shapes

    def param_tree(self) -> ParamTree:
        tree = ParamTree()
        for path, tensor, trainable in self.named_entries():
            tree.add(path, tensor, trainable)
        return tree

    def load_state(self, tree: ParamTree):
        tree.copy_into(self.param_tree())


def build_model(config: ModelConfig, seed: int = 0) -> tuple[Model, ParamTree]:
    model = Model(config)
    tree = model.param_tree()
    init_tree(tree, seed)
    return model, tree


# ---------------------------------------------------------------------------
# the published five-stage variants
# ---------------------------------------------------------------------------

# per stage: (kind, depth, channels, expansion, heads)
HIRI_VARIANTS = {
    "S": [("hr", 2, 32, 4, None), ("hr", 2, 64, 4, None),
          ("cffn", 2, 128, 6, None), ("transformer", 9, 320, 5, 5),
          ("transformer", 4, 512, 5, 8)],
    "B": [("hr", 2, 64, 4, None), ("hr", 2, 96, 4, None),
          ("cffn", 3, 192, 5, None), ("transformer", 17, 320, 4, 5),
          ("transformer", 4, 640, 5, 10)],
    "L": [("hr", 4, 80, 4, None), ("hr", 4, 160, 4, None),
          ("cffn", 5, 224, 5, None), ("transformer", 25, 448, 3, 7),
          ("transformer", 5, 640, 5, 10)],
}

SR_RATIOS = {3: 2, 4: 1}          # stage index (0-based) -> key/value reduction
REFERENCE_RESOLUTION = 448
HEAD_HIDDEN = 2048


def hiri_config(variant: str, resolution: int = REFERENCE_RESOLUTION,
                num_classes: int = 1000) -> ModelConfig:
    if variant not in HIRI_VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of S, B, L")
    stages = []
    for i, (kind, depth, channels, expansion, heads) in enumerate(HIRI_VARIANTS[variant]):
        stages.append(StageSpec(
            kind=kind, depth=depth, channels=channels, expansion=expansion,
            heads=heads, sr_ratio=SR_RATIOS.get(i, 1),
            norm="bn", attn_norm="ln", kv_reduce="pool"))
    cfg = ModelConfig(
        name=f"hiri_{variant.lower()}",
        resolution=(resolution, resolution),
        num_classes=num_classes,
        stem="hr",
        stages=stages,
        downsamplers=["irds_a", "irds_a", "irds_b", "irds_b"],
        head_hidden=HEAD_HIDDEN,
        anchor_resolution=REFERENCE_RESOLUTION,
    )
    cfg.validate()
    return cfg


def build_hiri_vit(variant: str, resolution: int = REFERENCE_RESOLUTION,
                   num_classes: int = 1000, seed: int = 0):
    """Build a published variant; returns (model, parameter tree)."""
    cfg = hiri_config(variant, resolution, num_classes)
    return build_model(cfg, seed)


def hiri_micro_config(resolution: int = 64, num_classes: int = 2) -> ModelConfig:
    """Five-stage miniature for smoke tests and training demos."""
    table = [("hr", 1, 8, 4, None), ("hr", 1, 16, 4, None),
             ("cffn", 1, 24, 4, None), ("transformer", 1, 32, 4, 2),
             ("transformer", 1, 40, 4, 4)]
    stages = [StageSpec(kind=k, depth=d, channels=c, expansion=e, heads=h,
                        sr_ratio=1, norm="bn", attn_norm="ln")
              for k, d, c, e, h in table]
    cfg = ModelConfig(
        name="hiri_micro",
        resolution=(resolution, resolution),
        num_classes=num_classes,
        stem="hr",
        stages=stages,
        downsamplers=["irds_a", "irds_a", "irds_b", "irds_b"],
        head_hidden=None,
        anchor_resolution=None,
    )
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# four-stage baseline ladder
# ---------------------------------------------------------------------------

MVIT_CHANNELS = (64, 128, 320, 512)
MVIT_HEADS = (1, 2, 5, 8)
MVIT_EXPANSIONS = (8, 8, 4, 4)
MVIT_DEPTHS = (3, 4, 3, 8)
MVIT_SR = (8, 4, 1, 1)
MVIT_WIDE_EXPANSION = 10          # replaces E in stages 1-2 once MHA is removed

MVIT_ROW_NAMES = {
    1: "baseline",
    2: "cffn",
    3: "no_early_mha",
    4: "batch_norm",
    5: "conv_stem",
    6: "irds",
}


def mvit_config(row: int = 6, resolution: int = 224,
                num_classes: int = 1000) -> ModelConfig:
    """Ablation-ladder configuration; ``row`` selects the upgrade level."""
    if row not in MVIT_ROW_NAMES:
        raise ConfigError(f"ladder row must be 1..6, got {row}")
    use_cffn = row >= 2
    early_mha = row < 3
    norm_early = "bn" if row >= 4 else "ln"
    norm_ffn_late = "bn" if row >= 4 else "ln"
    stem = "conv" if row >= 5 else "vit"
    ds = ["irds_a", "irds_a", "irds_b"] if row >= 6 else ["conv", "conv", "conv"]

    stages = []
    for i in range(4):
        if i < 2 and not early_mha:
            stages.append(StageSpec(
                kind="cffn", depth=MVIT_DEPTHS[i], channels=MVIT_CHANNELS[i],
                expansion=MVIT_WIDE_EXPANSION, norm=norm_early))
        else:
            kind = "transformer"
            ffn_norm = norm_early if i < 2 else (norm_ffn_late if use_cffn else "ln")
            stages.append(StageSpec(
                kind=kind, depth=MVIT_DEPTHS[i], channels=MVIT_CHANNELS[i],
                expansion=MVIT_EXPANSIONS[i], heads=MVIT_HEADS[i],
                sr_ratio=MVIT_SR[i], norm=ffn_norm, attn_norm="ln",
                use_cffn=use_cffn, kv_reduce="conv" if MVIT_SR[i] > 1 else "none"))
    cfg = ModelConfig(
        name=f"mvit_row{row}_{MVIT_ROW_NAMES[row]}",
        resolution=(resolution, resolution),
        num_classes=num_classes,
        stem=stem,
        stages=stages,
        downsamplers=ds,
        head_hidden=None,
        anchor_resolution=None,
    )
    cfg.validate()
    return cfg


def build_mvit_baseline(row=6, resolution: int = 224,
                        num_classes: int = 1000, seed: int = 0):
    """Build one ablation-ladder row (or an explicit stage table).

    ``row`` is a ladder level 1..6, or a full :class:`ModelConfig` when a
    custom four-stage table is wanted. Returns (model, parameter tree).
    """
    if isinstance(row, ModelConfig):
        return build_model(row, seed)
    cfg = mvit_config(row, resolution, num_classes)
    return build_model(cfg, seed)


def forward(model: Model, images: Tensor) -> Tensor:
    """Run a built model on an image batch; returns class logits."""
    return model(images)
