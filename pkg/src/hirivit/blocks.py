"""Building blocks: stems, high-resolution blocks, downsamplers, attention.

Every module supports three consistent views of the same structure:

* ``forward(x)``       -- runs the math on Tensors,
* ``trace(shape, rec)``-- shape inference plus static cost accounting
                          (multiply-accumulates and elementwise op counts),
* parameter registry   -- named tensors collected into a ParamTree.

``trace`` must mirror ``forward`` exactly; the analyzer's loop-executed MAC
oracle checks that they agree.
"""

from __future__ import annotations

import numpy as np

from .engine import Tensor, ops
from .errors import ConfigError, ResolutionError, ShapeError


class CostRecorder:
    """Accumulates per-layer cost records during a trace pass."""

    def __init__(self):
        self.records = []          # (path, params, macs, elementwise, activations)

    def add(self, path, params=0, macs=0, elementwise=0, activations=0):
        self.records.append((path, int(params), int(macs), int(elementwise),
                             int(activations)))


_NULL_REC = CostRecorder()


class Module:
    """Minimal module tree: named parameters, buffers, children, train mode."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}
        self.training = True

    # -- registry ------------------------------------------------------

    def add_param(self, name: str, shape) -> Tensor:
        p = Tensor(np.zeros(shape, dtype=np.float64), requires_grad=True)
        self._params[name] = p
        return p

    def add_buffer(self, name: str, array: np.ndarray) -> Tensor:
        b = Tensor(np.asarray(array, dtype=np.float64))
        self._buffers[name] = b
        return b

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_entries(self, prefix: str = ""):
        """(path, tensor, trainable) for params and buffers, depth-first."""
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p, True)
        for name, b in self._buffers.items():
            yield (f"{prefix}{name}", b, False)
        for name, child in self._children.items():
            yield from child.named_entries(f"{prefix}{name}.")

    def param_count(self) -> int:
        return sum(p.size for _, p, trainable in self.named_entries() if trainable)

    def own_param_count(self) -> int:
        return sum(p.size for p in self._params.values())

    def train(self, mode: bool = True):
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    # -- interface -------------------------------------------------------

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def trace(self, in_shape, rec: CostRecorder, path: str = ""):
        raise NotImplementedError

    def out_shape(self, in_shape):
        return self.trace(tuple(in_shape), CostRecorder())


# ---------------------------------------------------------------------------
# leaf layers
# ---------------------------------------------------------------------------

class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=None, groups=1,
                 bias=True):
        super().__init__()
        if cin % groups or cout % groups:
            raise ConfigError(
                f"conv channels ({cin}->{cout}) not divisible by groups={groups}")
        self.cin, self.cout, self.kernel = cin, cout, kernel
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        self.weight = self.add_param("weight", (cout, cin // groups, kernel, kernel))
        self.bias = self.add_param("bias", (cout,)) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias,
                          stride=self.stride, padding=self.padding,
                          groups=self.groups)

    def trace(self, in_shape, rec, path=""):
        n, c, h, w = in_shape
        if c != self.cin:
            raise ShapeError(f"{path}: expected {self.cin} channels, got {c}")
        oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ResolutionError(f"{path}: {h}x{w} underflows through conv")
        macs = n * self.cout * oh * ow * (self.cin // self.groups) * self.kernel ** 2
        acts = n * self.cout * oh * ow
        rec.add(path, params=self.own_param_count(), macs=macs, activations=acts)
        return (n, self.cout, oh, ow)


class Linear(Module):
    def __init__(self, din, dout, bias=True):
        super().__init__()
        self.din, self.dout = din, dout
        self.weight = self.add_param("weight", (dout, din))
        self.bias = self.add_param("bias", (dout,)) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)

    def trace(self, in_shape, rec, path=""):
        if in_shape[-1] != self.din:
            raise ShapeError(f"{path}: expected feature axis {self.din}, got {in_shape[-1]}")
        tokens = int(np.prod(in_shape[:-1]))
        rec.add(path, params=self.own_param_count(),
                macs=tokens * self.din * self.dout,
                activations=tokens * self.dout)
        return in_shape[:-1] + (self.dout,)


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        if eps <= 0:
            raise ConfigError(f"batch norm eps must be positive, got {eps}")
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.gamma = self.add_param("gamma", (channels,))
        self.beta = self.add_param("beta", (channels,))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels))
        self.running_var = self.add_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return ops.batch_norm(x, self.gamma, self.beta,
                              self.running_mean.data, self.running_var.data,
                              self.training, self.momentum, self.eps)

    def trace(self, in_shape, rec, path=""):
        elems = int(np.prod(in_shape))
        rec.add(path, params=self.own_param_count(), elementwise=elems,
                activations=elems)
        return in_shape


class LayerNorm2d(Module):
    """Per-position normalization over the channel axis of an NCHW map."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.channels, self.eps = channels, eps
        self.gamma = self.add_param("gamma", (channels,))
        self.beta = self.add_param("beta", (channels,))

    def forward(self, x):
        xt = ops.transpose(x, (0, 2, 3, 1))
        yt = ops.layer_norm(xt, self.gamma, self.beta, self.eps)
        return ops.transpose(yt, (0, 3, 1, 2))

    def trace(self, in_shape, rec, path=""):
        elems = int(np.prod(in_shape))
        rec.add(path, params=self.own_param_count(), elementwise=elems,
                activations=elems)
        return in_shape


class LayerNorm(Module):
    """Last-axis normalization for token tensors."""

    def __init__(self, dim, eps=1e-6):
        super().__init__()
        self.dim, self.eps = dim, eps
        self.gamma = self.add_param("gamma", (dim,))
        self.beta = self.add_param("beta", (dim,))

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)

    def trace(self, in_shape, rec, path=""):
        elems = int(np.prod(in_shape))
        rec.add(path, params=self.own_param_count(), elementwise=elems,
                activations=elems)
        return in_shape


def make_norm2d(kind: str, channels: int) -> Module:
    if kind == "bn":
        return BatchNorm2d(channels)
    if kind == "ln":
        return LayerNorm2d(channels)
    raise ConfigError(f"unknown norm kind {kind!r}")


class GELU(Module):
    def forward(self, x):
        return ops.gelu(x)

    def trace(self, in_shape, rec, path=""):
        elems = int(np.prod(in_shape))
        rec.add(path, elementwise=elems, activations=elems)
        return in_shape


class AvgPoolHalve(Module):
    """Adaptive 2x spatial reduction (matches strided-conv ceil semantics)."""

    def forward(self, x):
        n, c, h, w = x.shape
        return ops.adaptive_avg_pool2d(x, (-(-h // 2), -(-w // 2)))

    def trace(self, in_shape, rec, path=""):
        n, c, h, w = in_shape
        oh, ow = -(-h // 2), -(-w // 2)
        rec.add(path, elementwise=n * c * oh * ow, activations=n * c * oh * ow)
        return (n, c, oh, ow)


class AvgPoolTo(Module):
    """Adaptive average pooling to a fixed target grid."""

    def __init__(self, target_hw):
        super().__init__()
        self.target_hw = tuple(target_hw)

    def forward(self, x):
        return ops.adaptive_avg_pool2d(x, self.target_hw)

    def trace(self, in_shape, rec, path=""):
        n, c = in_shape[:2]
        oh, ow = self.target_hw
        rec.add(path, elementwise=n * c * oh * ow, activations=n * c * oh * ow)
        return (n, c, oh, ow)


class Identity(Module):
    def forward(self, x):
        return x

    def trace(self, in_shape, rec, path=""):
        return in_shape


# ---------------------------------------------------------------------------
# composite blocks
# ---------------------------------------------------------------------------

class HighResStem(Module):
    """Two-branch stem reducing an image to quarter resolution.

    A strided 3x3 conv halves the input; a cheap high-resolution branch
    (depth-wise 3x3 then strided 3x3) and a wider low-resolution branch
    (strided 3x3, expanding 3x3, projecting 1x1) are summed and normalized.
    """

    def __init__(self, cin, cout):
        super().__init__()
        mid = cout // 2
        self.entry = self.add_child("entry", Conv2d(cin, mid, 3, stride=2, bias=False))
        self.entry_norm = self.add_child("entry_norm", BatchNorm2d(mid))
        self.entry_act = self.add_child("entry_act", GELU())
        self.hi_dw = self.add_child("hi_dw", Conv2d(mid, mid, 3, groups=mid, bias=False))
        self.hi_norm = self.add_child("hi_norm", BatchNorm2d(mid))
        self.hi_act = self.add_child("hi_act", GELU())
        self.hi_down = self.add_child("hi_down", Conv2d(mid, cout, 3, stride=2, bias=False))
        self.lo_down = self.add_child("lo_down", Conv2d(mid, cout, 3, stride=2, bias=False))
        self.lo_norm1 = self.add_child("lo_norm1", BatchNorm2d(cout))
        self.lo_act1 = self.add_child("lo_act1", GELU())
        self.lo_expand = self.add_child("lo_expand", Conv2d(cout, 2 * cout, 3, bias=False))
        self.lo_norm2 = self.add_child("lo_norm2", BatchNorm2d(2 * cout))
        self.lo_act2 = self.add_child("lo_act2", GELU())
        self.lo_project = self.add_child("lo_project", Conv2d(2 * cout, cout, 1, bias=False))
        self.out_norm = self.add_child("out_norm", BatchNorm2d(cout))

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 4 or w % 4:
            raise ResolutionError(f"stem input {h}x{w} not divisible by 4")
        e = self.entry_act(self.entry_norm(self.entry(x)))
        hi = self.hi_down(self.hi_act(self.hi_norm(self.hi_dw(e))))
        lo = self.lo_act1(self.lo_norm1(self.lo_down(e)))
        lo = self.lo_act2(self.lo_norm2(self.lo_expand(lo)))
        lo = self.lo_project(lo)
        return self.out_norm(ops.add(hi, lo))

    def trace(self, in_shape, rec, path=""):
        n, c, h, w = in_shape
        if h % 4 or w % 4:
            raise ResolutionError(f"{path}: stem input {h}x{w} not divisible by 4")
        s = self.entry.trace(in_shape, rec, f"{path}.entry")
        s = self.entry_norm.trace(s, rec, f"{path}.entry_norm")
        s = self.entry_act.trace(s, rec, f"{path}.entry_act")
        hi = self.hi_dw.trace(s, rec, f"{path}.hi_dw")
        hi = self.hi_norm.trace(hi, rec, f"{path}.hi_norm")
        hi = self.hi_act.trace(hi, rec, f"{path}.hi_act")
        hi = self.hi_down.trace(hi, rec, f"{path}.hi_down")
        lo = self.lo_down.trace(s, rec, f"{path}.lo_down")
        lo = self.lo_norm1.trace(lo, rec, f"{path}.lo_norm1")
        lo = self.lo_act1.trace(lo, rec, f"{path}.lo_act1")
        lo = self.lo_expand.trace(lo, rec, f"{path}.lo_expand")
        lo = self.lo_norm2.trace(lo, rec, f"{path}.lo_norm2")
        lo = self.lo_act2.trace(lo, rec, f"{path}.lo_act2")
        lo = self.lo_project.trace(lo, rec, f"{path}.lo_project")
        rec.add(f"{path}.sum", elementwise=int(np.prod(hi)), activations=int(np.prod(hi)))
        return self.out_norm.trace(hi, rec, f"{path}.out_norm")


class HighResBlock(Module):
    """Shape-preserving two-branch block for the first two stages.

    High branch: one depth-wise 3x3 on the full grid. Low branch: strided
    depth-wise 3x3 with BN, a position-wise feed-forward (1x1 convs with an
    activation), nearest-neighbor upsampling back to the full grid. Both
    branch outputs are added to the block input.
    """

    def __init__(self, channels, expansion):
        super().__init__()
        c, e = channels, expansion
        self.pre_norm = self.add_child("pre_norm", BatchNorm2d(c))
        self.hi_dw = self.add_child("hi_dw", Conv2d(c, c, 3, groups=c))
        self.lo_dw = self.add_child("lo_dw", Conv2d(c, c, 3, stride=2, groups=c, bias=False))
        self.lo_norm = self.add_child("lo_norm", BatchNorm2d(c))
        self.lo_fc1 = self.add_child("lo_fc1", Conv2d(c, e * c, 1))
        self.lo_act = self.add_child("lo_act", GELU())
        self.lo_fc2 = self.add_child("lo_fc2", Conv2d(e * c, c, 1))

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ResolutionError(
                f"high-resolution block needs even spatial extents, got {h}x{w}")
        z = self.pre_norm(x)
        hi = self.hi_dw(z)
        lo = self.lo_norm(self.lo_dw(z))
        lo = self.lo_fc2(self.lo_act(self.lo_fc1(lo)))
        lo = ops.upsample_repeat(lo, 2)
        return ops.add(ops.add(x, hi), lo)

    def trace(self, in_shape, rec, path=""):
        n, c, h, w = in_shape
        if h % 2 or w % 2:
            raise ResolutionError(f"{path}: odd spatial extent {h}x{w}")
        s = self.pre_norm.trace(in_shape, rec, f"{path}.pre_norm")
        self.hi_dw.trace(s, rec, f"{path}.hi_dw")
        lo = self.lo_dw.trace(s, rec, f"{path}.lo_dw")
        lo = self.lo_norm.trace(lo, rec, f"{path}.lo_norm")
        lo = self.lo_fc1.trace(lo, rec, f"{path}.lo_fc1")
        lo = self.lo_act.trace(lo, rec, f"{path}.lo_act")
        lo = self.lo_fc2.trace(lo, rec, f"{path}.lo_fc2")
        elems = int(np.prod(in_shape))
        rec.add(f"{path}.upsample", elementwise=elems, activations=elems)
        rec.add(f"{path}.sum", elementwise=2 * elems, activations=elems)
        return in_shape


def _resolve_resize(in_grid: int | None, out_grid: int | None):
    """Map (input grid, target grid) to a downsampler stride plan."""
    if in_grid is None or out_grid is None or in_grid == 2 * out_grid \
            or out_grid == -(-in_grid // 2):
        return 2, None
    if in_grid == out_grid:
        return 1, None
    if in_grid > out_grid:
        return 1, out_grid
    raise ConfigError(f"downsampler cannot grow {in_grid} -> {out_grid}")


class DownsampleA(Module):
    """Inverted-residual downsampler for the high-resolution stages.

    A strided 3x3 conv expands to twice the output width, a 1x1 conv
    shrinks; BN and activation follow both convs. A pooled 1x1 projection
    shortcut is added. When the build targets a grid other than half the
    input (resolution-anchored builds), an adaptive pool aligns the grid
    first and the convs run unstrided.
    """

    expand_factor = 2

    def __init__(self, cin, cout, in_grid=None, out_grid=None):
        super().__init__()
        stride, pool_to = _resolve_resize(in_grid, out_grid)
        mid = self.expand_factor * cout
        self.pre_pool = self.add_child(
            "pre_pool", AvgPoolTo((pool_to, pool_to)) if pool_to else Identity())
        self.reduce = self.add_child("reduce", Conv2d(cin, mid, 3, stride=stride, bias=False))
        self.norm1 = self.add_child("norm1", BatchNorm2d(mid))
        self.act1 = self.add_child("act1", GELU())
        self.project = self.add_child("project", Conv2d(mid, cout, 1, bias=False))
        self.norm2 = self.add_child("norm2", BatchNorm2d(cout))
        self.act2 = self.add_child("act2", GELU())
        self.sc_pool = self.add_child(
            "sc_pool",
            AvgPoolTo((pool_to, pool_to)) if pool_to
            else (AvgPoolHalve() if stride == 2 else Identity()))
        self.sc_project = self.add_child("sc_project", Conv2d(cin, cout, 1))

    def forward(self, x):
        y = self.pre_pool(x)
        y = self.act1(self.norm1(self.reduce(y)))
        y = self.act2(self.norm2(self.project(y)))
        s = self.sc_project(self.sc_pool(x))
        return ops.add(y, s)

    def trace(self, in_shape, rec, path=""):
        y = self.pre_pool.trace(in_shape, rec, f"{path}.pre_pool")
        y = self.reduce.trace(y, rec, f"{path}.reduce")
        y = self.norm1.trace(y, rec, f"{path}.norm1")
        y = self.act1.trace(y, rec, f"{path}.act1")
        y = self.project.trace(y, rec, f"{path}.project")
        y = self.norm2.trace(y, rec, f"{path}.norm2")
        y = self.act2.trace(y, rec, f"{path}.act2")
        s = self.sc_pool.trace(in_shape, rec, f"{path}.sc_pool")
        self.sc_project.trace(s, rec, f"{path}.sc_project")
        rec.add(f"{path}.sum", elementwise=int(np.prod(y)), activations=int(np.prod(y)))
        return y


class DownsampleB(Module):
    """Inverted-residual downsampler for the low-resolution stages.

    1x1 expansion (with BN and activation), strided depth-wise 3x3, 1x1
    projection; normalization and activation only follow the first conv.
    Same pooled projection shortcut as DownsampleA.
    """

    expand_factor = 8

    def __init__(self, cin, cout, in_grid=None, out_grid=None):
        super().__init__()
        stride, pool_to = _resolve_resize(in_grid, out_grid)
        mid = self.expand_factor * cin
        self.pre_pool = self.add_child(
            "pre_pool", AvgPoolTo((pool_to, pool_to)) if pool_to else Identity())
        self.expand = self.add_child("expand", Conv2d(cin, mid, 1, bias=False))
        self.norm1 = self.add_child("norm1", BatchNorm2d(mid))
        self.act1 = self.add_child("act1", GELU())
        self.dw = self.add_child("dw", Conv2d(mid, mid, 3, stride=stride, groups=mid))
        self.project = self.add_child("project", Conv2d(mid, cout, 1))
        self.sc_pool = self.add_child(
            "sc_pool",
            AvgPoolTo((pool_to, pool_to)) if pool_to
            else (AvgPoolHalve() if stride == 2 else Identity()))
        self.sc_project = self.add_child("sc_project", Conv2d(cin, cout, 1))

    def forward(self, x):
        y = self.pre_pool(x)
        y = self.act1(self.norm1(self.expand(y)))
        y = self.project(self.dw(y))
        s = self.sc_project(self.sc_pool(x))
        return ops.add(y, s)

    def trace(self, in_shape, rec, path=""):
        y = self.pre_pool.trace(in_shape, rec, f"{path}.pre_pool")
        y = self.expand.trace(y, rec, f"{path}.expand")
        y = self.norm1.trace(y, rec, f"{path}.norm1")
        y = self.act1.trace(y, rec, f"{path}.act1")
        y = self.dw.trace(y, rec, f"{path}.dw")
        y = self.project.trace(y, rec, f"{path}.project")
        s = self.sc_pool.trace(in_shape, rec, f"{path}.sc_pool")
        self.sc_project.trace(s, rec, f"{path}.sc_project")
        rec.add(f"{path}.sum", elementwise=int(np.prod(y)), activations=int(np.prod(y)))
        return y


class PlainDownsample(Module):
    """Single strided 3x3 conv with LN (the conventional between-stage merge)."""

    def __init__(self, cin, cout, **_ignored):
        super().__init__()
        self.conv = self.add_child("conv", Conv2d(cin, cout, 3, stride=2))
        self.norm = self.add_child("norm", LayerNorm2d(cout))

    def forward(self, x):
        return self.norm(self.conv(x))

    def trace(self, in_shape, rec, path=""):
        s = self.conv.trace(in_shape, rec, f"{path}.conv")
        return self.norm.trace(s, rec, f"{path}.norm")


class ConvFFNBlock(Module):
    """Residual convolutional feed-forward block.

    Pre-normalized; hidden = act(1x1 expand), then a residual depth-wise
    3x3 over the hidden map, then 1x1 projection back: out = x + FC2(DW(z) + z).
    """

    def __init__(self, channels, expansion, norm="bn"):
        super().__init__()
        c, e = channels, expansion
        self.pre_norm = self.add_child("pre_norm", make_norm2d(norm, c))
        self.fc1 = self.add_child("fc1", Conv2d(c, e * c, 1))
        self.act = self.add_child("act", GELU())
        self.dw = self.add_child("dw", Conv2d(e * c, e * c, 3, groups=e * c))
        self.fc2 = self.add_child("fc2", Conv2d(e * c, c, 1))

    def forward(self, x):
        z = self.act(self.fc1(self.pre_norm(x)))
        y = self.fc2(ops.add(self.dw(z), z))
        return ops.add(x, y)

    def trace(self, in_shape, rec, path=""):
        s = self.pre_norm.trace(in_shape, rec, f"{path}.pre_norm")
        z = self.fc1.trace(s, rec, f"{path}.fc1")
        z = self.act.trace(z, rec, f"{path}.act")
        d = self.dw.trace(z, rec, f"{path}.dw")
        rec.add(f"{path}.dw_sum", elementwise=int(np.prod(d)), activations=int(np.prod(d)))
        self.fc2.trace(d, rec, f"{path}.fc2")
        elems = int(np.prod(in_shape))
        rec.add(f"{path}.residual", elementwise=elems, activations=elems)
        return in_shape


class FFNBlock(Module):
    """Residual position-wise feed-forward block (no depth-wise conv)."""

    def __init__(self, channels, expansion, norm="ln"):
        super().__init__()
        c, e = channels, expansion
        self.pre_norm = self.add_child("pre_norm", make_norm2d(norm, c))
        self.fc1 = self.add_child("fc1", Conv2d(c, e * c, 1))
        self.act = self.add_child("act", GELU())
        self.fc2 = self.add_child("fc2", Conv2d(e * c, c, 1))

    def forward(self, x):
        y = self.fc2(self.act(self.fc1(self.pre_norm(x))))
        return ops.add(x, y)

    def trace(self, in_shape, rec, path=""):
        s = self.pre_norm.trace(in_shape, rec, f"{path}.pre_norm")
        z = self.fc1.trace(s, rec, f"{path}.fc1")
        z = self.act.trace(z, rec, f"{path}.act")
        self.fc2.trace(z, rec, f"{path}.fc2")
        elems = int(np.prod(in_shape))
        rec.add(f"{path}.residual", elementwise=elems, activations=elems)
        return in_shape


class Attention(Module):
    """Multi-head self-attention over an NCHW feature map.

    ``kv_reduce`` selects how keys/values are spatially reduced:
      * "none"      -- full-token attention,
      * "pool"      -- project K/V at full resolution, then average-pool the
                       K/V maps by ``sr_ratio`` (used by the five-stage family),
      * "conv"      -- PVT-style: strided conv (kernel = stride = sr_ratio)
                       plus LN on the input map before the K/V projections.
    """

    def __init__(self, dim, heads, sr_ratio=1, kv_reduce="pool", qkv_bias=True):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"attention dim {dim} not divisible by heads {heads}")
        if sr_ratio < 1:
            raise ConfigError(f"sr_ratio must be >= 1, got {sr_ratio}")
        self.dim, self.heads, self.sr_ratio = dim, heads, sr_ratio
        self.head_dim = dim // heads
        self.scale = 1.0 / np.sqrt(self.head_dim)
        self.kv_reduce = kv_reduce if sr_ratio > 1 else "none"
        self.q = self.add_child("q", Linear(dim, dim, bias=qkv_bias))
        self.k = self.add_child("k", Linear(dim, dim, bias=qkv_bias))
        self.v = self.add_child("v", Linear(dim, dim, bias=qkv_bias))
        self.proj = self.add_child("proj", Linear(dim, dim))
        if self.kv_reduce == "conv":
            self.sr_conv = self.add_child(
                "sr_conv", Conv2d(dim, dim, sr_ratio, stride=sr_ratio, padding=0))
            self.sr_norm = self.add_child("sr_norm", LayerNorm(dim))

    # -- helpers -----------------------------------------------------------

    def _split_heads(self, x, n_tokens):
        b = x.shape[0]
        x = ops.reshape(x, (b, n_tokens, self.heads, self.head_dim))
        return ops.transpose(x, (0, 2, 1, 3))

    def _tokens(self, x_map):
        b, c, h, w = x_map.shape
        return ops.transpose(ops.reshape(x_map, (b, c, h * w)), (0, 2, 1))

    def _maps(self, tokens, h, w):
        b, n, c = tokens.shape
        return ops.reshape(ops.transpose(tokens, (0, 2, 1)), (b, c, h, w))

    def forward_tokens(self, x, hw):
        """Attention over tokens (B, n, D); ``hw`` gives the 2D layout."""
        if self.kv_reduce == "conv":
            raise ConfigError(
                "conv-style reduction operates on feature maps; call forward()")
        b, n, d = x.shape
        h, w = hw
        if h * w != n:
            raise ShapeError(f"token count {n} does not match layout {h}x{w}")
        q = self._split_heads(self.q(x), n)
        k_full = self.k(x)
        v_full = self.v(x)
        if self.kv_reduce == "pool":
            hk, wk = h // self.sr_ratio, w // self.sr_ratio
            k_map = ops.adaptive_avg_pool2d(self._maps(k_full, h, w), (hk, wk))
            v_map = ops.adaptive_avg_pool2d(self._maps(v_full, h, w), (hk, wk))
            nk = hk * wk
            k = self._split_heads(self._tokens(k_map), nk)
            v = self._split_heads(self._tokens(v_map), nk)
        else:
            nk = n
            k = self._split_heads(k_full, n)
            v = self._split_heads(v_full, n)
        scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), self.scale)
        attn = ops.softmax(scores, axis=-1)
        out = ops.ordered_matmul(attn, v)
        out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (b, n, d))
        return self.proj(out)

    def forward(self, x):
        b, c, h, w = x.shape
        if self.kv_reduce == "conv":
            tokens = self._tokens(x)
            q = self._split_heads(self.q(tokens), h * w)
            red = self.sr_conv(x)
            hk, wk = red.shape[2], red.shape[3]
            red_tok = self.sr_norm(self._tokens(red))
            nk = hk * wk
            k = self._split_heads(self.k(red_tok), nk)
            v = self._split_heads(self.v(red_tok), nk)
            scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), self.scale)
            attn = ops.softmax(scores, axis=-1)
            out = ops.ordered_matmul(attn, v)
            out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (b, h * w, c))
            out = self.proj(out)
        else:
            out = self.forward_tokens(self._tokens(x), (h, w))
        return self._maps(out, h, w)

    def trace(self, in_shape, rec, path=""):
        b, c, h, w = in_shape
        n = h * w
        self.q.trace((b, n, c), rec, f"{path}.q")
        if self.kv_reduce == "conv":
            rs = self.sr_conv.trace(in_shape, rec, f"{path}.sr_conv")
            nk = rs[2] * rs[3]
            self.sr_norm.trace((b, nk, c), rec, f"{path}.sr_norm")
            self.k.trace((b, nk, c), rec, f"{path}.k")
            self.v.trace((b, nk, c), rec, f"{path}.v")
        elif self.kv_reduce == "pool":
            hk, wk = h // self.sr_ratio, w // self.sr_ratio
            nk = hk * wk
            self.k.trace((b, n, c), rec, f"{path}.k")
            self.v.trace((b, n, c), rec, f"{path}.v")
            rec.add(f"{path}.kv_pool", elementwise=2 * b * nk * c,
                    activations=2 * b * nk * c)
        else:
            nk = n
            self.k.trace((b, n, c), rec, f"{path}.k")
            self.v.trace((b, n, c), rec, f"{path}.v")
        rec.add(f"{path}.qk", macs=b * n * nk * c, elementwise=b * self.heads * n * nk,
                activations=b * self.heads * n * nk)
        rec.add(f"{path}.av", macs=b * n * nk * c, activations=b * n * c)
        self.proj.trace((b, n, c), rec, f"{path}.proj")
        return in_shape


class TransformerBlock(Module):
    """Pre-norm attention plus convolutional feed-forward, both residual."""

    def __init__(self, dim, expansion, heads, sr_ratio=1, kv_reduce="pool",
                 attn_norm="ln", ffn_norm="bn", use_cffn=True, with_attention=True):
        super().__init__()
        self.with_attention = with_attention
        if with_attention:
            self.attn_norm = self.add_child("attn_norm", make_norm2d(attn_norm, dim))
            self.attn = self.add_child(
                "attn", Attention(dim, heads, sr_ratio, kv_reduce))
        ffn_cls = ConvFFNBlock if use_cffn else FFNBlock
        self.ffn = self.add_child("ffn", ffn_cls(dim, expansion, norm=ffn_norm))

    def forward(self, x):
        if self.with_attention:
            x = ops.add(x, self.attn(self.attn_norm(x)))
        return self.ffn(x)

    def trace(self, in_shape, rec, path=""):
        if self.with_attention:
            s = self.attn_norm.trace(in_shape, rec, f"{path}.attn_norm")
            self.attn.trace(s, rec, f"{path}.attn")
            elems = int(np.prod(in_shape))
            rec.add(f"{path}.attn_residual", elementwise=elems, activations=elems)
        return self.ffn.trace(in_shape, rec, f"{path}.ffn")


class ClassifierHead(Module):
    """Global average pooling followed by the logit projection.

    With ``hidden`` set, a representation layer (FC + activation) precedes
    the logits, as in bottleneck-style classifier heads.
    """

    def __init__(self, cin, num_classes, hidden=None):
        super().__init__()
        self.hidden = hidden
        if hidden:
            self.pre = self.add_child("pre", Linear(cin, hidden))
            self.act = self.add_child("act", GELU())
            self.fc = self.add_child("fc", Linear(hidden, num_classes))
        else:
            self.fc = self.add_child("fc", Linear(cin, num_classes))

    def forward(self, x):
        pooled = ops.global_avg_pool(x)
        if self.hidden:
            pooled = self.act(self.pre(pooled))
        return self.fc(pooled)

    def forward_dense(self, x):
        """Per-position logits (no pooling): classifier applied to each cell."""
        b, c, h, w = x.shape
        tokens = ops.transpose(ops.reshape(x, (b, c, h * w)), (0, 2, 1))
        y = tokens
        if self.hidden:
            y = self.act(self.pre(y))
        y = self.fc(y)
        return ops.reshape(ops.transpose(y, (0, 2, 1)), (b, -1, h, w))

    def trace(self, in_shape, rec, path=""):
        b, c, h, w = in_shape
        rec.add(f"{path}.pool", elementwise=b * c, activations=b * c)
        s = (b, c)
        if self.hidden:
            s = self.pre.trace(s, rec, f"{path}.pre")
            s = self.act.trace(s, rec, f"{path}.act")
        return self.fc.trace(s, rec, f"{path}.fc")


class ViTStem(Module):
    """Single large-kernel strided conv patchifier (stride 4, kernel 7)."""

    def __init__(self, cin, cout):
        super().__init__()
        self.proj = self.add_child("proj", Conv2d(cin, cout, 7, stride=4, padding=3))
        self.norm = self.add_child("norm", LayerNorm2d(cout))

    def forward(self, x):
        return self.norm(self.proj(x))

    def trace(self, in_shape, rec, path=""):
        s = self.proj.trace(in_shape, rec, f"{path}.proj")
        return self.norm.trace(s, rec, f"{path}.norm")


class ConvStem(Module):
    """Stacked 3x3 convolutions reducing to quarter resolution."""

    def __init__(self, cin, cout):
        super().__init__()
        mid = cout // 2
        self.conv1 = self.add_child("conv1", Conv2d(cin, mid, 3, stride=2, bias=False))
        self.norm1 = self.add_child("norm1", BatchNorm2d(mid))
        self.act1 = self.add_child("act1", GELU())
        self.conv2 = self.add_child("conv2", Conv2d(mid, mid, 3, bias=False))
        self.norm2 = self.add_child("norm2", BatchNorm2d(mid))
        self.act2 = self.add_child("act2", GELU())
        self.conv3 = self.add_child("conv3", Conv2d(mid, cout, 3, stride=2, bias=False))
        self.norm3 = self.add_child("norm3", BatchNorm2d(cout))
        self.act3 = self.add_child("act3", GELU())
        self.conv4 = self.add_child("conv4", Conv2d(cout, cout, 1, bias=False))
        self.norm4 = self.add_child("norm4", BatchNorm2d(cout))

    def forward(self, x):
        y = self.act1(self.norm1(self.conv1(x)))
        y = self.act2(self.norm2(self.conv2(y)))
        y = self.act3(self.norm3(self.conv3(y)))
        return self.norm4(self.conv4(y))

    def trace(self, in_shape, rec, path=""):
        s = self.conv1.trace(in_shape, rec, f"{path}.conv1")
        s = self.norm1.trace(s, rec, f"{path}.norm1")
        s = self.act1.trace(s, rec, f"{path}.act1")
        s = self.conv2.trace(s, rec, f"{path}.conv2")
        s = self.norm2.trace(s, rec, f"{path}.norm2")
        s = self.act2.trace(s, rec, f"{path}.act2")
        s = self.conv3.trace(s, rec, f"{path}.conv3")
        s = self.norm3.trace(s, rec, f"{path}.norm3")
        s = self.act3.trace(s, rec, f"{path}.act3")
        s = self.conv4.trace(s, rec, f"{path}.conv4")
        return self.norm4.trace(s, rec, f"{path}.norm4")
