"""Network zoo: shared attention trunk, per-kin-type branches, and heads.

All networks are :class:`KinshipNet` instances that differ only in their head
list: JLNet has four 2-way heads, each Ensemble member has one 2-way head, and
Multi-class Net has one 5-way head. Images are NHWC arrays in [0, 1]; both
images of a pair go through the same trunk and their feature maps are
concatenated channel-wise before the branch stage.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .engine import tensor as T
from .engine.tensor import Tensor


class KinType(IntEnum):
    FD = 1
    FS = 2
    MD = 3
    MS = 4

    @property
    def short(self):
        return self.name.lower()

    @property
    def label(self):
        return {1: "F-D", 2: "F-S", 3: "M-D", 4: "M-S"}[self.value]

    @classmethod
    def parse(cls, value):
        if isinstance(value, KinType):
            return value
        if isinstance(value, (int, np.integer)):
            try:
                return cls(int(value))
            except ValueError:
                raise ValueError(f"unknown kin type code {value!r}") from None
        key = str(value).strip().upper().replace("-", "")
        if key in cls.__members__:
            return cls[key]
        raise ValueError(f"unknown kin type {value!r}")


KIN_TYPES = tuple(KinType)


@dataclass
class BackboneConfig:
    input_size: tuple = (64, 64, 3)
    stage_channel_widths: list = field(default_factory=lambda: [8, 16, 32])
    attention_enabled: bool = True
    num_shared_stages: int = 2
    branch_stage_depth: int = 1
    head_hidden: int = 32

    def validate(self):
        h, w, c = self.input_size
        if c != 3:
            raise ValueError(f"input_size must have 3 channels, got {self.input_size}")
        if self.num_shared_stages < 1:
            raise ValueError("num_shared_stages must be >= 1")
        if len(self.stage_channel_widths) != self.num_shared_stages + 1:
            raise ValueError(
                f"need {self.num_shared_stages + 1} stage widths, got {self.stage_channel_widths}"
            )
        if self.branch_stage_depth < 1:
            raise ValueError("branch_stage_depth must be >= 1")
        # each stage halves the map and its mask path halves it once more
        div = 2 ** (self.num_shared_stages + 1)
        if h % div or w % div:
            raise ValueError(f"input {h}x{w} must be divisible by {div}")
        return self


class Module:
    """Parameter container; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix=""):
        out = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for k, p in params.items():
            if state[k].shape != p.data.shape:
                raise ValueError(f"{k}: checkpoint shape {state[k].shape} != {p.data.shape}")
            p.data = np.array(state[k], dtype=p.data.dtype)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, kernel=3):
        self.padding = kernel // 2
        self.weight = _he_uniform(rng, (cout, cin, kernel, kernel), cin * kernel * kernel)
        self.bias = _zeros((cout,))

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


class Linear(Module):
    def __init__(self, rng, nin, nout, zero=False):
        self.weight = _zeros((nin, nout)) if zero else _he_uniform(rng, (nin, nout), nin)
        self.bias = _zeros((nout,))

    def __call__(self, x):
        return T.matmul(x, self.weight) + self.bias


class ResidualBlock(Module):
    def __init__(self, rng, cin, cout):
        self.conv1 = Conv2d(rng, cin, cout)
        self.conv2 = Conv2d(rng, cout, cout)
        self.shortcut = Conv2d(rng, cin, cout, kernel=1) if cin != cout else None

    def __call__(self, x):
        h = self.conv2(T.relu(self.conv1(x)))
        skip = self.shortcut(x) if self.shortcut is not None else x
        return T.relu(h + skip)


class AttentionModule(Module):
    """Trunk residual unit gated by a bottom-up/top-down soft mask.

    ``out = trunk(x) * (1 + mask(x))``; with attention disabled the module is
    just its trunk residual unit.
    """

    def __init__(self, rng, channels, enabled=True):
        self.enabled = enabled
        self.trunk = ResidualBlock(rng, channels, channels)
        if enabled:
            self.mask_conv = Conv2d(rng, channels, channels)
            self.mask_out = Conv2d(rng, channels, channels, kernel=1)

    def __call__(self, x):
        t = self.trunk(x)
        if not self.enabled:
            return t
        m = T.maxpool2d(x, 2)
        m = T.relu(self.mask_conv(m))
        m = T.sigmoid(self.mask_out(T.upsample2d(m, 2)))
        return t * (m + 1.0)


class AttentionStage(Module):
    """Residual unit(s), one attention module, then 2x2 max pooling."""

    def __init__(self, rng, cin, cout, attention=True, depth=1):
        self.blocks = [ResidualBlock(rng, cin if i == 0 else cout, cout) for i in range(depth)]
        self.attention = AttentionModule(rng, cout, enabled=attention)

    def __call__(self, x):
        for block in self.blocks:
            x = block(x)
        return T.maxpool2d(self.attention(x), 2)


class Trunk(Module):
    """Basic-feature extraction sub-module shared by every branch."""

    def __init__(self, rng, config):
        widths = config.stage_channel_widths
        cin = config.input_size[2]
        self.stages = []
        for i in range(config.num_shared_stages):
            self.stages.append(AttentionStage(rng, cin, widths[i], config.attention_enabled))
            cin = widths[i]

    def __call__(self, x):
        for stage in self.stages:
            x = stage(x)
        return x


class Branch(Module):
    """Kin-type mapping sub-module: third attention stage plus classifier."""

    def __init__(self, rng, config, num_classes):
        widths = config.stage_channel_widths
        cin = 2 * widths[config.num_shared_stages - 1]
        cout = widths[-1]
        self.stage = AttentionStage(rng, cin, cout, config.attention_enabled, config.branch_stage_depth)
        h, w, _ = config.input_size
        side = 2 ** (config.num_shared_stages + 1)
        flat = cout * (h // side) * (w // side)
        self.hidden = Linear(rng, flat, config.head_hidden)
        self.out = Linear(rng, config.head_hidden, num_classes, zero=True)

    def __call__(self, feats):
        h = T.flatten(self.stage(feats))
        return self.out(T.relu(self.hidden(h)))


def to_nchw(images):
    """Stack NHWC images in [0, 1] into a centred NCHW array."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2)) - 0.5


class KinshipNet(Module):
    """Shared trunk with one branch per entry of ``head_classes``."""

    def __init__(self, config, head_classes, seed=0):
        self.config = config.validate()
        self.head_classes = tuple(head_classes)
        rng = np.random.default_rng(seed)
        self.trunk = Trunk(rng, config)
        self.branches = [Branch(rng, config, k) for k in self.head_classes]

    def _check(self, images):
        expected = tuple(self.config.input_size)
        if images.ndim != 4 or tuple(images.shape[1:]) != expected:
            raise T.ShapeError(f"images of shape {images.shape[1:]} do not match input_size {expected}")

    def trunk_features(self, images):
        """Trunk features for a batch of NHWC images."""
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        self._check(images)
        return self.trunk(Tensor(to_nchw(images)))

    def fuse(self, parent_feats, child_feats):
        return T.concat([parent_feats, child_feats], axis=1)

    def features(self, parents, children):
        """Fused pair features; parents and children share one trunk pass."""
        parents, children = np.asarray(parents), np.asarray(children)
        if parents.shape != children.shape:
            raise T.ShapeError(f"parent batch {parents.shape} != child batch {children.shape}")
        if parents.ndim == 3:
            parents, children = parents[None], children[None]
        n = parents.shape[0]
        feats = self.trunk_features(np.concatenate([parents, children], axis=0))
        return self.fuse(feats[:n], feats[n:])

    def head_logits(self, feats, index):
        if not 0 <= index < len(self.branches):
            raise ValueError(f"no head {index}; network has {len(self.branches)}")
        return self.branches[index](feats)

    def head_probs(self, feats):
        return [T.softmax(b(feats), axis=-1) for b in self.branches]

    def forward(self, parents, children):
        return self.head_probs(self.features(parents, children))

    __call__ = forward


class JLNet(KinshipNet):
    def __init__(self, config, seed=0):
        super().__init__(config, (2, 2, 2, 2), seed)

    def verification_head(self, feats, kin):
        kin = KinType.parse(kin)
        return T.softmax(self.head_logits(feats, kin - 1), axis=-1)


class MulticlassNet(KinshipNet):
    def __init__(self, config, seed=0):
        super().__init__(config, (5,), seed)


class VerificationNet(KinshipNet):
    def __init__(self, config, seed=0):
        super().__init__(config, (2,), seed)


class EnsembleNet(Module):
    """Four independently parameterised verification networks."""

    def __init__(self, config, seed=0):
        seeds = np.random.SeedSequence(seed).spawn(4)
        self.members = [VerificationNet(config, seed=int(s.generate_state(1)[0])) for s in seeds]
        self.config = config

    def forward(self, parents, children):
        return [m(parents, children)[0] for m in self.members]

    __call__ = forward


def backbone_forward(parent_image, child_image, config, net=None, seed=0):
    """Fused trunk features for one pair (builds a fresh JLNet when ``net`` is None)."""
    net = net or JLNet(config, seed=seed)
    return net.features(parent_image, child_image)


def verification_head_forward(net, features, kin):
    kin = KinType.parse(kin)
    return net.verification_head(features, kin)


def multiclass_forward(net, parent_image, child_image):
    return net(parent_image, child_image)[0]
