"""Model architectures: image encoder/decoder, projection head, linear probe,
and the spatio-temporal RF feature network with its ROI head.

Every parameter is named, drawn from one seeded RNG in construction order
(Kaiming-uniform fan-in bounds, zero biases), and lives in a ModelBundle so
checkpoints round-trip bit-exactly. There is no normalization layer anywhere;
all nets are strided convs + ReLU.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Parameter, Tensor
from .errors import ShapeError, SpecError


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 3
    widths: tuple = (32, 32, 64, 64, 128, 128)
    strides: tuple = (1, 2, 1, 2, 1, 2)
    kernel: int = 3
    input_extent: int = 64

    def __post_init__(self):
        if len(self.widths) != 6 or len(self.strides) != 6:
            raise SpecError("image encoder takes exactly 6 conv layers")
        ext = self.input_extent
        for s in self.strides:
            ext = (ext + 2 - self.kernel) // s + 1
        if ext < 1:
            raise SpecError(f"input extent {self.input_extent} collapses before layer 6")

    @property
    def feature_dim(self):
        return self.widths[-1]

    @property
    def map_extent(self):
        ext = self.input_extent
        for s in self.strides:
            ext = (ext + 2 - self.kernel) // s + 1
        return ext


@dataclass(frozen=True)
class ProjectionConfig:
    hidden_dim: int = 128
    out_dim: int = 64

    def __post_init__(self):
        if self.out_dim < 2:
            raise SpecError("projection out_dim must be >= 2")


@dataclass(frozen=True)
class RfNetConfig:
    in_channels: int = 2
    widths: tuple = (16, 32, 64, 64)
    # stride 2 over (time, height, width) at blocks 1 and 3
    strided_blocks: tuple = (1, 3)
    kernel: int = 3
    roi_out: int = 6
    head_residual_blocks: int = 3
    head_hidden: int = 64
    head_out: int = 64
    seq_len: int = 100
    extent: int = 64

    def __post_init__(self):
        if self.roi_out < 1:
            raise SpecError("ROI output extent must be positive")
        if len(self.widths) < 1:
            raise SpecError("RF net needs at least one conv block")

    def block_stride(self, i):
        return 2 if i in self.strided_blocks else 1

    @property
    def time_out(self):
        t = self.seq_len
        for i in range(len(self.widths)):
            t = (t + 2 - self.kernel) // self.block_stride(i) + 1
        return t

    @property
    def map_extent(self):
        e = self.extent
        for i in range(len(self.widths)):
            e = (e + 2 - self.kernel) // self.block_stride(i) + 1
        return e

    @property
    def feature_dim(self):
        return self.widths[-1]


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _ParamStore:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.params = []
        self._names = set()

    def conv(self, name, f, c, kdims):
        kdims = tuple(kdims)
        w = self._add(f"{name}.w", _he_uniform(self.rng, (f, c) + kdims, c * int(np.prod(kdims))))
        b = self._add(f"{name}.b", np.zeros(f))
        return w, b

    def conv_t(self, name, c, f, kdims):
        kdims = tuple(kdims)
        w = self._add(f"{name}.w", _he_uniform(self.rng, (c, f) + kdims, c * int(np.prod(kdims))))
        b = self._add(f"{name}.b", np.zeros(f))
        return w, b

    def fc(self, name, din, dout):
        w = self._add(f"{name}.w", _he_uniform(self.rng, (din, dout), din))
        b = self._add(f"{name}.b", np.zeros(dout))
        return w, b

    def _add(self, name, value):
        if name in self._names:
            raise SpecError(f"duplicate parameter name {name!r}")
        self._names.add(name)
        p = Parameter(name, Tensor(value, requires_grad=True))
        self.params.append(p)
        return p


@dataclass
class ModelBundle:
    """Named parameters plus the configs that shaped them."""

    kind: str
    seed: int
    encoder_cfg: object
    projection_cfg: ProjectionConfig
    params: list = field(default_factory=list)
    groups: dict = field(default_factory=dict)

    def parameters(self, *group_names):
        if not group_names:
            return list(self.params)
        out = []
        for g in group_names:
            out.extend(self.groups[g])
        return out

    def state(self):
        return dc.state_of(self.params)

    def load_state(self, arrays):
        dc.load_state(self.params, arrays)


def build_image_bundle(encoder_cfg=None, projection_cfg=None, seed=0):
    """Encoder + mirrored decoder + projection head, one seeded init stream."""
    enc = encoder_cfg or EncoderConfig()
    proj = projection_cfg or ProjectionConfig(hidden_dim=enc.feature_dim)
    store = _ParamStore(seed)

    cin = enc.in_channels
    for i, w in enumerate(enc.widths):
        store.conv(f"enc.conv{i}", w, cin, (enc.kernel, enc.kernel))
        cin = w
    n_enc = len(store.params)

    # decoder mirrors the encoder back to front; stride-2 steps use k=4 p=1
    # so every upsample doubles exactly, stride-1 steps keep k=3 p=1
    chain = [enc.in_channels] + list(enc.widths)
    for j in range(len(enc.widths)):
        i = len(enc.widths) - 1 - j
        s = enc.strides[i]
        k = 4 if s == 2 else 3
        store.conv_t(f"dec.conv{j}", chain[i + 1], chain[i], (k, k))
    n_dec = len(store.params) - n_enc

    store.fc("proj.fc0", enc.feature_dim, proj.hidden_dim)
    store.fc("proj.fc1", proj.hidden_dim, proj.out_dim)

    bundle = ModelBundle("image", seed, enc, proj, store.params)
    bundle.groups = {
        "encoder": store.params[:n_enc],
        "decoder": store.params[n_enc : n_enc + n_dec],
        "projection": store.params[n_enc + n_dec :],
    }
    return bundle


def build_rf_bundle(rf_cfg=None, projection_cfg=None, seed=0):
    cfg = rf_cfg or RfNetConfig()
    proj = projection_cfg or ProjectionConfig(hidden_dim=cfg.head_hidden, out_dim=cfg.head_out)
    store = _ParamStore(seed)

    k3 = (cfg.kernel,) * 3
    cin = cfg.in_channels
    for i, w in enumerate(cfg.widths):
        store.conv(f"enc.conv{i}", w, cin, k3)
        cin = w
    n_enc = len(store.params)

    chain = [cfg.in_channels] + list(cfg.widths)
    for j in range(len(cfg.widths)):
        i = len(cfg.widths) - 1 - j
        s = cfg.block_stride(i)
        k = (4,) * 3 if s == 2 else (3,) * 3
        store.conv_t(f"dec.conv{j}", chain[i + 1], chain[i], k)
    n_dec = len(store.params) - n_enc

    c = cfg.feature_dim
    for r in range(cfg.head_residual_blocks):
        store.conv(f"head.res{r}", c, c, k3)
    store.fc("head.fc0", c, proj.hidden_dim)
    store.fc("head.fc1", proj.hidden_dim, proj.out_dim)

    bundle = ModelBundle("rf", seed, cfg, proj, store.params)
    bundle.groups = {
        "encoder": store.params[:n_enc],
        "decoder": store.params[n_enc : n_enc + n_dec],
        "head": store.params[n_enc + n_dec :],
    }
    return bundle


def _group(bundle, name):
    by_name = {p.name: p for p in bundle.groups[name]}
    return by_name


def encoder_feature_map(bundle, images):
    """images: [N, 3, H, W] -> pre-pool activation [N, C_last, h, w]."""
    cfg = bundle.encoder_cfg
    x = dc.as_tensor(images) if not isinstance(images, Tensor) else images
    if x.data.ndim != 4 or x.data.shape[1:] != (cfg.in_channels, cfg.input_extent, cfg.input_extent):
        raise ShapeError(
            f"encoder expects [N, {cfg.in_channels}, {cfg.input_extent}, {cfg.input_extent}], "
            f"got {x.data.shape}"
        )
    p = _group(bundle, "encoder")
    for i, s in enumerate(cfg.strides):
        w = p[f"enc.conv{i}.w"].value
        b = p[f"enc.conv{i}.b"].value
        x = dc.relu(dc.conv2d(x, w, stride=s, padding=1, bias=b))
    return x


def encoder_forward(bundle, images):
    """images: [N, 3, H, W] -> pooled features [N, feature_dim]."""
    return dc.mean_pool(encoder_feature_map(bundle, images))


def decoder_forward(bundle, fmap):
    """Pre-pool feature map -> reconstruction [N, 3, H, W] in [0, 1]."""
    cfg = bundle.encoder_cfg
    x = fmap if isinstance(fmap, Tensor) else dc.as_tensor(fmap)
    expect = (cfg.feature_dim, cfg.map_extent, cfg.map_extent)
    if x.data.ndim != 4 or x.data.shape[1:] != expect:
        raise ShapeError(f"decoder expects [N, {expect[0]}, {expect[1]}, {expect[2]}], got {x.data.shape}")
    p = _group(bundle, "decoder")
    n_layers = len(cfg.strides)
    for j in range(n_layers):
        i = n_layers - 1 - j
        s = cfg.strides[i]
        w = p[f"dec.conv{j}.w"].value
        b = p[f"dec.conv{j}.b"].value
        x = dc.conv_transpose2d(x, w, stride=s, padding=1, bias=b)
        x = dc.relu(x) if j < n_layers - 1 else dc.sigmoid(x)
    return x


def projection_forward(bundle, features):
    """Pooled features -> unit-row embedding [N, out_dim]."""
    if "projection" not in bundle.groups:
        raise ShapeError("bundle has no projection head (RF bundles project via rf_head_forward)")
    p = _group(bundle, "projection")
    h = dc.affine(features, p["proj.fc0.w"].value, p["proj.fc0.b"].value)
    h = dc.relu(h)
    h = dc.affine(h, p["proj.fc1.w"].value, p["proj.fc1.b"].value)
    return dc.l2_normalize(h)


def rf_feature_map(bundle, seqs):
    """seqs: [N, 2, T, H, W] -> [N, C_last, T', h, w]."""
    cfg = bundle.encoder_cfg
    x = seqs if isinstance(seqs, Tensor) else dc.as_tensor(seqs)
    expect = (cfg.in_channels, cfg.seq_len, cfg.extent, cfg.extent)
    if x.data.ndim != 5 or x.data.shape[1:] != expect:
        raise ShapeError(f"RF net expects [N, {expect}], got {x.data.shape}")
    p = _group(bundle, "encoder")
    for i in range(len(cfg.widths)):
        w = p[f"enc.conv{i}.w"].value
        b = p[f"enc.conv{i}.b"].value
        x = dc.relu(dc.conv3d(x, w, stride=cfg.block_stride(i), padding=1, bias=b))
    return x


def rf_feature_forward(bundle, seq):
    """Single sequence [T, 2, H, W] -> feature map [C, T', h, w]."""
    arr = seq.data if isinstance(seq, Tensor) else np.asarray(seq, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"expected [T, 2, H, W], got {arr.shape}")
    batched = np.ascontiguousarray(arr.transpose(1, 0, 2, 3))[None]
    out = rf_feature_map(bundle, batched)
    c, t = out.data.shape[1], out.data.shape[2]
    return dc.reshape(out, (c, t) + out.data.shape[3:])


def rf_decoder_forward(bundle, fmap):
    """Feature map -> reconstructed sequence [N, 2, T, H, W] in [0, 1]."""
    cfg = bundle.encoder_cfg
    x = fmap if isinstance(fmap, Tensor) else dc.as_tensor(fmap)
    p = _group(bundle, "decoder")
    n_blocks = len(cfg.widths)
    for j in range(n_blocks):
        i = n_blocks - 1 - j
        s = cfg.block_stride(i)
        w = p[f"dec.conv{j}.w"].value
        b = p[f"dec.conv{j}.b"].value
        x = dc.conv_transpose3d(x, w, stride=s, padding=1, bias=b)
        x = dc.relu(x) if j < n_blocks - 1 else dc.sigmoid(x)
    return x


def rf_roi_features(bundle, fmap, boxes, index):
    """ROI-crop per retained time step and pool: the frozen ReID feature.

    fmap: [N, C, T', h, w]; boxes: [M, T', 4] in input-pixel coords;
    index: [M] sequence rows. Returns pooled [M, C] (head not applied).
    """
    cfg = bundle.encoder_cfg
    scale = cfg.map_extent / cfg.extent
    crops = dc.roi_crop_batch(fmap, boxes, index, cfg.roi_out, scale=scale)
    return dc.mean_pool(crops), crops


def rf_head_forward(bundle, crops):
    """ROI crops [M, C, T', r, r] -> unit-row embedding [M, out_dim]."""
    cfg = bundle.encoder_cfg
    p = _group(bundle, "head")
    x = crops
    for r in range(cfg.head_residual_blocks):
        w = p[f"head.res{r}.w"].value
        b = p[f"head.res{r}.b"].value
        y = dc.relu(dc.conv3d(x, w, stride=1, padding=1, bias=b))
        x = dc.add(x, y)
    pooled = dc.mean_pool(x)
    h = dc.affine(pooled, p["head.fc0.w"].value, p["head.fc0.b"].value)
    h = dc.relu(h)
    h = dc.affine(h, p["head.fc1.w"].value, p["head.fc1.b"].value)
    return dc.l2_normalize(h)


def make_probe(feature_dim, n_classes, seed=0):
    """Single affine layer; trained by the eval bench, never the encoder."""
    store = _ParamStore(seed)
    w, b = store.fc("probe", feature_dim, n_classes)
    return [w, b]


def probe_forward(probe_params, features):
    by_name = {p.name: p for p in probe_params}
    x = features if isinstance(features, Tensor) else dc.as_tensor(features)
    return dc.affine(x, by_name["probe.w"].value, by_name["probe.b"].value)
