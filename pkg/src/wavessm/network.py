"""Full enhancement network: embedding, three wavelet levels, decoding.

Encoder: a 3x3 embedding conv, then per level a Haar split whose
approximation band is fused with the bilinear-downsampled input and run
through a stack of low-frequency blocks, while the three detail bands are
reduced by SKFF and corrected by high-frequency blocks.  Decoder: per
level (deepest first) the low path is refined by the same count of
low-frequency blocks and the high path by high-frequency blocks, the high
map is expanded back to three bands, the level is synthesized by the
inverse wavelet transform and added to the encoder skip.  A final 3x3 conv
predicts a residual added to the (reflect-padded) input, clamped to [0,1]
and cropped.

Checkpoint file layout (little-endian): magic ``WMCK``, u32 version=1,
u64 manifest length, UTF-8 JSON manifest mapping tensor name ->
``{dtype:"f32", shape:[...], offset, byte_len}`` (offset relative to the
payload section), then the raw float32 payload.  The architecture is
recorded as a reserved ``meta.config`` tensor so a checkpoint is
self-describing.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import hfe as hfe_mod
from . import lfss as lfss_mod
from .params import ConvParams, ParamBuilder
from .tensor import ensure_finite

MAGIC = b"WMCK"
VERSION = 1
META_NAME = "meta.config"
LEVELS = 3
PAD_MULTIPLE = 2**LEVELS


class CheckpointError(ValueError):
    """Malformed or inconsistent checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults give the full-size model."""

    channels: int = 32
    lfss_counts: tuple[int, ...] = (1, 2, 4)
    hfe_counts: tuple[int, ...] = (1, 1, 1)
    heads: int = 8
    expand: int = 2
    state_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if len(self.lfss_counts) != LEVELS or len(self.hfe_counts) != LEVELS:
            raise ValueError(
                f"lfss_counts/hfe_counts must have {LEVELS} entries, got "
                f"{self.lfss_counts} / {self.hfe_counts}"
            )
        if self.channels <= 0 or self.heads <= 0:
            raise ValueError("channels and heads must be positive")
        if self.channels % self.heads:
            raise ValueError(
                f"heads={self.heads} must divide channels={self.channels}"
            )
        if self.expand < 1 or self.state_size < 1:
            raise ValueError("expand and state_size must be >= 1")
        if any(n < 0 for n in self.lfss_counts + self.hfe_counts):
            raise ValueError("block counts must be non-negative")
        if not (0 <= self.seed < 2**32):
            raise ValueError("seed must fit in 32 bits")


TOY_CONFIG = ModelConfig(
    channels=8, lfss_counts=(1, 1, 1), hfe_counts=(1, 1, 1), heads=8, seed=0
)


@dataclass
class EncoderLevel:
    in_conv: ConvParams  # 3 -> C on the downsampled input
    fuse: ConvParams  # 2C -> C (1x1)
    lfss: list[lfss_mod.LfssWeights]
    skff: hfe_mod.SkffWeights
    hfe: list[hfe_mod.HfeWeights]


@dataclass
class DecoderLevel:
    lfss: list[lfss_mod.LfssWeights]
    hfe: list[hfe_mod.HfeWeights]
    expand_high: ConvParams  # C -> 3C (1x1)


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, ad.Var]
    embed: ConvParams
    enc: list[EncoderLevel]
    dec: list[DecoderLevel]
    final: ConvParams

    @property
    def dtype(self):
        return next(iter(self.params.values())).value.dtype

    def astype(self, dtype) -> "Model":
        """Cast every parameter in place (e.g. float64 for training)."""
        for var in self.params.values():
            var.value = var.value.astype(dtype)
        return self


def build(cfg: ModelConfig) -> Model:
    """Instantiate a model with seed-deterministic weights."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    pb = ParamBuilder(rng, dtype=np.float32)
    c = cfg.channels
    embed = pb.conv("embed", 3, 3, c)
    enc = []
    for lvl in range(1, LEVELS + 1):
        p = f"enc.l{lvl}"
        enc.append(
            EncoderLevel(
                in_conv=pb.conv(f"{p}.in_conv", 3, 3, c),
                fuse=pb.conv(f"{p}.fuse", 1, 2 * c, c),
                lfss=[
                    lfss_mod.build_lfss(pb, f"{p}.lfss.{i}", c, cfg.expand, cfg.state_size)
                    for i in range(cfg.lfss_counts[lvl - 1])
                ],
                skff=hfe_mod.build_skff(pb, f"{p}.skff", c),
                hfe=[
                    hfe_mod.build_hfe(pb, f"{p}.hfe.{i}", c, cfg.heads)
                    for i in range(cfg.hfe_counts[lvl - 1])
                ],
            )
        )
    dec = []
    for lvl in range(1, LEVELS + 1):
        p = f"dec.l{lvl}"
        dec.append(
            DecoderLevel(
                lfss=[
                    lfss_mod.build_lfss(pb, f"{p}.lfss.{i}", c, cfg.expand, cfg.state_size)
                    for i in range(cfg.lfss_counts[lvl - 1])
                ],
                hfe=[
                    hfe_mod.build_hfe(pb, f"{p}.hfe.{i}", c, cfg.heads)
                    for i in range(cfg.hfe_counts[lvl - 1])
                ],
                expand_high=pb.conv(f"{p}.expand_high", 1, c, 3 * c),
            )
        )
    # small-gain output projection: the network starts near the identity
    # map, keeping the global-residual clamp away from saturation
    final = pb.conv("final", 3, c, 3, gain=0.01)
    return Model(cfg, pb.params, embed, enc, dec, final)


def param_count(m: Model) -> int:
    """Total trainable element count."""
    return int(sum(v.value.size for v in m.params.values()))


def pad_to_multiple(img: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    """Reflect-pad H and W (bottom/right) up to the next multiple."""
    h, w = img.shape[0], img.shape[1]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return img
    if ph >= h or pw >= w:
        raise ValueError(
            f"image {h}x{w} too small to reflect-pad to a multiple of {multiple}"
        )
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")


def forward_padded(m: Model, x: ad.Var) -> ad.Var:
    """Run the network on an already-padded (H, W, 3) Var in [0, 1]."""
    c = m.config.channels
    feat = m.embed(x)
    skips = [feat]  # encoder low-path features, full resolution first
    highs = []
    img_ds = x
    for level in m.enc:
        sub = ad.dwt2(feat)  # (h/2, w/2, 4C)
        ca = ad.narrow(sub, 2, 0, c)
        img_ds = ad.avg_pool2(img_ds)
        fused = level.fuse(ad.concat([ca, level.in_conv(img_ds)], axis=2))
        for blk in level.lfss:
            fused = lfss_mod.lfss_block(fused, blk)
        fh = hfe_mod.skff(
            ad.narrow(sub, 2, c, c),
            ad.narrow(sub, 2, 2 * c, c),
            ad.narrow(sub, 2, 3 * c, c),
            level.skff,
        )
        for blk in level.hfe:
            fh = hfe_mod.hfe_block(fh, fused, blk)
        highs.append(fh)
        skips.append(fused)
        feat = fused
    low = skips.pop()  # deepest enhanced low band
    for lvl in range(LEVELS - 1, -1, -1):
        level = m.dec[lvl]
        for blk in level.lfss:
            low = lfss_mod.lfss_block(low, blk)
        fh = highs[lvl]
        for blk in level.hfe:
            fh = hfe_mod.hfe_block(fh, low, blk)
        bands = level.expand_high(fh)  # C -> 3C
        up = ad.iwt2(ad.concat([low, bands], axis=2))
        low = ad.add(up, skips[lvl])
    residual = m.final(low)
    return ad.clamp(ad.add(x, residual), 0.0, 1.0)


def forward(m: Model, img: np.ndarray) -> np.ndarray:
    """Enhance an (H, W, 3) image with values in [0, 1]; pure inference."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    h, w = img.shape[0], img.shape[1]
    if h == 0 or w == 0:
        raise ValueError("empty image")
    padded = pad_to_multiple(img.astype(m.dtype, copy=False))
    with ad.no_grad():
        out = forward_padded(m, ad.constant(padded)).value
    out = out[:h, :w]
    ensure_finite(out, "network output")
    return out


# ---------------------------------------------------------------------------
# checkpoint serialization


def _config_to_meta(cfg: ModelConfig) -> np.ndarray:
    vals = [
        float(VERSION),
        float(cfg.channels),
        float(cfg.heads),
        float(cfg.expand),
        float(cfg.state_size),
        *[float(n) for n in cfg.lfss_counts],
        *[float(n) for n in cfg.hfe_counts],
        float(cfg.seed >> 16),
        float(cfg.seed & 0xFFFF),
    ]
    return np.asarray(vals, dtype="<f4")


def _config_from_meta(meta: np.ndarray) -> ModelConfig:
    if meta.size != 13:
        raise CheckpointError(f"{META_NAME} has {meta.size} entries, expected 13")
    v = [int(round(float(x))) for x in meta]
    if v[0] != VERSION:
        raise CheckpointError(f"unsupported config version {v[0]}")
    return ModelConfig(
        channels=v[1],
        heads=v[2],
        expand=v[3],
        state_size=v[4],
        lfss_counts=tuple(v[5:8]),
        hfe_counts=tuple(v[8:11]),
        seed=(v[11] << 16) | v[12],
    )


def save(m: Model, path) -> None:
    """Write a bit-exact float32 checkpoint."""
    tensors = {name: var.value for name, var in m.params.items()}
    tensors[META_NAME] = _config_to_meta(m.config)
    manifest = {}
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = arr.tobytes()
        manifest[name] = {
            "dtype": "f32",
            "shape": list(arr.shape),
            "offset": len(payload),
            "byte_len": len(raw),
        }
        payload.extend(raw)
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(payload)


def load(path) -> Model:
    """Read a checkpoint written by :func:`save`; round-trips bit-exactly."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16:
        raise CheckpointError("file truncated before header")
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    (mlen,) = struct.unpack_from("<Q", data, 8)
    if 16 + mlen > len(data):
        raise CheckpointError("file truncated inside manifest")
    try:
        manifest = json.loads(data[16 : 16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"malformed manifest: {e}") from None
    if not isinstance(manifest, dict):
        raise CheckpointError("manifest is not an object")
    payload = data[16 + mlen :]

    def read_tensor(name, entry):
        if entry.get("dtype") != "f32":
            raise CheckpointError(f"tensor {name!r} has unsupported dtype "
                                  f"{entry.get('dtype')!r}")
        off, blen = entry["offset"], entry["byte_len"]
        if off < 0 or off + blen > len(payload):
            raise CheckpointError(f"file truncated: tensor {name!r} extends past end")
        arr = np.frombuffer(payload, dtype="<f4", count=blen // 4, offset=off)
        shape = tuple(entry["shape"])
        if int(np.prod(shape)) * 4 != blen:
            raise CheckpointError(f"tensor {name!r}: shape {shape} != {blen} bytes")
        return arr.reshape(shape).copy()

    if META_NAME not in manifest:
        raise CheckpointError(f"manifest missing {META_NAME!r}")
    cfg = _config_from_meta(read_tensor(META_NAME, manifest[META_NAME]))
    model = build(cfg)
    unknown = sorted(set(manifest) - set(model.params) - {META_NAME})
    if unknown:
        raise CheckpointError(f"unknown tensor name(s) in checkpoint: {unknown}")
    missing = sorted(set(model.params) - set(manifest))
    if missing:
        raise CheckpointError(f"checkpoint missing tensor(s): {missing}")
    for name, entry in manifest.items():
        if name == META_NAME:
            continue
        arr = read_tensor(name, entry)
        var = model.params[name]
        if arr.shape != var.value.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {arr.shape}, model expects "
                f"{var.value.shape}"
            )
        var.value = arr
    return model


def zero_residual(m: Model) -> Model:
    """Zero the final conv so the network is an exact identity map."""
    m.final.w.value = np.zeros_like(m.final.w.value)
    m.final.b.value = np.zeros_like(m.final.b.value)
    return m
