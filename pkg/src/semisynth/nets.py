"""Generator, discriminator, and projection heads.

The generator has one encoder per source modality, a channel-attention fusion
block whose gates are softmax-normalized across the three encoder streams,
and a shared decoder ending in a sigmoid so outputs live in [0, 1].

Atomic layers (every convolution and every residual-block output) are
enumerated in forward order starting at 0 = encoder stem; see
``layer_table``. Feature taps are requested by atomic-layer index. Taps in
the encoder region concatenate the three encoder streams along channels, so
each tap resolves to exactly one activation grid.

With the defaults (n_res_blocks=3) the enumeration is:

    0 stem | 1 down1 | 2 down2 | 3..11 encoder res blocks (conv_a, conv_b,
    block_out per block) | 12 fusion | 13..21 decoder res blocks | 22 up1 |
    23 up2 | 24 output conv

so taps (0, 4, 8, 12, 16) span stem, two encoder blocks, the fusion output
and a decoder block, and distillation taps (4, 8, 12, 16, 21) end at the
deepest decoder residual output.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, asdict
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class GeneratorSpec:
    n_encoders: int = 3
    base_width: int = 16
    n_res_blocks: int = 3
    tap_indices: tuple[int, ...] = (0, 4, 8, 12, 16)
    distill_tap_indices: tuple[int, ...] = (4, 8, 12, 16, 21)
    embed_dim: int = 128

    def __post_init__(self):
        if self.n_encoders < 1 or self.base_width < 1 or self.n_res_blocks < 1:
            raise ValueError("n_encoders, base_width and n_res_blocks must be positive")
        for name in ("tap_indices", "distill_tap_indices"):
            idx = getattr(self, name)
            if list(idx) != sorted(set(idx)):
                raise ValueError(f"{name} must be strictly increasing, got {idx}")
            if idx and idx[0] < 0:
                raise ValueError(f"{name} contains a negative index")


@dataclass(frozen=True)
class DiscriminatorSpec:
    n_layers: int = 3        # stride-2 downsampling convs
    base_width: int = 16

    def __post_init__(self):
        if self.n_layers < 1 or self.base_width < 1:
            raise ValueError("n_layers and base_width must be positive")

    @property
    def stride_product(self) -> int:
        return 2 ** self.n_layers

    @property
    def receptive_field(self) -> int:
        # k=4 stride-2 convs, then two k=4 stride-1 convs
        rf, stride = 1, 1
        for _ in range(self.n_layers):
            rf += 3 * stride
            stride *= 2
        rf += 3 * stride  # penultimate conv
        rf += 3 * stride  # score conv
        return rf


@dataclass(frozen=True)
class LayerEntry:
    index: int
    name: str
    region: str      # encoder | fusion | decoder
    channels: int    # channels of the tap grid (encoder entries are concat x n_encoders)
    stride: int      # cumulative downsampling factor relative to the input


def layer_table(spec: GeneratorSpec) -> list[LayerEntry]:
    """Enumerate atomic layers (convolutions and residual-block outputs)."""
    w, r, n = spec.base_width, spec.n_res_blocks, spec.n_encoders
    entries = [
        LayerEntry(0, "enc_stem", "encoder", n * w, 1),
        LayerEntry(1, "enc_down1", "encoder", n * 2 * w, 2),
        LayerEntry(2, "enc_down2", "encoder", n * 4 * w, 4),
    ]
    i = 3
    for b in range(r):
        for part in ("conv_a", "conv_b", "out"):
            entries.append(LayerEntry(i, f"enc_res{b + 1}_{part}", "encoder", n * 4 * w, 4))
            i += 1
    entries.append(LayerEntry(i, "fusion", "fusion", 4 * w, 4))
    i += 1
    for b in range(r):
        for part in ("conv_a", "conv_b", "out"):
            entries.append(LayerEntry(i, f"dec_res{b + 1}_{part}", "decoder", 4 * w, 4))
            i += 1
    entries.append(LayerEntry(i, "dec_up1", "decoder", 2 * w, 2))
    entries.append(LayerEntry(i + 1, "dec_up2", "decoder", w, 1))
    entries.append(LayerEntry(i + 2, "dec_out", "decoder", 1, 1))
    return entries


@dataclass
class FeatureTapSet:
    """Named intermediate activations keyed by atomic-layer index."""

    taps: dict[int, torch.Tensor]  # index -> (B, C, h, w)
    source: str                    # "teacher" | "student"

    def shapes(self) -> dict[int, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self.taps.items()}


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv_a = nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect")
        self.norm_a = nn.InstanceNorm2d(channels)
        self.conv_b = nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect")
        self.norm_b = nn.InstanceNorm2d(channels)

    def atoms(self, x):
        a = F.relu(self.norm_a(self.conv_a(x)))
        b = self.norm_b(self.conv_b(a))
        return [a, b, x + b]


class Encoder(nn.Module):
    def __init__(self, width: int, n_res_blocks: int):
        super().__init__()
        self.stem = nn.Conv2d(1, width, 7, padding=3, padding_mode="reflect")
        self.norm0 = nn.InstanceNorm2d(width)
        self.down1 = nn.Conv2d(width, 2 * width, 3, stride=2, padding=1)
        self.norm1 = nn.InstanceNorm2d(2 * width)
        self.down2 = nn.Conv2d(2 * width, 4 * width, 3, stride=2, padding=1)
        self.norm2 = nn.InstanceNorm2d(4 * width)
        self.blocks = nn.ModuleList(ResBlock(4 * width) for _ in range(n_res_blocks))

    def atoms(self, x):
        out = [F.relu(self.norm0(self.stem(x)))]
        out.append(F.relu(self.norm1(self.down1(out[-1]))))
        out.append(F.relu(self.norm2(self.down2(out[-1]))))
        for block in self.blocks:
            out.extend(block.atoms(out[-1]))
        return out


class FusionBlock(nn.Module):
    """Channel attention across parallel streams.

    Per-stream gate logits come from global average pooling through a
    bottleneck MLP; gates are softmax-normalized ACROSS the streams for each
    channel, so they sum to 1 and the output is a convex per-channel
    combination of the streams.
    """

    def __init__(self, channels: int, n_branches: int = 3, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 4)
        # leaky activation: the bottleneck is narrow and its pooled inputs are
        # highly correlated, so a plain ReLU can leave a whole gate MLP dead
        self.gate_mlps = nn.ModuleList(
            nn.Sequential(nn.Linear(channels, hidden), nn.LeakyReLU(0.2),
                          nn.Linear(hidden, channels))
            for _ in range(n_branches)
        )

    def gates(self, feats) -> torch.Tensor:
        if len(feats) != len(self.gate_mlps):
            raise ValueError(f"expected {len(self.gate_mlps)} streams, got {len(feats)}")
        if any(f.shape != feats[0].shape for f in feats):
            raise ValueError(f"stream shapes differ: {[tuple(f.shape) for f in feats]}")
        logits = torch.stack([mlp(f.mean(dim=(2, 3))) for mlp, f in zip(self.gate_mlps, feats)])
        return torch.softmax(logits, dim=0)  # (n_branches, B, C)

    def forward(self, feats) -> torch.Tensor:
        g = self.gates(feats)
        return sum(g[i].unsqueeze(-1).unsqueeze(-1) * f for i, f in enumerate(feats))


class Generator(nn.Module):
    """Multi-encoder image synthesis network with feature taps."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self.table = layer_table(spec)
        depth = len(self.table)
        for idx in (*spec.tap_indices, *spec.distill_tap_indices):
            if idx >= depth:
                raise ValueError(f"tap index {idx} beyond network depth {depth}")
        self._tap_union = sorted(set(spec.tap_indices) | set(spec.distill_tap_indices))

        w = spec.base_width
        self.encoders = nn.ModuleList(Encoder(w, spec.n_res_blocks) for _ in range(spec.n_encoders))
        self.fusion = FusionBlock(4 * w, n_branches=spec.n_encoders)
        self.dec_blocks = nn.ModuleList(ResBlock(4 * w) for _ in range(spec.n_res_blocks))
        self.up1 = nn.ConvTranspose2d(4 * w, 2 * w, 3, stride=2, padding=1, output_padding=1)
        self.norm_u1 = nn.InstanceNorm2d(2 * w)
        self.up2 = nn.ConvTranspose2d(2 * w, w, 3, stride=2, padding=1, output_padding=1)
        self.norm_u2 = nn.InstanceNorm2d(w)
        self.out_conv = nn.Conv2d(w, 1, 7, padding=3, padding_mode="reflect")

    def forward(self, sources: torch.Tensor, source_tag: str = "teacher",
                tap_indices=None) -> tuple[torch.Tensor, FeatureTapSet]:
        if sources.dim() != 4 or sources.shape[1] != len(self.encoders):
            raise ValueError(
                f"expected (B, {len(self.encoders)}, H, W) input, got {tuple(sources.shape)}"
            )
        want = set(self._tap_union if tap_indices is None else tap_indices)

        branch_atoms = [enc.atoms(sources[:, i:i + 1]) for i, enc in enumerate(self.encoders)]
        atoms = []
        for k in range(len(branch_atoms[0])):
            atoms.append(torch.cat([ba[k] for ba in branch_atoms], dim=1) if k in want else None)

        fused = self.fusion([ba[-1] for ba in branch_atoms])
        atoms.append(fused)
        h = fused
        for block in self.dec_blocks:
            block_atoms = block.atoms(h)
            atoms.extend(block_atoms)
            h = block_atoms[-1]
        h = F.relu(self.norm_u1(self.up1(h)))
        atoms.append(h)
        h = F.relu(self.norm_u2(self.up2(h)))
        atoms.append(h)
        out = torch.sigmoid(self.out_conv(h))
        atoms.append(out)

        taps = {}
        in_h, in_w = sources.shape[2], sources.shape[3]
        for idx in sorted(want):
            t = atoms[idx]
            entry = self.table[idx]
            expect = (t.shape[0], entry.channels, in_h // entry.stride, in_w // entry.stride)
            if tuple(t.shape) != expect:
                raise RuntimeError(f"tap {idx} shape {tuple(t.shape)} != table {expect}")
            taps[idx] = t
        return out, FeatureTapSet(taps=taps, source=source_tag)


class Discriminator(nn.Module):
    """Fully convolutional patch scorer: one raw score per output cell.

    n_layers stride-2 convs followed by two stride-1 convs with size-
    preserving asymmetric padding, so a (H, W) input yields a
    (H / stride_product, W / stride_product) score grid. No normalization
    layers: every activation depends only on the cell's receptive field, so
    the score map is exactly translation-covariant on interior cells.
    """

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        w = spec.base_width
        layers: list[nn.Module] = [
            nn.Conv2d(1, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        ]
        ch = w
        for _ in range(spec.n_layers - 1):
            layers += [
                nn.Conv2d(ch, 2 * ch, 4, stride=2, padding=1),
                nn.LeakyReLU(0.2),
            ]
            ch *= 2
        layers += [
            nn.ZeroPad2d((1, 2, 1, 2)),
            nn.Conv2d(ch, 2 * ch, 4, stride=1),
            nn.LeakyReLU(0.2),
            nn.ZeroPad2d((1, 2, 1, 2)),
            nn.Conv2d(2 * ch, 1, 4, stride=1),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() != 4 or image.shape[1] != 1:
            raise ValueError(f"expected (B, 1, H, W) input, got {tuple(image.shape)}")
        m = self.spec.stride_product
        if image.shape[2] < m or image.shape[3] < m:
            raise ValueError(
                f"input {tuple(image.shape[2:])} smaller than one score cell "
                f"(needs at least {m}x{m})"
            )
        return self.net(image)


class ProjectionHeads(nn.Module):
    """Per-tap two-layer MLP mapping a patch feature vector to a unit-norm
    embedding."""

    def __init__(self, gen_spec: GeneratorSpec, embed_dim: int | None = None):
        super().__init__()
        embed_dim = embed_dim or gen_spec.embed_dim
        table = layer_table(gen_spec)
        self.heads = nn.ModuleDict()
        for idx in gen_spec.tap_indices:
            c = table[idx].channels
            self.heads[str(idx)] = nn.Sequential(
                nn.Linear(c, embed_dim), nn.ReLU(), nn.Linear(embed_dim, embed_dim)
            )

    @property
    def tap_indices(self) -> list[int]:
        return sorted(int(k) for k in self.heads.keys())

    def embed(self, tap_index: int, vectors: torch.Tensor) -> torch.Tensor:
        out = self.heads[str(tap_index)](vectors)
        return F.normalize(out, dim=-1)


def extract_patch_embeddings(
    taps: FeatureTapSet,
    heads: ProjectionHeads,
    locations: dict[int, list[tuple[int, int]]],
) -> dict[int, torch.Tensor]:
    """Embed the channel vector at each (row, col) grid location of each tap.

    Returns {tap index: (B, n_locations, embed_dim)} with unit-norm rows.
    """
    out = {}
    for idx, locs in locations.items():
        grid = taps.taps[idx]
        _, _, h, w = grid.shape
        for r, c in locs:
            if not (0 <= r < h and 0 <= c < w):
                raise ValueError(f"location ({r}, {c}) outside {h}x{w} grid of tap {idx}")
        rows = torch.tensor([r for r, _ in locs], dtype=torch.long)
        cols = torch.tensor([c for _, c in locs], dtype=torch.long)
        vectors = grid[:, :, rows, cols].permute(0, 2, 1)  # (B, S, C)
        out[idx] = heads.embed(idx, vectors)
    return out


def init_weights(module: nn.Module, seed: int = 0, std: float = 0.02) -> nn.Module:
    """Normal(0, std) init for conv/linear weights, zero biases; seeded."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            with torch.no_grad():
                m.weight.normal_(0.0, std, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
    return module


def build_generator(spec: GeneratorSpec, seed: int = 0) -> Generator:
    return init_weights(Generator(spec), seed=seed)


def build_discriminator(spec: DiscriminatorSpec, seed: int = 0) -> Discriminator:
    return init_weights(Discriminator(spec), seed=seed)


def build_heads(spec: GeneratorSpec, seed: int = 0) -> ProjectionHeads:
    return init_weights(ProjectionHeads(spec), seed=seed)


def copy_weights(src: nn.Module, dst: nn.Module) -> nn.Module:
    dst.load_state_dict(src.state_dict(), strict=True)
    return dst


def state_hash(module: nn.Module) -> str:
    """Hash of all parameters and buffers; equal hashes mean bitwise-equal weights."""
    h = hashlib.sha256()
    sd = module.state_dict()
    for key in sorted(sd.keys()):
        h.update(key.encode())
        h.update(sd[key].detach().cpu().numpy().tobytes())
    return h.hexdigest()


CHECKPOINT_KEYS = {
    "format_version", "generator_spec", "discriminator_spec",
    "generator", "discriminator", "heads", "meta",
}


def make_checkpoint(generator: Generator, discriminator: Discriminator | None = None,
                    heads: ProjectionHeads | None = None, meta: dict | None = None) -> dict:
    def clone_sd(mod):
        return {k: v.detach().clone() for k, v in mod.state_dict().items()}

    return {
        "format_version": 1,
        "generator_spec": asdict(generator.spec),
        "discriminator_spec": asdict(discriminator.spec) if discriminator is not None else None,
        "generator": clone_sd(generator),
        "discriminator": clone_sd(discriminator) if discriminator is not None else None,
        "heads": clone_sd(heads) if heads is not None else None,
        "meta": dict(meta or {}),
    }


def save_checkpoint(payload: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    keys = set(payload.keys())
    if keys != CHECKPOINT_KEYS:
        missing, extra = CHECKPOINT_KEYS - keys, keys - CHECKPOINT_KEYS
        raise ValueError(f"bad checkpoint: missing keys {sorted(missing)}, extra {sorted(extra)}")
    return payload


def restore_networks(payload: dict):
    """Rebuild (generator, discriminator, heads) from a checkpoint payload.

    load_state_dict(strict=True) fails loudly on any missing or unexpected
    parameter key.
    """
    gen = Generator(GeneratorSpec(**{
        **payload["generator_spec"],
        "tap_indices": tuple(payload["generator_spec"]["tap_indices"]),
        "distill_tap_indices": tuple(payload["generator_spec"]["distill_tap_indices"]),
    }))
    gen.load_state_dict(payload["generator"], strict=True)
    disc = None
    if payload["discriminator"] is not None:
        disc = Discriminator(DiscriminatorSpec(**payload["discriminator_spec"]))
        disc.load_state_dict(payload["discriminator"], strict=True)
    heads = None
    if payload["heads"] is not None:
        heads = ProjectionHeads(gen.spec)
        heads.load_state_dict(payload["heads"], strict=True)
    return gen, disc, heads


def checkpoint_id(payload: dict) -> str:
    h = hashlib.sha256()
    for part in ("generator", "discriminator", "heads"):
        sd = payload[part]
        if sd is None:
            continue
        for key in sorted(sd.keys()):
            h.update(key.encode())
            h.update(sd[key].cpu().numpy().tobytes())
    return h.hexdigest()[:16]
