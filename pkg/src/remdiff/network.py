"""Conditional U-Net noise predictor.

Input is the channel-wise concatenation of the noisy map and the coordinate
heatmap (2 x H x W); output is the predicted noise field (1 x H x W). The
step index enters through a sinusoidal embedding + MLP and modulates every
residual block via per-channel scale/shift (FiLM). Spatial self-attention
sits at the deepest encoder scale and in the bottleneck, where it is cheap
enough to capture long-range structure.

Channel plan follows base_channels x channel_multipliers per scale, with two
residual blocks per scale; the decoder mirrors the encoder with skip
concatenation, and the first residual block after each concat maps back down
to the scale's nominal width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatch


@dataclass(frozen=True)
class DenoiserConfig:
    height: int = 256
    width: int = 256
    base_channels: int = 64
    channel_multipliers: tuple[int, ...] = (1, 2, 4)
    res_blocks_per_scale: int = 2
    time_embed_dim: int = 256
    groups: int = 8
    heads: int = 4
    env_dim: int = 0

    def __post_init__(self):
        factor = 2 ** (len(self.channel_multipliers) + 1)  # scales + bottleneck
        if self.height % factor or self.width % factor:
            raise ValueError(
                f"H, W must be divisible by {factor}, got {self.height}x{self.width}")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even (sin/cos pairing)")
        for m in self.channel_multipliers:
            c = self.base_channels * m
            if c % self.groups:
                raise ValueError(f"channel count {c} not divisible by {self.groups} groups")
            if c % self.heads:
                raise ValueError(f"channel count {c} not divisible by {self.heads} heads")

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_multipliers)

    def to_dict(self) -> dict:
        return {"height": self.height, "width": self.width,
                "base_channels": self.base_channels,
                "channel_multipliers": list(self.channel_multipliers),
                "res_blocks_per_scale": self.res_blocks_per_scale,
                "time_embed_dim": self.time_embed_dim, "groups": self.groups,
                "heads": self.heads, "env_dim": self.env_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        d = dict(d)
        d["channel_multipliers"] = tuple(d["channel_multipliers"])
        return cls(**d)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """g(t) = [sin(t / 10000^(2k/D)), cos(t / 10000^(2k/D))] for k < D/2."""
    if dim % 2:
        raise ValueError("embedding dim must be even")
    t = t.to(torch.float64).reshape(-1, 1)
    k = torch.arange(dim // 2, dtype=torch.float64, device=t.device)
    freq = t / torch.pow(torch.tensor(10000.0, dtype=torch.float64), 2.0 * k / dim)
    return torch.cat([torch.sin(freq), torch.cos(freq)], dim=-1)


class TimeEmbedding(nn.Module):
    """Sinusoidal step encoding followed by a two-layer SiLU perceptron."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.mlp(sinusoidal_embedding(t, self.dim).to(torch.float32))


def film_modulate(h: torch.Tensor, gamma: torch.Tensor,
                  beta_shift: torch.Tensor) -> torch.Tensor:
    """(1 + gamma) * h + beta_shift with channel-wise broadcasting."""
    while gamma.dim() < h.dim():
        gamma = gamma.unsqueeze(-1)
        beta_shift = beta_shift.unsqueeze(-1)
    return (1.0 + gamma) * h + beta_shift


class FiLM(nn.Module):
    """Affine head turning the time embedding into per-channel scale/shift."""

    def __init__(self, embed_dim: int, channels: int):
        super().__init__()
        self.head = nn.Linear(embed_dim, 2 * channels)

    def forward(self, h: torch.Tensor, e_t: torch.Tensor) -> torch.Tensor:
        gamma, beta_shift = self.head(e_t).chunk(2, dim=-1)
        return film_modulate(h, gamma, beta_shift)


class ResidualBlock(nn.Module):
    """Conv-Norm-SiLU stack, FiLM-modulated, with a projection skip if needed."""

    def __init__(self, c_in: int, c_out: int, embed_dim: int, groups: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, c_out)
        self.film = FiLM(embed_dim, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, e_t: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.film(self.norm1(self.conv1(x)), e_t))
        h = F.silu(self.norm2(self.conv2(h)))
        return self.skip(x) + h


class SelfAttention2d(nn.Module):
    """Multi-head spatial self-attention, applied residually.

    Tokens are the spatial positions of the feature map; Q, K, V are
    bias-free linear projections, and heads are concatenated without an
    output projection, so one token attending to itself reduces to X W^V.
    """

    def __init__(self, channels: int, heads: int):
        super().__init__()
        if channels % heads:
            raise ValueError(f"{channels} channels not divisible by {heads} heads")
        self.heads = heads
        self.norm = nn.LayerNorm(channels)
        self.wq = nn.Linear(channels, channels, bias=False)
        self.wk = nn.Linear(channels, channels, bias=False)
        self.wv = nn.Linear(channels, channels, bias=False)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        return x.reshape(b, n, self.heads, c // self.heads).transpose(1, 2)

    def attention_probs(self, x_flat: torch.Tensor) -> torch.Tensor:
        """Softmax attention matrix, shape (B, heads, N, N); rows sum to 1."""
        q = self._split(self.wq(x_flat))
        k = self._split(self.wk(x_flat))
        d = q.shape[-1]
        return torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)

    def attend(self, x_flat: torch.Tensor) -> torch.Tensor:
        """softmax(Q K^T / sqrt(d)) V on flattened (B, N, C) features."""
        probs = self.attention_probs(x_flat)
        v = self._split(self.wv(x_flat))
        out = probs @ v
        b, _, n, _ = out.shape
        return out.transpose(1, 2).reshape(b, n, -1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        flat = x.reshape(b, c, h * w).transpose(1, 2)
        out = self.attend(self.norm(flat))
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 2, stride=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class _ScaleEntry(nn.Module):
    """Conv+GN+SiLU channel-lifting entry of an encoder scale."""

    def __init__(self, c_in: int, c_out: int, groups: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm = nn.GroupNorm(groups, c_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.silu(self.norm(self.conv(x)))


class Denoiser(nn.Module):
    """Noise predictor eps(x_t ++ heatmap, t, env) -> (B, 1, H, W)."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        chans = config.channels
        d = config.time_embed_dim
        g = config.groups

        self.time_embed = TimeEmbedding(d)
        self.env_lift = nn.Linear(config.env_dim, d) if config.env_dim > 0 else None

        self.entries = nn.ModuleList()
        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        c_prev = 2
        for level, c in enumerate(chans):
            self.entries.append(_ScaleEntry(c_prev, c, g))
            self.enc_blocks.append(nn.ModuleList(
                ResidualBlock(c, c, d, g) for _ in range(config.res_blocks_per_scale)))
            self.downs.append(Downsample(c))  # last one feeds the bottleneck
            c_prev = c
        self.enc_attn = SelfAttention2d(chans[-1], config.heads)

        c_mid = chans[-1]
        self.mid_block1 = ResidualBlock(c_mid, c_mid, d, g)
        self.mid_attn = SelfAttention2d(c_mid, config.heads)
        self.mid_block2 = ResidualBlock(c_mid, c_mid, d, g)

        self.ups = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        c_dec = c_mid
        for c in reversed(chans):
            self.ups.append(Upsample(c_dec))
            blocks = [ResidualBlock(c_dec + c, c, d, g)]
            blocks += [ResidualBlock(c, c, d, g)
                       for _ in range(config.res_blocks_per_scale - 1)]
            self.dec_blocks.append(nn.ModuleList(blocks))
            c_dec = c

        self.head_conv = _ScaleEntry(chans[0], chans[0], g)
        self.head_out = nn.Conv2d(chans[0], 1, 1)

        self.apply(_init_conv_fan_in)
        nn.init.zeros_(self.head_out.weight)
        nn.init.zeros_(self.head_out.bias)

    def embed(self, t: torch.Tensor, env: torch.Tensor | None) -> torch.Tensor:
        e_t = self.time_embed(t)
        if env is not None:
            if self.env_lift is None:
                raise ShapeMismatch("model was built without an env pathway")
            e_t = e_t + self.env_lift(env.to(torch.float32))
        elif self.env_lift is not None:
            raise ShapeMismatch(
                f"model expects env features of length {self.config.env_dim}")
        return e_t

    def forward(self, x: torch.Tensor, t: torch.Tensor,
                env: torch.Tensor | None = None) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 2:
            raise ShapeMismatch(f"expected (B, 2, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] != self.config.height or x.shape[3] != self.config.width:
            raise ShapeMismatch(
                f"input {tuple(x.shape[2:])} != configured "
                f"{(self.config.height, self.config.width)}")
        e_t = self.embed(t, env)

        skips = []
        h = x
        last = len(self.entries) - 1
        for level, (entry, blocks) in enumerate(zip(self.entries, self.enc_blocks)):
            h = entry(h)
            for block in blocks:
                h = block(h, e_t)
            if level == last:
                h = self.enc_attn(h)
            skips.append(h)
            h = self.downs[level](h)

        h = self.mid_block1(h, e_t)
        h = self.mid_attn(h)
        h = self.mid_block2(h, e_t)

        for up, blocks, skip in zip(self.ups, self.dec_blocks, reversed(skips)):
            h = up(h)
            h = torch.cat([h, skip], dim=1)
            for block in blocks:
                h = block(h, e_t)

        return self.head_out(self.head_conv(h))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def _init_conv_fan_in(module: nn.Module) -> None:
    if isinstance(module, nn.Conv2d):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
