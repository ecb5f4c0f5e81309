"""
U-Net pequena para predicao de ruido (epsilon_theta) do DDPM toy.

Tres resolucoes, blocos residuais com GroupNorm + SiLU e embedding senoidal
do tempo somado em cada bloco.
"""

import math
from typing import Dict, List, Tuple

import torch
import torch.nn.functional as F
from torch import nn


def _groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """(B,) -> (B, dim) com senos e cossenos em frequencias geometricas."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2 == 1:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_channels), in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_channels)
        self.norm2 = nn.GroupNorm(_groups(out_channels), out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        if in_channels != out_channels:
            self.shortcut = nn.Conv2d(in_channels, out_channels, 1)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(t_emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.shortcut(x)


class ToyUNet(nn.Module):
    """epsilon_theta(x_t, t) com saida do mesmo shape da entrada.

    A ultima convolucao comeca zerada: o modelo nao treinado preve ruido
    zero e a perda inicial fica em E||eps||^2.
    """

    def __init__(
        self,
        in_channels: int = 3,
        base_channels: int = 32,
        channel_mults: Tuple[int, ...] = (1, 2, 2),
    ):
        super().__init__()
        self.in_channels = in_channels
        self.base_channels = base_channels
        self.channel_mults = tuple(channel_mults)
        time_dim = base_channels * 4
        self.time_dim = time_dim

        self.time_mlp = nn.Sequential(
            nn.Linear(base_channels, time_dim),
            nn.SiLU(),
            nn.Linear(time_dim, time_dim),
        )
        self.init_conv = nn.Conv2d(in_channels, base_channels, 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        skip_channels: List[int] = []
        channels = base_channels
        for i, mult in enumerate(self.channel_mults):
            out_channels = base_channels * mult
            self.down_blocks.append(ResBlock(channels, out_channels, time_dim))
            channels = out_channels
            skip_channels.append(channels)
            if i < len(self.channel_mults) - 1:
                self.downsamples.append(nn.Conv2d(channels, channels, 3, stride=2, padding=1))

        self.mid_block = ResBlock(channels, channels, time_dim)

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i, mult in reversed(list(enumerate(self.channel_mults))):
            out_channels = base_channels * mult
            self.up_blocks.append(ResBlock(channels + skip_channels[i], out_channels, time_dim))
            channels = out_channels
            if i > 0:
                self.upsamples.append(nn.Conv2d(channels, channels, 3, padding=1))

        self.out_norm = nn.GroupNorm(_groups(channels), channels)
        self.out_conv = nn.Conv2d(channels, in_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    @property
    def downsampling_factor(self) -> int:
        return 2 ** (len(self.channel_mults) - 1)

    def config(self) -> Dict[str, object]:
        return {
            "in_channels": self.in_channels,
            "base_channels": self.base_channels,
            "channel_mults": list(self.channel_mults),
        }

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        t_emb = timestep_embedding(t, self.base_channels).to(x.dtype)
        t_emb = self.time_mlp(t_emb)

        h = self.init_conv(x)
        skips: List[torch.Tensor] = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, t_emb)
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)

        h = self.mid_block(h, t_emb)

        for i, block in enumerate(self.up_blocks):
            h = block(torch.cat([h, skips.pop()], dim=1), t_emb)
            if i < len(self.upsamples):
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamples[i](h)

        return self.out_conv(F.silu(self.out_norm(h)))
