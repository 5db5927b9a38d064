"""Small conditional denoiser over the latent space.

Conditioning: a sinusoidal timestep embedding, a learned camera-pose
embedding added to it (prior-preservation and reference batches use the
identity pose), and text tokens attended to by one cross-attention block
whose softmax weights are kept around for keyword attention extraction.

Text goes through a hash-bucket vocabulary, so any prompt tokenizes
without an external tokenizer file; special tokens land in buckets of
their own with overwhelming probability.
"""

import hashlib
import math

import torch
from torch import nn

from .latent import LATENT_CHANNELS

VOCAB_SIZE = 4096
EMBED_DIM = 64
BASE_CHANNELS = 48
ATTN_HEADS = 4
MAX_TOKENS = 16


def tokenize(text, max_tokens=MAX_TOKENS):
    """Stable hash-bucket token ids for a prompt, padded with bucket 0."""
    words = text.lower().split()[:max_tokens]
    ids = []
    for w in words:
        digest = hashlib.sha1(w.encode("utf-8")).digest()
        ids.append(1 + int.from_bytes(digest[:4], "little") % (VOCAB_SIZE - 1))
    while len(ids) < max_tokens:
        ids.append(0)
    return torch.tensor(ids, dtype=torch.long), words


def timestep_embedding(t, dim):
    """Sinusoidal embedding of a continuous t in (0, 1)."""
    t = torch.as_tensor(t, dtype=torch.float32).reshape(-1, 1)
    half = dim // 2
    freqs = torch.exp(torch.linspace(0.0, math.log(1000.0), half)).reshape(1, -1)
    ang = t * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, channels, emb_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.emb = nn.Linear(emb_dim, 2 * channels)
        self.norm2 = nn.GroupNorm(8, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x, emb):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        scale, shift = self.emb(emb).chunk(2, dim=1)
        h = h * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return x + h


class CrossAttention(nn.Module):
    """Single-layer text cross-attention; keeps the last softmax weights."""

    def __init__(self, channels, ctx_dim, heads=ATTN_HEADS):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(8, channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(ctx_dim, channels, bias=False)
        self.to_v = nn.Linear(ctx_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)
        for layer in (self.to_q, self.to_k, self.to_v, self.to_out):
            layer.lora_target = True
        self.last_weights = None

    def forward(self, x, ctx):
        b, c, h, w = x.shape
        q = self.to_q(self.norm(x).flatten(2).transpose(1, 2))   # (b, hw, c)
        k = self.to_k(ctx)                                       # (b, n, c)
        v = self.to_v(ctx)
        dh = c // self.heads

        def split(t):
            return t.reshape(b, -1, self.heads, dh).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        self.last_weights = attn.detach() if not attn.requires_grad else attn
        out = (attn @ v).transpose(1, 2).reshape(b, -1, c)
        out = self.to_out(out).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class Denoiser(nn.Module):
    def __init__(self, channels=BASE_CHANNELS, embed_dim=EMBED_DIM):
        super().__init__()
        self.token_embed = nn.Embedding(VOCAB_SIZE, embed_dim)
        self.time_mlp = nn.Sequential(
            nn.Linear(embed_dim, embed_dim), nn.SiLU(), nn.Linear(embed_dim, embed_dim),
        )
        self.pose_mlp = nn.Sequential(
            nn.Linear(7, embed_dim), nn.SiLU(), nn.Linear(embed_dim, embed_dim),
        )
        self.conv_in = nn.Conv2d(LATENT_CHANNELS, channels, 3, padding=1)
        self.block1 = ResBlock(channels, embed_dim)
        self.block2 = ResBlock(channels, embed_dim)
        self.attn = CrossAttention(channels, embed_dim)
        self.block3 = ResBlock(channels, embed_dim)
        self.conv_out = nn.Conv2d(channels, LATENT_CHANNELS, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    def forward(self, z, t, pose_vec, token_ids):
        """Predict the noise in z_t.

        pose_vec is (b, 7): unit quaternion plus translation; the identity
        pose is (1, 0, 0, 0, 0, 0, 0).
        """
        emb = self.time_mlp(timestep_embedding(t, EMBED_DIM))
        emb = emb + self.pose_mlp(torch.as_tensor(pose_vec, dtype=torch.float32))
        ctx = self.token_embed(token_ids)
        if ctx.dim() == 2:
            ctx = ctx.unsqueeze(0).expand(z.shape[0], -1, -1)
        h = self.conv_in(z)
        h = self.block1(h, emb)
        h = self.block2(h, emb)
        h = self.attn(h, ctx)
        h = self.block3(h, emb)
        return self.conv_out(h)

    def attention_for_token(self, words, keyword, spatial_shape):
        """Mean-head attention of `keyword`, min-max normalized to [0, 1].

        Uses the weights captured during the most recent forward pass.
        """
        if self.attn.last_weights is None:
            raise RuntimeError("no attention recorded; run a forward pass first")
        keyword = keyword.lower()
        if keyword not in words:
            raise KeyError(f"keyword {keyword!r} not in prompt tokens {words}")
        idx = words.index(keyword)
        w = self.attn.last_weights  # (b, heads, hw, tokens)
        amap = w[:, :, :, idx].mean(dim=(0, 1)).reshape(spatial_shape)
        amin, amax = amap.min(), amap.max()
        if (amax - amin) > 1e-12:
            amap = (amap - amin) / (amax - amin)
        else:
            amap = torch.zeros_like(amap)
        return amap
