"""Text- and pose-conditioned pixel-space video diffusion.

Forward noising uses the closed-form marginal of the per-step Gaussian
chain; the denoiser is a small per-frame conv U-Net (64 -> 32 -> 16) with
temporal self-attention over the 36-frame axis at every resolution, spatial
self-attention at 16x16, timestep+text conditioning added per level, and an
adapter pyramid that injects pose-video features into the encoder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import to_unit, from_unit

FRAMES = 36
TEXT_DIM = 32


# ---------------------------------------------------------------------------
# Noise schedules
# ---------------------------------------------------------------------------

@dataclass
class NoiseSchedule:
    kind: str
    T: int
    betas: np.ndarray       # (T,), beta_i for i = 1..T
    alphas: np.ndarray      # 1 - beta
    alpha_bar: np.ndarray   # cumulative products

    def bar(self, i):
        """alpha_bar_i with the alpha_bar_0 = 1 convention."""
        return 1.0 if i == 0 else float(self.alpha_bar[i - 1])


def build_schedule(T, kind="cosine"):
    """Linear or cosine beta schedule of length T.

    Linear endpoints are the usual 1000-step reference values (1e-4, 0.02)
    rescaled by 1000/T so that alpha_bar_T stays near zero at any length;
    cosine follows f(u) = cos^2((u + 0.008)/1.008 * pi/2) normalized by f(0).
    """
    if T < 2:
        raise ValueError("invalid schedule length")
    if kind == "linear":
        scale = 1000.0 / T
        betas = np.linspace(1e-4 * scale, 0.02 * scale, T)
    elif kind == "cosine":
        def f(u):
            return math.cos((u + 0.008) / 1.008 * math.pi / 2.0) ** 2
        f0 = f(0.0)
        bar = np.array([f(i / T) / f0 for i in range(T + 1)])
        betas = 1.0 - bar[1:] / bar[:-1]
    else:
        raise ValueError(f"unknown schedule kind: {kind!r}")
    betas = np.clip(betas, 1e-8, 0.999)
    alphas = 1.0 - betas
    return NoiseSchedule(kind=kind, T=T, betas=betas, alphas=alphas,
                         alpha_bar=np.cumprod(alphas))


def forward_diffuse(v0, i, noise, schedule):
    """Closed-form marginal sample at step i: sqrt(ab_i) v0 + sqrt(1-ab_i) eps."""
    if not (1 <= i <= schedule.T):
        raise ValueError("invalid timestep")
    ab = schedule.bar(i)
    return math.sqrt(ab) * v0 + math.sqrt(1.0 - ab) * noise


def dvg_loss(noise, predicted):
    """Mean squared error between true and predicted noise."""
    noise = np.asarray(noise)
    predicted = np.asarray(predicted)
    if noise.shape != predicted.shape:
        raise ValueError("shape mismatch")
    d = predicted - noise
    return float(np.mean(d * d))


def reverse_step(vi, i, eps_hat, schedule, rng):
    """One ancestral denoising step with fixed posterior variance."""
    if not (1 <= i <= schedule.T):
        raise ValueError("invalid timestep")
    beta = schedule.betas[i - 1]
    alpha = schedule.alphas[i - 1]
    ab_i = schedule.bar(i)
    ab_prev = schedule.bar(i - 1)
    mean = (vi - beta / math.sqrt(1.0 - ab_i) * eps_hat) / math.sqrt(alpha)
    if i == 1:
        return mean
    var = beta * (1.0 - ab_prev) / (1.0 - ab_i)
    return mean + math.sqrt(var) * rng.standard_normal(vi.shape).astype(vi.dtype, copy=False)


# ---------------------------------------------------------------------------
# Denoiser
# ---------------------------------------------------------------------------

class VideoAttention(nn.Module):
    """Pre-norm single-head residual attention over (N, T, C) tokens."""

    def __init__(self, d, n_tokens, rng, dtype=np.float32):
        self.ln = nn.LayerNorm(d, dtype=dtype)
        self.attn = nn.SelfAttention(d, rng, dtype=dtype)
        self.pos = nn.Param((0.3 * rng.normal(size=(n_tokens, d))).astype(dtype))

    def __call__(self, x):
        return x + self.attn(self.ln(x + self.pos))


# (temporal token reshuffles live below as Tensor-op helpers)


class PoseAdapter(nn.Module):
    """Per-frame conv pyramid over the pose video; one feature map per level."""

    def __init__(self, channels, rng, dtype=np.float32):
        c1, c2, c3 = channels
        self.c1 = nn.Conv2d(1, c1, rng, dtype=dtype)
        self.c2 = nn.Conv2d(c1, c2, rng, stride=2, dtype=dtype)
        self.c3 = nn.Conv2d(c2, c3, rng, stride=2, dtype=dtype)

    def __call__(self, pose):
        f1 = self.c1(pose)
        f2 = self.c2(nn.relu(f1))
        f3 = self.c3(nn.relu(f2))
        return f1, f2, f3


class VideoDenoiser(nn.Module):
    """Epsilon-prediction U-Net over (B, F, 3, 64, 64) videos in [-1, 1]."""

    def __init__(self, rng=None, channels=(12, 24, 48), cond_dim=64,
                 frames=FRAMES, text_dim=TEXT_DIM, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        c1, c2, c3 = channels
        self.channels = tuple(channels)
        self.frames = frames
        self.cond_dim = cond_dim
        # 64x64 level stays slim (3x3 convs here dominate the FLOP budget)
        self.in_conv = nn.Conv2d(3, c1, rng, dtype=dtype)
        self.tattn1 = VideoAttention(c1, frames, rng, dtype=dtype)
        self.down1 = nn.Conv2d(c1, c2, rng, stride=2, dtype=dtype)
        self.tattn2 = VideoAttention(c2, frames, rng, dtype=dtype)
        self.conv2 = nn.Conv2d(c2, c2, rng, dtype=dtype)
        self.down2 = nn.Conv2d(c2, c3, rng, stride=2, dtype=dtype)
        self.sattn3 = VideoAttention(c3, 16 * 16, rng, dtype=dtype)
        self.tattn3 = VideoAttention(c3, frames, rng, dtype=dtype)
        self.conv3 = nn.Conv2d(c3, c3, rng, dtype=dtype)
        self.up2 = nn.UpBlock(c3, c2, rng, dtype=dtype)
        self.conv4 = nn.Conv2d(c2, c2, rng, dtype=dtype)
        self.up1 = nn.UpBlock(c2, c1, rng, dtype=dtype)
        self.out_proj = nn.Conv2d(c1, 6, rng, k=1, dtype=dtype)
        self.out_conv = nn.Conv2d(6, 3, rng, dtype=dtype)
        self.out_conv.w.data *= 0.01  # start near zero-noise prediction
        self.time_fc1 = nn.Linear(cond_dim, cond_dim, rng, dtype=dtype)
        self.time_fc2 = nn.Linear(cond_dim, cond_dim, rng, dtype=dtype)
        self.text_fc = nn.Linear(text_dim, cond_dim, rng, dtype=dtype)
        self.cond1 = nn.Linear(cond_dim, c1, rng, dtype=dtype)
        self.cond2 = nn.Linear(cond_dim, c2, rng, dtype=dtype)
        self.cond3 = nn.Linear(cond_dim, c3, rng, dtype=dtype)
        self.cond4 = nn.Linear(cond_dim, c2, rng, dtype=dtype)
        self.cond5 = nn.Linear(cond_dim, c1, rng, dtype=dtype)
        self.adapter = PoseAdapter(channels, rng, dtype=dtype)
        self.dtype = dtype

    # -- conditioning helpers ------------------------------------------
    def _cond_vector(self, t_idx, text_emb, schedule_T):
        emb = nn.sinusoidal_embedding(np.asarray(t_idx, dtype=np.float64) / schedule_T * 1000.0,
                                      self.cond_dim).astype(self.dtype)
        h = self.time_fc2(nn.silu(self.time_fc1(nn.Tensor(emb))))
        return h + self.text_fc(nn.Tensor(np.asarray(text_emb, dtype=self.dtype)))

    @staticmethod
    def _add_cond(x, cond_c, b, f):
        n, h, w, c = x.shape
        bias = cond_c.reshape(b, 1, 1, 1, c)
        return (x.reshape(b, f, h, w, c) + bias).reshape(n, h, w, c)

    def _temporal(self, x, attn, b, f):
        """Self-attention over the frame axis at every spatial position."""
        n, h, w, c = x.shape
        t = x.reshape(b, f, h, w, c)
        t = nn.transpose(t, (0, 2, 3, 1, 4)).reshape(b * h * w, f, c)
        t = attn(t)
        t = nn.transpose(t.reshape(b, h, w, f, c), (0, 3, 1, 2, 4))
        return t.reshape(n, h, w, c)

    def pose_features(self, pose_video):
        """Encode a pose video (B, F, 64, 64, 1) in [0,1] into level features."""
        pv = pose_video
        if isinstance(pv, np.ndarray):
            pv = nn.Tensor(pv.astype(self.dtype, copy=False))
        b = pv.shape[0]
        flat = pv.reshape(b * self.frames, pv.shape[-3], pv.shape[-2], 1)
        return self.adapter(flat)

    def __call__(self, v, t_idx, text_emb, pose_feats, schedule_T):
        """Predict the noise in v (B, F, 64, 64, 3) at timesteps t_idx."""
        if isinstance(v, np.ndarray):
            v = nn.Tensor(v.astype(self.dtype, copy=False))
        b, f = v.shape[0], v.shape[1]
        hh, ww = v.shape[2], v.shape[3]
        f1, f2, f3 = pose_feats
        cond = self._cond_vector(t_idx, text_emb, schedule_T)

        x = v.reshape(b * f, hh, ww, 3)
        h1 = self.in_conv(x) + f1
        h1 = self._add_cond(h1, self.cond1(cond), b, f)
        h1 = self._temporal(h1, self.tattn1, b, f)

        h2 = self.down1(nn.relu(h1)) + f2
        h2 = self._add_cond(h2, self.cond2(cond), b, f)
        h2 = self._temporal(h2, self.tattn2, b, f)
        h2 = h2 + nn.relu(self.conv2(h2))

        h3 = self.down2(nn.relu(h2)) + f3
        h3 = self._add_cond(h3, self.cond3(cond), b, f)
        n3, h16, w16, c3 = h3.shape
        s = h3.reshape(n3, h16 * w16, c3)
        s = self.sattn3(s)
        h3 = self._temporal(s.reshape(n3, h16, w16, c3), self.tattn3, b, f)
        h3 = h3 + nn.relu(self.conv3(h3))

        u2 = self.up2(h3) + h2
        u2 = self._add_cond(u2, self.cond4(cond), b, f)
        u2 = u2 + nn.relu(self.conv4(u2))

        u1 = self.up1(u2) + h1
        u1 = self._add_cond(u1, self.cond5(cond), b, f)
        eps = self.out_conv(nn.relu(self.out_proj(nn.relu(u1))))
        return eps.reshape(b, f, hh, ww, 3)


# ---------------------------------------------------------------------------
# Training and sampling
# ---------------------------------------------------------------------------

@dataclass
class DvgConfig:
    steps: int = 1500
    batch: int = 2
    lr: float = 2e-3
    seed: int = 0
    T: int = 200
    kind: str = "cosine"
    channels: tuple = (12, 24, 48)
    clip: float = 1.0


def prepare_dvg_dataset(items):
    """(video u8, prompt, pose u8) triples -> packed float arrays.

    Returns dict with videos (N,F,64,64,3) in [-1,1], text (N,32), and pose
    videos (N,F,64,64,1) in [0,1].
    """
    from . import prompts as prompts_mod
    if not items:
        raise ValueError("empty dataset")
    videos, texts, poses = [], [], []
    for video, prompt, pose_video in items:
        videos.append(to_unit(video))
        texts.append(prompts_mod.embed_prompt(prompt))
        poses.append(np.asarray(pose_video, dtype=np.float32) / 255.0)
    return {
        "videos": np.asarray(videos, dtype=np.float32),
        "text": np.asarray(texts, dtype=np.float32),
        "pose": np.asarray(poses, dtype=np.float32),
    }


def train_dvg(dataset, config=None, model=None, hook=None):
    """Mini-batch epsilon-prediction training; returns (model, loss log)."""
    cfg = config or DvgConfig()
    packed = dataset if isinstance(dataset, dict) else prepare_dvg_dataset(dataset)
    videos, text, pose = packed["videos"], packed["text"], packed["pose"]
    n = len(videos)
    if n == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = VideoDenoiser(np.random.default_rng(cfg.seed + 1), channels=cfg.channels)
    sched = build_schedule(cfg.T, cfg.kind)
    opt = nn.Adam(model.params(), lr=cfg.lr, clip=cfg.clip)
    log = []
    for it in range(cfg.steps):
        idx = rng.integers(0, n, size=min(cfg.batch, n))
        v0 = videos[idx]
        t_idx = rng.integers(1, cfg.T + 1, size=len(idx))
        eps = rng.standard_normal(v0.shape).astype(np.float32)
        ab = sched.alpha_bar[t_idx - 1].astype(np.float32).reshape(-1, 1, 1, 1, 1)
        v_t = np.sqrt(ab) * v0 + np.sqrt(1.0 - ab) * eps
        feats = model.pose_features(pose[idx])
        pred = model(v_t, t_idx, text[idx], feats, sched.T)
        loss = nn.mse(pred, eps)
        val = float(loss.data)
        if not np.isfinite(val):
            raise RuntimeError(f"numerical divergence at step {it}")
        model.zero_grad()
        loss.backward()
        opt.step()
        log.append(val)
        if hook is not None:
            hook(it, val)
    return model, log


def sample_video(model, text_emb, pose_video, schedule, rng, as_uint8=True):
    """Ancestral sampling conditioned on text embeddings and pose videos.

    text_emb (M, 32); pose_video (M, F, 64, 64, 1) in [0,1] or uint8.
    Returns (M, F, 64, 64, 3) uint8 frames (or the float video in [-1,1]).
    """
    text_emb = np.atleast_2d(np.asarray(text_emb, dtype=np.float32))
    pose = np.asarray(pose_video, dtype=np.float32)
    if pose.ndim == 4:
        pose = pose[None]
    if pose.max() > 1.5:
        pose = pose / 255.0
    m, f = pose.shape[0], pose.shape[1]
    v = rng.standard_normal((m, f, 64, 64, 3)).astype(np.float32)
    feats = model.pose_features(pose)
    feats = tuple(ft.detach() for ft in feats)
    for i in range(schedule.T, 0, -1):
        t_idx = np.full(m, i)
        eps = model(v, t_idx, text_emb, feats, schedule.T).data
        if not np.isfinite(eps).all():
            raise RuntimeError(f"numerical divergence at step {i}")
        v = reverse_step(v, i, eps, schedule, rng)
    v = np.clip(v, -1.0, 1.0)
    if not as_uint8:
        return v
    return from_unit(v)


def psnr(a, b):
    """Peak signal-to-noise ratio between uint8 frame stacks, in dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse_val = np.mean((a - b) ** 2)
    if mse_val == 0:
        return float("inf")
    return 10.0 * math.log10(255.0 ** 2 / mse_val)
