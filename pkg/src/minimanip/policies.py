"""Behavior-cloned manipulation policies and closed-loop evaluation.

Two architectures: a single-frame policy that attends over patch tokens plus
a prompt token, and a history-conditioned policy that runs a causal decoder
over per-frame embeddings of the last k frames (stride 3, matching the
subsampled rate of generated demonstrations). Both emit 3 x 256 bin logits.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import data, env, nn, prompts
from .inverse_dynamics import FrameEncoder, PatchStem

HISTORY = 6
HISTORY_STRIDE = 3


class SingleFramePolicy(nn.Module):
    """Patch tokens + prompt token -> attention encoder -> bin logits."""

    arch = "lcbc"

    def __init__(self, rng=None, d=64, blocks=2, text_dim=32, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d = d
        self.stem = PatchStem(d, rng, dtype=dtype)
        self.prompt_fc = nn.Linear(text_dim, d, rng, dtype=dtype)
        self.blocks = [nn.TransformerBlock(d, rng, dtype=dtype) for _ in range(blocks)]
        self.head = nn.Linear(d, 3 * 256, rng, dtype=dtype)

    def __call__(self, frames, prompt_emb):
        """frames (B, 64, 64, 3) in [-1,1]; prompt_emb (B, 32) -> (B, 3, 256)."""
        if isinstance(frames, np.ndarray):
            frames = nn.Tensor(frames.astype(np.float32, copy=False))
        b = frames.shape[0]
        tokens = self.stem(frames)
        ptok = self.prompt_fc(nn.Tensor(np.asarray(prompt_emb, dtype=np.float32))).reshape(b, 1, self.d)
        h = nn.concat([ptok, tokens], axis=1)
        for blk in self.blocks:
            h = blk(h)
        pooled = _take_first(h)  # the prompt token acts as a task-conditioned query
        return self.head(pooled).reshape(b, 3, 256)


class HistoryPolicy(nn.Module):
    """Per-frame embeddings of the last k frames -> causal decoder -> logits."""

    arch = "rt1"

    def __init__(self, rng=None, d=64, blocks=2, history=HISTORY, text_dim=32, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d = d
        self.history = history
        self.encoder = FrameEncoder(d, rng, blocks=1, dtype=dtype)
        self.prompt_fc = nn.Linear(text_dim, d, rng, dtype=dtype)
        self.tpos = nn.Param((0.3 * rng.normal(size=(history + 1, d))).astype(dtype))
        self.blocks = [nn.TransformerBlock(d, rng, causal=True, dtype=dtype) for _ in range(blocks)]
        self.head = nn.Linear(d, 3 * 256, rng, dtype=dtype)

    def __call__(self, frames, prompt_emb):
        """frames (B, k, 64, 64, 3) oldest-first in [-1,1] -> (B, 3, 256)."""
        if isinstance(frames, np.ndarray):
            frames = nn.Tensor(frames.astype(np.float32, copy=False))
        b, k = frames.shape[0], frames.shape[1]
        if k != self.history:
            raise ValueError("history length mismatch")
        emb = self.encoder(frames.reshape(b * k, 64, 64, 3)).reshape(b, k, self.d)
        ptok = self.prompt_fc(nn.Tensor(np.asarray(prompt_emb, dtype=np.float32))).reshape(b, 1, self.d)
        h = nn.concat([ptok, emb], axis=1) + self.tpos
        for blk in self.blocks:
            h = blk(h)
        last = _take_last(h)
        return self.head(last).reshape(b, 3, 256)


def _take_last(x):
    """Last token of (B, T, D) with grad support."""
    def bwd(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, -1] = g
        x._accumulate(gx)

    return nn._make(np.ascontiguousarray(x.data[:, -1]), (x,), bwd)


def _take_first(x):
    """First token of (B, T, D) with grad support."""
    def bwd(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, 0] = g
        x._accumulate(gx)

    return nn._make(np.ascontiguousarray(x.data[:, 0]), (x,), bwd)


def make_policy(arch, rng=None, **kw):
    if arch == "lcbc":
        return SingleFramePolicy(rng, **kw)
    if arch == "rt1":
        return HistoryPolicy(rng, **kw)
    raise ValueError(f"unknown architecture: {arch!r}")


def policy_forward(model, observation, prompt_emb):
    """Finite (3, 256) logits for one observation (frame or frame history)."""
    obs = np.asarray(observation, dtype=np.float32)
    want = 3 if model.arch == "lcbc" else 4
    if obs.ndim == want:
        obs = obs[None]
    out = model(obs, np.atleast_2d(prompt_emb)).data
    return out[0] if out.shape[0] == 1 else out


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def bc_loss(logits, targets):
    """Mean cross-entropy over the three action dimensions."""
    logits_t = logits if isinstance(logits, nn.Tensor) else nn.Tensor(np.asarray(logits))
    t = np.asarray(targets)
    if logits_t.shape[-1] != 256 or logits_t.shape[-2] != 3 or logits_t.shape[:-2] != t.shape[:-1]:
        raise ValueError("shape mismatch")
    return nn.cross_entropy(logits_t, t)


def bc_loss_continuous(predicted, target):
    """Squared Euclidean distance between continuous actions (per sample mean)."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("shape mismatch")
    d = (p - t).reshape(-1, p.shape[-1]) if p.ndim > 1 else (p - t)[None]
    return float(np.mean(np.sum(d * d, axis=-1)))


# ---------------------------------------------------------------------------
# Training data
# ---------------------------------------------------------------------------

@dataclass
class BCEpisode:
    """Frames plus per-frame continuous actions at the simulator rate.

    history_stride is the frame spacing used for history conditioning: 3 for
    simulator-rate episodes, 1 for subsampled generated demonstrations.
    """
    task_id: str
    frames: np.ndarray          # (T+1, 64, 64, 3) uint8
    actions: np.ndarray         # (T, 3) float32
    prompt_emb: np.ndarray      # (32,)
    history_stride: int = HISTORY_STRIDE
    skip_mask: np.ndarray = None  # optional per-step exclusions


def _grab_wait_mask(traj):
    """Steps where the expert idled open at the handle waiting for a grab
    boundary; these are labeling-alignment artifacts, not behavior to clone."""
    state, _ = env.reset_from_layout(traj.task_id, traj.layout)
    mask = np.zeros(len(traj.actions), dtype=bool)
    fam = env.get_task(traj.task_id).family
    for i, a in enumerate(traj.actions):
        if fam != "reach" and np.all(a[:2] == 0.0) and a[2] <= 0.0 and not state.closed:
            d = np.linalg.norm(state.gripper - env.handle_point(traj.task_id, state.layout))
            mask[i] = d <= env.NEAR_TOL
        state, _ = env.step_state(state, a)
    return mask


def episodes_from_trajectories(trajs, drop_grab_waits=True):
    cache = {}
    out = []
    for t in trajs:
        if t.task_id not in cache:
            cache[t.task_id] = prompts.embed_prompt(prompts.task_prompt(t.task_id))
        ep = BCEpisode(t.task_id, t.frames, t.actions, cache[t.task_id])
        if drop_grab_waits:
            ep.skip_mask = _grab_wait_mask(t)
        out.append(ep)
    return out


def _history_indices(t, k, stride, length):
    idx = t - stride * np.arange(k - 1, -1, -1)
    return np.clip(idx, 0, length - 1)


@dataclass
class BCConfig:
    steps: int = 1500
    batch: int = 32
    lr: float = 1e-3
    lr_final: float = 2e-4      # cosine-decayed to this
    seed: int = 0
    d: int = 64
    blocks: int = 2
    noise_sigma: float = 0.04   # Gaussian noise in [-1,1] frame units
    translate: int = 6          # random frame shift (px); actions depend only
                                # on relative geometry, so labels are preserved
    history: int = HISTORY
    clip: float = 1.0


def train_policy(arch, episodes, config=None, hook=None):
    """Behavior cloning on (frame, action) pairs from the given episodes."""
    cfg = config or BCConfig()
    if not episodes:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    kw = {"d": cfg.d, "blocks": cfg.blocks}
    if arch == "rt1":
        kw["history"] = cfg.history
    model = make_policy(arch, np.random.default_rng(cfg.seed + 1), **kw)
    opt = nn.Adam(model.params(), lr=cfg.lr, clip=cfg.clip)

    pairs = [(ei, t) for ei, ep in enumerate(episodes) for t in range(len(ep.actions))
             if ep.skip_mask is None or not ep.skip_mask[t]]
    pairs = np.asarray(pairs)
    targets_all = [data.discretize(np.clip(ep.actions, -1.0, 1.0)) for ep in episodes]
    log = []
    k = cfg.history
    for it in range(cfg.steps):
        pick = pairs[rng.integers(0, len(pairs), size=cfg.batch)]
        prompt = np.stack([episodes[ei].prompt_emb for ei, _ in pick])
        tgt = np.stack([targets_all[ei][t] for ei, t in pick])
        if arch == "lcbc":
            obs = np.stack([episodes[ei].frames[t] for ei, t in pick]).astype(np.float32)
        else:
            obs = np.empty((cfg.batch, k, 64, 64, 3), dtype=np.float32)
            for bi, (ei, t) in enumerate(pick):
                ep = episodes[ei]
                idx = _history_indices(t, k, ep.history_stride, len(ep.frames))
                obs[bi] = ep.frames[idx]
        obs = obs / 127.5 - 1.0
        if cfg.translate > 0:
            shifts = rng.integers(-cfg.translate, cfg.translate + 1, size=(cfg.batch, 2))
            for bi in range(cfg.batch):
                obs[bi] = np.roll(obs[bi], tuple(shifts[bi]), axis=(-3, -2))
        if cfg.noise_sigma > 0:
            obs += rng.normal(0.0, cfg.noise_sigma, size=obs.shape).astype(np.float32)
        logits = model(obs, prompt)
        loss = bc_loss(logits, tgt)
        val = float(loss.data)
        if not np.isfinite(val):
            raise RuntimeError(f"numerical divergence at step {it}")
        model.zero_grad()
        loss.backward()
        opt.step()
        opt.lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + np.cos(np.pi * (it + 1) / cfg.steps))
        log.append(val)
        if hook is not None:
            hook(it, val)
    return model, log


# ---------------------------------------------------------------------------
# Closed-loop evaluation
# ---------------------------------------------------------------------------

def rollout_many(model, task_seed_pairs, max_steps=env.MAX_STEPS, prompt_embs=None):
    """Greedy closed-loop rollouts, stepped in lockstep across episodes.

    Returns a success flag per (task, seed) pair.
    """
    n = len(task_seed_pairs)
    if prompt_embs is None:
        cache = {}
        embs = []
        for tid, _ in task_seed_pairs:
            if tid not in cache:
                cache[tid] = prompts.embed_prompt(prompts.task_prompt(tid))
            embs.append(cache[tid])
        prompt_embs = np.stack(embs)
    states, frames, hist = [], [], []
    k = getattr(model, "history", HISTORY)
    for tid, seed in task_seed_pairs:
        s, f = env.reset(tid, seed)
        states.append(s)
        frames.append(f)
        hist.append([f] * (k * HISTORY_STRIDE))
    done = np.zeros(n, dtype=bool)
    for _ in range(max_steps):
        live = np.flatnonzero(~done)
        if len(live) == 0:
            break
        if model.arch == "lcbc":
            obs = np.stack([frames[i] for i in live]).astype(np.float32)
        else:
            obs = np.empty((len(live), k, 64, 64, 3), dtype=np.float32)
            for bi, i in enumerate(live):
                buf = hist[i]
                obs[bi] = np.stack([buf[-1 - HISTORY_STRIDE * j] for j in range(k - 1, -1, -1)])
        obs = obs / 127.5 - 1.0
        logits = model(obs, prompt_embs[live]).data
        bins = logits.argmax(axis=-1)
        acts = data.undiscretize(bins)
        for bi, i in enumerate(live):
            s, f, suc = env.step(states[i], acts[bi])
            states[i], frames[i] = s, f
            buf = hist[i]
            buf.append(f)
            if len(buf) > (k + 1) * HISTORY_STRIDE:
                del buf[0]
            if suc:
                done[i] = True
    return done


def rollout_eval(model, task, episodes=50, seed=0, max_steps=env.MAX_STEPS):
    """Task accomplishment rate over `episodes` greedy closed-loop rollouts."""
    task = env.get_task(task)
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    pairs = [(task.task_id, seed * 100_003 + e) for e in range(episodes)]
    done = rollout_many(model, pairs, max_steps=max_steps)
    return float(done.mean())
