"""Expert data collection, trajectory files, preprocessing, and discretization.

Episode directories hold three files: a UTF-8 `manifest.txt` of key=value
lines, `frames.bin` (magic MMTRJ1, u32 LE dims, raw uint8 pixels), and
`actions.bin` (magic MMACT1, u32 LE step count, 3 f32 LE per step).
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import env

FRAMES_MAGIC = b"MMTRJ1\x00\x00"
ACTIONS_MAGIC = b"MMACT1\x00\x00"

SKIP = 3            # frame subsampling stride for video tensors
VIDEO_FRAMES = 36   # fixed video length for the diffusion model
N_BINS = 256
WINDOW = 12         # default temporal window (frames) for action inference


@dataclass
class Trajectory:
    task_id: str
    seed: int
    epsilon: float
    frames: np.ndarray      # (L+1, 64, 64, 3) uint8
    actions: np.ndarray     # (L, 3) float32
    success: bool
    layout: env.WorkspaceLayout

    def __post_init__(self):
        if len(self.frames) != len(self.actions) + 1:
            raise ValueError("trajectory needs len(frames) == len(actions) + 1")


@dataclass
class WindowSample:
    frames: np.ndarray      # (w, 64, 64, 3) uint8
    actions: np.ndarray     # (w-1, 3) float32
    source: str             # "<task_id>/<seed>"
    start: int


@dataclass
class FoldSplit:
    fold: int
    few_shot: tuple
    zero_shot: tuple


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------

def run_episode(task, seed, epsilon=0.1, max_steps=env.MAX_STEPS):
    """Roll the scripted expert once; truncates at first success."""
    task = env.get_task(task)
    state, frame = env.reset(task, seed)
    layout0 = state.layout.copy()
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, env._hash64(task.task_id), 1])
    frames, actions = [frame], []
    success = False
    for _ in range(max_steps):
        a = env.scripted_expert(state, task, epsilon, rng)
        state, frame, success = env.step(state, a)
        frames.append(frame)
        actions.append(np.asarray(a, dtype=np.float32))
        if success:
            break
    return Trajectory(
        task_id=task.task_id, seed=int(seed), epsilon=float(epsilon),
        frames=np.stack(frames), actions=np.asarray(actions, dtype=np.float32),
        success=success, layout=layout0,
    )


def collect(task, n_episodes=20, epsilon=0.1, max_steps=env.MAX_STEPS, seed=0):
    """Collect `n_episodes` successful expert episodes, resampling failures.

    Attempt e uses seed+e; failed episodes are discarded and fresh seeds drawn
    until the quota is met. Raises after 10x the quota in attempts, which
    signals a broken expert or success threshold rather than bad luck.
    """
    task = env.get_task(task)
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError("invalid epsilon")
    out, attempt = [], 0
    while len(out) < n_episodes:
        if attempt >= 10 * n_episodes:
            raise RuntimeError(f"expert failure: {len(out)}/{n_episodes} successes in {attempt} attempts")
        traj = run_episode(task, seed + attempt, epsilon, max_steps)
        attempt += 1
        if traj.success:
            out.append(traj)
    return out


# ---------------------------------------------------------------------------
# Episode files
# ---------------------------------------------------------------------------

def _layout_items(layout):
    # repr of builtin floats round-trips exactly
    yield "layout.seed", str(layout.seed)
    for k in sorted(layout.positions):
        v = layout.positions[k]
        yield f"layout.pos.{k}", f"{float(v[0])!r},{float(v[1])!r}"
    for k in sorted(layout.scalars):
        yield f"layout.scalar.{k}", repr(float(layout.scalars[k]))


def _layout_from_items(items):
    pos, sca, seed = {}, {}, 0
    for k, v in items.items():
        if k == "layout.seed":
            seed = int(v)
        elif k.startswith("layout.pos."):
            x, y = v.split(",")
            pos[k[len("layout.pos."):]] = np.array([float(x), float(y)])
        elif k.startswith("layout.scalar."):
            sca[k[len("layout.scalar."):]] = float(v)
    return env.WorkspaceLayout(positions=pos, scalars=sca, seed=seed)


def save_trajectory(traj, dirpath):
    os.makedirs(dirpath, exist_ok=True)
    lines = [
        f"task_id={traj.task_id}",
        f"seed={traj.seed}",
        f"epsilon={float(traj.epsilon)!r}",
        f"n_steps={len(traj.actions)}",
        f"success={int(traj.success)}",
    ]
    lines.extend(f"{k}={v}" for k, v in _layout_items(traj.layout))
    with open(os.path.join(dirpath, "manifest.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    n, h, w, c = traj.frames.shape
    with open(os.path.join(dirpath, "frames.bin"), "wb") as f:
        f.write(FRAMES_MAGIC)
        f.write(np.asarray([n, h, w, c], dtype="<u4").tobytes())
        f.write(np.ascontiguousarray(traj.frames, dtype=np.uint8).tobytes())
    with open(os.path.join(dirpath, "actions.bin"), "wb") as f:
        f.write(ACTIONS_MAGIC)
        f.write(np.asarray([len(traj.actions)], dtype="<u4").tobytes())
        f.write(np.ascontiguousarray(traj.actions, dtype="<f4").tobytes())


def load_frames_bin(path):
    with open(path, "rb") as f:
        if f.read(8) != FRAMES_MAGIC:
            raise ValueError(f"bad magic in {path}")
        n, h, w, c = np.frombuffer(f.read(16), dtype="<u4")
        data = np.frombuffer(f.read(int(n) * int(h) * int(w) * int(c)), dtype=np.uint8)
    return data.reshape(int(n), int(h), int(w), int(c)).copy()


def save_frames_bin(path, frames):
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    n, h, w, c = frames.shape
    with open(path, "wb") as f:
        f.write(FRAMES_MAGIC)
        f.write(np.asarray([n, h, w, c], dtype="<u4").tobytes())
        f.write(frames.tobytes())


def load_actions_bin(path):
    with open(path, "rb") as f:
        if f.read(8) != ACTIONS_MAGIC:
            raise ValueError(f"bad magic in {path}")
        n = int(np.frombuffer(f.read(4), dtype="<u4")[0])
        data = np.frombuffer(f.read(n * 12), dtype="<f4")
    return data.reshape(n, 3).copy()


def save_actions_bin(path, actions):
    actions = np.ascontiguousarray(actions, dtype="<f4")
    with open(path, "wb") as f:
        f.write(ACTIONS_MAGIC)
        f.write(np.asarray([len(actions)], dtype="<u4").tobytes())
        f.write(actions.tobytes())


def load_trajectory(dirpath):
    items = {}
    with open(os.path.join(dirpath, "manifest.txt"), encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                k, v = line.split("=", 1)
                items[k] = v
    return Trajectory(
        task_id=items["task_id"], seed=int(items["seed"]),
        epsilon=float(items["epsilon"]),
        frames=load_frames_bin(os.path.join(dirpath, "frames.bin")),
        actions=load_actions_bin(os.path.join(dirpath, "actions.bin")),
        success=bool(int(items["success"])),
        layout=_layout_from_items(items),
    )


def save_dataset(trajs, root):
    for i, t in enumerate(trajs):
        save_trajectory(t, os.path.join(root, f"{t.task_id}_{t.seed:08d}"))


def load_dataset(root, task_ids=None):
    out = []
    for name in sorted(os.listdir(root)):
        d = os.path.join(root, name)
        if os.path.isdir(d) and os.path.exists(os.path.join(d, "manifest.txt")):
            t = load_trajectory(d)
            if task_ids is None or t.task_id in task_ids:
                out.append(t)
    return out


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

def subsample_frames(traj, skip=SKIP, max_frames=VIDEO_FRAMES):
    """Fixed-length video tensor: take every skip-th frame, pad by repeating."""
    frames = traj.frames if isinstance(traj, Trajectory) else np.asarray(traj)
    if skip < 1:
        raise ValueError("skip must be >= 1")
    if len(frames) == 0:
        raise ValueError("empty trajectory")
    picked = frames[::skip][:max_frames]
    if len(picked) < max_frames:
        pad = np.repeat(picked[-1:], max_frames - len(picked), axis=0)
        picked = np.concatenate([picked, pad], axis=0)
    return picked


def bridge_actions(actions, skip=SKIP, n_transitions=VIDEO_FRAMES - 1):
    """Per-subsampled-step actions: summed displacement, mean grip, zero padding.

    Summing the displacement commands of `skip` consecutive sim steps gives the
    net motion between subsampled frames (the expert's per-step magnitude cap
    keeps sums inside [-1, 1]); replaying the result as `skip` steps of
    1/skip magnitude reproduces that motion exactly.
    """
    actions = np.asarray(actions, dtype=np.float32)
    out = np.zeros((n_transitions, 3), dtype=np.float32)
    n_groups = (len(actions) + skip - 1) // skip
    for t in range(min(n_transitions, n_groups)):
        # the final group may be partial (episodes truncate at success); its
        # sum still encodes the remaining net displacement
        chunk = actions[t * skip:(t + 1) * skip]
        out[t, :2] = np.clip(chunk[:, :2].sum(axis=0), -1.0, 1.0)
        # grip: state at the group's end, which is what the next frame shows
        out[t, 2] = chunk[-1, 2]
    return out


def subsample_trajectory(traj, skip=SKIP, length=VIDEO_FRAMES):
    """Trajectory at the video frame rate: padded frames + bridged actions."""
    return Trajectory(
        task_id=traj.task_id, seed=traj.seed, epsilon=traj.epsilon,
        frames=subsample_frames(traj, skip, length),
        actions=bridge_actions(traj.actions, skip, length - 1),
        success=traj.success, layout=traj.layout,
    )


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float32)


def edge_extract(frame):
    """Grayscale Sobel gradient magnitude, scaled to [0, 255], 3 channels."""
    f = np.asarray(frame, dtype=np.float32)
    gray = 0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]
    p = np.pad(gray, 1, mode="edge")
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    for di in range(3):
        for dj in range(3):
            w = _SOBEL_X[di, dj]
            if w:
                gx += w * p[di:di + gray.shape[0], dj:dj + gray.shape[1]]
            w = _SOBEL_X[dj, di]
            if w:
                gy += w * p[di:di + gray.shape[0], dj:dj + gray.shape[1]]
    mag = np.sqrt(gx * gx + gy * gy) / 4.0  # 4*255 is the max per-axis response
    out = np.clip(np.rint(mag), 0, 255).astype(np.uint8)
    return np.repeat(out[..., None], 3, axis=-1)


def edge_extract_video(frames):
    return np.stack([edge_extract(f) for f in np.asarray(frames)])


def inject_noise(frame, sigma=10.0, rng=None):
    """Add per-channel Gaussian pixel noise, clamp to [0, 255], round."""
    if sigma < 0:
        raise ValueError("invalid sigma")
    frame = np.asarray(frame)
    if sigma == 0:
        return frame.copy()
    rng = rng if rng is not None else np.random.default_rng()
    noisy = frame.astype(np.float32) + rng.normal(0.0, sigma, size=frame.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def to_unit(frames):
    """uint8 pixels -> float32 in [-1, 1]."""
    return np.asarray(frames, dtype=np.float32) / 127.5 - 1.0


def from_unit(x):
    """float in [-1, 1] -> uint8 pixels."""
    return np.clip(np.rint((np.asarray(x) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def gripper_pose_track(traj):
    """Per-frame gripper (position, closed) via deterministic replay."""
    state, _ = env.reset_from_layout(traj.task_id, traj.layout)
    positions = [state.gripper.copy()]
    closed = [state.closed]
    for a in traj.actions:
        state, _ = env.step_state(state, a)
        positions.append(state.gripper.copy())
        closed.append(state.closed)
    return np.asarray(positions), np.asarray(closed, dtype=bool)


def subsampled_pose_track(traj, skip=SKIP, length=VIDEO_FRAMES):
    """Pose track at the video frame rate, padded like subsample_frames."""
    positions, closed = gripper_pose_track(traj)
    pos = positions[::skip][:length]
    clo = closed[::skip][:length]
    if len(pos) < length:
        pad = length - len(pos)
        pos = np.concatenate([pos, np.repeat(pos[-1:], pad, axis=0)])
        clo = np.concatenate([clo, np.repeat(clo[-1:], pad)])
    return pos, clo


# ---------------------------------------------------------------------------
# Windows and discretization
# ---------------------------------------------------------------------------

def make_windows(traj, w=WINDOW):
    """All stride-1 windows of w frames and their w-1 actions."""
    if w < 2:
        raise ValueError("window size must be >= 2")
    if len(traj.frames) < w:
        raise ValueError("trajectory too short")
    src = f"{traj.task_id}/{traj.seed}"
    return [
        WindowSample(frames=traj.frames[k:k + w], actions=traj.actions[k:k + w - 1], source=src, start=k)
        for k in range(len(traj.frames) - w + 1)
    ]


def discretize(a):
    """Per-dimension 256-bin index: floor((x+1)/2 * 256), clamped."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(np.abs(a) > 1.0 + 1e-9):
        raise ValueError("action out of range")
    bins = np.floor((a + 1.0) * (N_BINS / 2.0)).astype(np.int64)
    return np.clip(bins, 0, N_BINS - 1)


def undiscretize(d):
    """Bin centers: -1 + (bin + 0.5) * 2/256."""
    d = np.asarray(d, dtype=np.int64)
    if np.any(d < 0) or np.any(d >= N_BINS):
        raise ValueError("bin index out of range")
    return (-1.0 + (d + 0.5) * (2.0 / N_BINS)).astype(np.float32)


# ---------------------------------------------------------------------------
# Fold split
# ---------------------------------------------------------------------------

def fold_split(fold):
    """Families contribute their fold-k variant to the few-shot side of fold k."""
    if fold not in (1, 2):
        raise ValueError("invalid fold")
    few = tuple(t.task_id for t in env.REGISTRY.values() if t.fold == fold)
    zero = tuple(t.task_id for t in env.REGISTRY.values() if t.fold != fold)
    return FoldSplit(fold=fold, few_shot=few, zero_shot=zero)
