"""Deterministic language-side stand-ins: keyword extraction, prompt expansion,
hashed prompt embeddings, and scripted gripper pose planning/rendering.

The lexicon ships as a data file (`kind<TAB>token` lines); extraction is
longest-match-first over word boundaries, so multi-word tokens like
"slide back" win over their prefixes.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from . import env

EMBED_DIM = 32
_LEXICON_PATH = os.path.join(os.path.dirname(__file__), "lexicon.txt")


def load_lexicon(path=_LEXICON_PATH):
    """Ordered (kind, token) pairs from a lexicon file."""
    entries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            kind, token = line.split("\t")
            entries.append((kind, token.lower()))
    return entries


_LEXICON = load_lexicon()


@dataclass
class ExpandedPrompt:
    original: str
    keywords: list          # ordered (kind, token), occurrences preserved
    expanded: str


@dataclass
class PoseSequence:
    positions: np.ndarray   # (36, 2) float
    closed: np.ndarray      # (36,) bool

    def __len__(self):
        return len(self.positions)


# ---------------------------------------------------------------------------
# Keywords and expansion
# ---------------------------------------------------------------------------

def extract_keywords(text, lexicon=None):
    """Lexicon matches in order of appearance; overlaps resolved longest-first."""
    lexicon = _LEXICON if lexicon is None else lexicon
    low = text.lower()
    candidates = []
    for kind, token in lexicon:
        for m in re.finditer(r"(?<!\w)" + re.escape(token) + r"(?!\w)", low):
            candidates.append((m.start(), -len(token), token, kind))
    candidates.sort()
    taken, out = [], []
    for start, neglen, token, kind in candidates:
        end = start - neglen
        if any(s < end and start < e for s, e in taken):
            continue
        taken.append((start, end))
        out.append((kind, token))
    return out


def _cap(token):
    return token[:1].upper() + token[1:]


def expand_prompt(text):
    """Append ", (Tok)" for each action/environment keyword, deduplicated.

    Already-parenthesized tokens are not appended again, which makes
    expansion idempotent.
    """
    keywords = extract_keywords(text)
    seen, suffix = set(), []
    for kind, token in keywords:
        if kind == "object" or token in seen:
            continue
        seen.add(token)
        if f"({_cap(token)})" in text:
            continue
        suffix.append(f", ({_cap(token)})")
    return ExpandedPrompt(original=text, keywords=keywords, expanded=text + "".join(suffix))


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

def _token_vector(token, dim=EMBED_DIM):
    rng = np.random.default_rng([env._hash64("lexicon-embed"), env._hash64(token)])
    return rng.normal(0.0, 1.0, size=dim) / np.sqrt(dim)


_RESERVED = None


def _reserved_vector(dim=EMBED_DIM):
    global _RESERVED
    if _RESERVED is None or len(_RESERVED) != dim:
        v = _token_vector("__no_keywords__", dim)
        _RESERVED = v / np.linalg.norm(v)
    return _RESERVED


def embed_text(text, dim=EMBED_DIM):
    """Unit-norm mean of hashed token vectors over keyword occurrences."""
    tokens = [tok for _, tok in extract_keywords(text)]
    if not tokens:
        return _reserved_vector(dim).copy()
    v = np.mean([_token_vector(t, dim) for t in tokens], axis=0)
    n = np.linalg.norm(v)
    if n < 1e-12:
        return _reserved_vector(dim).copy()
    return v / n


def embed_prompt(prompt, dim=EMBED_DIM):
    """Embedding of an ExpandedPrompt (or raw string)."""
    text = prompt.expanded if isinstance(prompt, ExpandedPrompt) else str(prompt)
    return embed_text(text, dim)


def similarity_matrix(prompts, dim=EMBED_DIM):
    """Pairwise cosine similarities of prompt embeddings."""
    if len(prompts) < 2:
        raise ValueError("need at least two prompts")
    embs = np.stack([embed_prompt(p, dim) for p in prompts])
    return embs @ embs.T


def task_prompt(task):
    """Expanded prompt of a registered task's description."""
    return expand_prompt(env.get_task(task).description)


# ---------------------------------------------------------------------------
# Pose planning
# ---------------------------------------------------------------------------

POSE_STEP = 0.05  # workspace units per pose step; equals 3 expert sim steps


def plan_pose(task, layout, length=36):
    """Scripted gripper track for a layout, paced at the video frame rate.

    Walks the family waypoint plan axis-by-axis at POSE_STEP per pose, then
    holds the final pose; the result always has exactly `length` poses and
    its endpoint satisfies the task's goal geometry.
    """
    task = env.get_task(task)
    legs = env.waypoint_plan(task, layout)
    pos = layout.positions["grip_start"].astype(float).copy()
    positions, closed = [pos.copy()], [False]
    for target, grip in legs:
        guard = 0
        while np.abs(target - pos).max() > 1e-9:
            delta = target - pos
            axis = 0 if abs(delta[0]) >= abs(delta[1]) else 1
            move = np.sign(delta[axis]) * min(POSE_STEP, abs(delta[axis]))
            pos[axis] += move
            positions.append(pos.copy())
            closed.append(grip)
            guard += 1
            if guard > 4 * length:
                raise ValueError("plan too long for the pose budget")
    if len(positions) > length:
        raise ValueError(f"plan needs {len(positions)} poses, budget is {length}")
    while len(positions) < length:
        positions.append(pos.copy())
        closed.append(closed[-1])
    return PoseSequence(positions=np.asarray(positions, dtype=np.float64),
                        closed=np.asarray(closed, dtype=bool))


def render_pose_video(poses):
    """Single-channel pose conditioning video: one disc per frame.

    Disc intensity 255 when the gripper is closed, 128 when open; the
    workspace-to-pixel mapping matches the simulator renderer.
    """
    n = len(poses)
    video = np.zeros((n, env.RES, env.RES, 1), dtype=np.uint8)
    for t in range(n):
        frame = np.zeros((env.RES, env.RES, 3), dtype=np.uint8)
        val = 255 if poses.closed[t] else 128
        env._disc(frame, poses.positions[t], 2, (val, val, val))
        video[t, :, :, 0] = frame[:, :, 0]
    return video


def track_pose_sequence(task, layout, poses, steps_per_pose=3):
    """Closed-loop check: follow the pose track in the simulator.

    Returns (success, final EnvState). Each pose gets `steps_per_pose` sim
    steps of capped axis-aligned moves, mirroring how labeled actions are
    replayed.
    """
    task = env.get_task(task)
    state, _ = env.reset_from_layout(task, layout)
    ok = False
    for t in range(1, len(poses)):
        target = poses.positions[t]
        grip = env.EXPERT_CAP if poses.closed[t] else -env.EXPERT_CAP
        for _ in range(steps_per_pose):
            delta = target - state.gripper
            a = np.zeros(3)
            a[:2] = env._axis_step(delta, env.EXPERT_CAP)
            a[2] = grip
            state, _, suc = env.step(state, a)
            ok = ok or suc
        if ok:
            break
    return ok, state
