import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minimanip import data, env


@pytest.fixture(scope="module")
def short_traj():
    return data.run_episode("window-close", seed=2, epsilon=0.0)


def test_collect_counts_and_success():
    trajs = data.collect("drawer-open", n_episodes=3, epsilon=0.1, seed=0)
    assert len(trajs) == 3
    assert all(t.success for t in trajs)
    for t in trajs:
        assert len(t.frames) == len(t.actions) + 1


def test_collect_deterministic(tmp_path):
    a = data.collect("drawer-open", n_episodes=1, epsilon=0.0, seed=5)[0]
    b = data.collect("drawer-open", n_episodes=1, epsilon=0.0, seed=5)[0]
    data.save_trajectory(a, tmp_path / "a")
    data.save_trajectory(b, tmp_path / "b")
    for name in ("manifest.txt", "frames.bin", "actions.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_collect_epsilon_lengthens_episodes():
    clean = data.collect("faucet-open", n_episodes=8, epsilon=0.0, seed=0)
    noisy = data.collect("faucet-open", n_episodes=8, epsilon=0.1, seed=0)
    assert np.mean([len(t.actions) for t in noisy]) > np.mean([len(t.actions) for t in clean])


def test_file_round_trip(tmp_path, short_traj):
    data.save_trajectory(short_traj, tmp_path / "ep")
    back = data.load_trajectory(tmp_path / "ep")
    assert back.task_id == short_traj.task_id
    assert back.seed == short_traj.seed
    assert back.success == short_traj.success
    assert np.array_equal(back.frames, short_traj.frames)
    assert np.array_equal(back.actions, short_traj.actions)
    for k, v in short_traj.layout.positions.items():
        assert np.array_equal(back.layout.positions[k], v)
    assert back.layout.scalars == short_traj.layout.scalars


def test_frames_bin_magic(tmp_path, short_traj):
    data.save_trajectory(short_traj, tmp_path / "ep")
    raw = (tmp_path / "ep" / "frames.bin").read_bytes()
    assert raw[:8] == b"MMTRJ1\x00\x00"
    n, h, w, c = np.frombuffer(raw[8:24], dtype="<u4")
    assert (h, w, c) == (64, 64, 3)
    assert len(raw) == 24 + n * h * w * c
    raw_a = (tmp_path / "ep" / "actions.bin").read_bytes()
    assert raw_a[:8] == b"MMACT1\x00\x00"


def test_subsample_index_arithmetic():
    frames = np.arange(200)[:, None, None, None] * np.ones((1, 64, 64, 3), dtype=np.uint8)
    picked = data.subsample_frames(frames, skip=3, max_frames=36)
    assert picked.shape[0] == 36
    assert picked[0, 0, 0, 0] == 0 and picked[1, 0, 0, 0] == 3
    assert picked[35, 0, 0, 0] == 105


def test_subsample_padding():
    frames = np.arange(30)[:, None, None, None] * np.ones((1, 64, 64, 3), dtype=np.uint8)
    picked = data.subsample_frames(frames, skip=3, max_frames=36)
    vals = picked[:, 0, 0, 0]
    assert list(vals[:10]) == [0, 3, 6, 9, 12, 15, 18, 21, 24, 27]
    assert np.all(vals[10:] == 27)


def test_subsample_identity():
    frames = np.arange(36)[:, None, None, None] * np.ones((1, 64, 64, 3), dtype=np.uint8)
    picked = data.subsample_frames(frames, skip=1, max_frames=36)
    assert np.array_equal(picked[:, 0, 0, 0], np.arange(36))


def test_subsample_empty():
    with pytest.raises(ValueError, match="empty trajectory"):
        data.subsample_frames(np.zeros((0, 64, 64, 3), dtype=np.uint8))


def test_edge_extract_constant_zero():
    frame = np.full((64, 64, 3), 77, dtype=np.uint8)
    assert data.edge_extract(frame).max() == 0


def test_edge_extract_step_edge():
    frame = np.zeros((64, 64, 3), dtype=np.uint8)
    frame[:, 32:] = 255
    out = data.edge_extract(frame)[:, :, 0].astype(int)
    inside = out[:, 31:33]
    outside = np.concatenate([out[:, :30], out[:, 34:]], axis=1)
    assert inside.max() > 200
    assert outside.max() == 0


def test_edge_extract_closure():
    frame = np.random.default_rng(0).integers(0, 256, size=(64, 64, 3)).astype(np.uint8)
    out = data.edge_extract(data.edge_extract(frame))
    assert out.dtype == np.uint8
    assert out.min() >= 0 and out.max() <= 255


def test_inject_noise_identity():
    frame = np.random.default_rng(1).integers(0, 256, size=(64, 64, 3)).astype(np.uint8)
    assert np.array_equal(data.inject_noise(frame, 0.0, np.random.default_rng(0)), frame)


def test_inject_noise_std():
    frame = np.full((640, 640, 3), 128, dtype=np.uint8)
    out = data.inject_noise(frame, 10.0, np.random.default_rng(0))
    delta = out.astype(np.float64) - 128.0
    assert 9.5 <= delta.std() <= 10.5


def test_inject_noise_clamp():
    frame = np.full((64, 64, 3), 255, dtype=np.uint8)
    out = data.inject_noise(frame, 10.0, np.random.default_rng(0))
    assert out.max() <= 255


def test_inject_noise_invalid_sigma():
    with pytest.raises(ValueError, match="invalid sigma"):
        data.inject_noise(np.zeros((4, 4, 3), dtype=np.uint8), -1.0, np.random.default_rng(0))


def _toy_traj(n_frames):
    frames = np.zeros((n_frames, 64, 64, 3), dtype=np.uint8)
    actions = np.zeros((n_frames - 1, 3), dtype=np.float32)
    lay = env.sample_layout("reach", 0)
    return data.Trajectory("reach", 0, 0.0, frames, actions, True, lay)


@pytest.mark.parametrize("n,expect", [(13, 2), (12, 1)])
def test_make_windows_counts(n, expect):
    wins = data.make_windows(_toy_traj(n), w=12)
    assert len(wins) == expect
    assert all(len(w.frames) == 12 and len(w.actions) == 11 for w in wins)


def test_make_windows_too_short():
    with pytest.raises(ValueError, match="trajectory too short"):
        data.make_windows(_toy_traj(11), w=12)


def test_window_coverage_reconstruction(short_traj):
    w = 12
    wins = data.make_windows(short_traj, w=w)
    rebuilt = []
    k = 0
    while k < len(wins):
        rebuilt.append(wins[k].actions)
        k += w - 1
    rebuilt = np.concatenate(rebuilt)[:len(short_traj.actions)]
    assert np.array_equal(rebuilt, short_traj.actions[:len(rebuilt)])


def test_discretize_endpoints():
    assert data.discretize(np.array([-1.0, -1.0, -1.0])).tolist() == [0, 0, 0]
    assert data.discretize(np.array([1.0, 1.0, 1.0])).tolist() == [255, 255, 255]


def test_round_trip_error_bound():
    xs = np.linspace(-1, 1, 1001)
    err = np.abs(data.undiscretize(data.discretize(np.stack([xs] * 3, axis=-1))) - xs[:, None])
    assert err.max() <= 1.0 / 256 + 1e-7


def test_bins_round_trip_exhaustive():
    bins = np.arange(256)
    back = data.discretize(np.stack([data.undiscretize(np.stack([bins] * 3, -1))[:, 0]] * 3, -1))
    assert np.array_equal(back[:, 0], bins)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_discretize_monotone(a, b):
    da = data.discretize(np.asarray(a))
    db = data.discretize(np.asarray(b))
    for i in range(3):
        if a[i] <= b[i]:
            assert da[i] <= db[i]


def test_discretize_rejects_out_of_range():
    with pytest.raises(ValueError, match="action out of range"):
        data.discretize(np.array([1.5, 0.0, 0.0]))


def test_fold_split_contents():
    s1 = data.fold_split(1)
    assert "door-close" in s1.few_shot
    assert "door-open" in s1.zero_shot
    s2 = data.fold_split(2)
    assert set(s1.zero_shot) == set(s2.few_shot)
    assert set(s1.few_shot) | set(s1.zero_shot) == set(env.TASK_IDS)
    assert not set(s1.few_shot) & set(s1.zero_shot)
    assert len(s1.few_shot) == 8 and len(s1.zero_shot) == 8
    for split in (s1, s2):
        for group in (split.few_shot, split.zero_shot):
            assert len({env.get_task(t).family for t in group}) == 8


def test_fold_split_invalid():
    with pytest.raises(ValueError, match="invalid fold"):
        data.fold_split(3)


def test_bridged_actions_match_displacement(short_traj):
    sub = data.subsample_trajectory(short_traj)
    assert len(sub.frames) == 36 and len(sub.actions) == 35
    positions, _ = data.gripper_pose_track(short_traj)
    k = (len(short_traj.actions) // 3)
    for t in range(min(10, k)):
        net = positions[3 * (t + 1)] - positions[3 * t]
        assert np.allclose(env.STEP * sub.actions[t, :2], net, atol=1e-9)


def test_bridged_actions_replayable(short_traj):
    from minimanip.pipeline import replay_actions
    ok, _ = replay_actions(short_traj.task_id, short_traj.layout,
                           data.subsample_trajectory(short_traj).actions)
    assert ok
