import numpy as np
import pytest

from minimanip import data, env, pipeline, prompts, storage


@pytest.fixture(scope="module")
def expert_demo():
    traj = data.run_episode("drawer-open", seed=1, epsilon=0.0)
    sub = data.subsample_trajectory(traj)
    return pipeline.GeneratedDemo(
        task_id=traj.task_id, seed=1, layout=traj.layout,
        poses=None, video=sub.frames, actions=sub.actions)


def test_replay_ground_truth_succeeds(expert_demo):
    ok, _ = pipeline.replay_actions(expert_demo.task_id, expert_demo.layout, expert_demo.actions)
    assert ok


def test_quality_proxies_flags(expert_demo):
    flags = pipeline.quality_proxies(expert_demo, classifier=None)
    assert flags["replay_success"] is True
    assert flags["plausible"] is True
    assert flags["consistent"] is False  # no classifier provided


def test_proxies_unlabeled():
    demo = pipeline.GeneratedDemo("reach", 0, env.sample_layout("reach", 0), None,
                                  np.zeros((36, 64, 64, 3), np.uint8), np.zeros((0, 3)))
    with pytest.raises(ValueError, match="unlabeled demo"):
        pipeline.quality_proxies(demo, classifier=None)


def test_zero_actions_do_not_replay(expert_demo):
    ok, _ = pipeline.replay_actions(expert_demo.task_id, expert_demo.layout,
                                    np.zeros_like(expert_demo.actions))
    assert not ok


def test_filter_keeps_only_replayable(expert_demo):
    good = expert_demo
    good.flags = {"replay_success": True, "plausible": True, "consistent": True}
    bad = pipeline.GeneratedDemo("reach", 0, env.sample_layout("reach", 0), None,
                                 np.zeros((36, 64, 64, 3), np.uint8), np.zeros((35, 3)),
                                 flags={"replay_success": False, "plausible": True, "consistent": False})
    kept, stats = pipeline.filter_demonstrations([good, bad])
    assert kept == [good]
    assert stats["total"] == 2 and stats["kept"] == 1
    assert stats["discard_fraction"] == pytest.approx(0.5)
    assert all(d.flags["replay_success"] for d in kept)


def test_filter_identity_when_all_good(expert_demo):
    expert_demo.flags = {"replay_success": True, "plausible": True, "consistent": True}
    kept, stats = pipeline.filter_demonstrations([expert_demo])
    assert kept == [expert_demo]
    assert stats["discard_fraction"] == 0.0


def test_quality_report_arithmetic():
    def demo_with(flags):
        return pipeline.GeneratedDemo("reach", 0, None, None,
                                      np.zeros((1, 64, 64, 3), np.uint8),
                                      np.zeros((35, 3)), flags=flags)
    all_true = {"replay_success": True, "plausible": True, "consistent": True}
    all_false = {"replay_success": False, "plausible": False, "consistent": False}
    sets = {"few_shot": [demo_with(all_true)] * 2,
            "zero_shot": [demo_with(all_true), demo_with(all_false)]}
    rep = pipeline.quality_report(sets)
    assert rep["proxies"]["few_shot"]["accomplishment"] == 1.0
    assert rep["proxies"]["zero_shot"]["accomplishment"] == 0.5
    # equal set sizes: overall = mean of the two rows
    assert rep["proxies"]["average"]["accomplishment"] == pytest.approx(0.75)
    assert rep["human_reference"]["few_shot"]["accomplishment"] == 0.925
    for col in ("physical", "accomplishment", "consistency"):
        assert rep["proxies"]["few_shot"][col] >= rep["proxies"]["zero_shot"][col]


def test_report_structure_and_totals():
    cfg = pipeline.CrossvalConfig()
    rates = {tid: (1.0 if env.get_task(tid).fold == 1 else 0.0) for tid in env.TASK_IDS}
    rep = pipeline._report(1, "expert", "lcbc", rates, cfg)
    assert rep.totals["few_shot"] == "8/8"
    assert rep.totals["zero_shot"] == "0/8"
    assert len(rep.passes["few_shot"]) == 8
    assert rep.config_hash == cfg.hash()
    csv = pipeline.reports_to_csv([rep])
    assert csv.count("\n") == 17  # header + 16 task rows


def test_generated_demo_episode_conversion(expert_demo):
    eps = pipeline.demos_to_episodes([expert_demo])
    assert len(eps) == 1
    ep = eps[0]
    assert ep.history_stride == 1
    assert np.allclose(ep.actions, np.asarray(expert_demo.actions) / 3.0)
    assert len(ep.frames) == len(ep.actions) + 1


def test_checkpoint_round_trip(tmp_path):
    from minimanip import policies
    m = policies.make_policy("lcbc", np.random.default_rng(0), d=32, blocks=1)
    path = tmp_path / "p.ckpt"
    storage.save_model(path, m, "lcbc", {"d": 32, "blocks": 1}, {"seed": 0})
    m2, meta = storage.load_model(path)
    assert meta["kind"] == "lcbc"
    for k, v in m.state().items():
        assert np.allclose(v, m2.state()[k], atol=1e-7)


def test_checkpoint_magic(tmp_path):
    from minimanip import policies
    m = policies.make_policy("lcbc", np.random.default_rng(0), d=32, blocks=1)
    path = tmp_path / "p.ckpt"
    storage.save_model(path, m, "lcbc", {"d": 32, "blocks": 1})
    raw = path.read_bytes()
    assert raw[:8] == b"MMCKP1\x00\x00"
    with pytest.raises(ValueError, match="bad checkpoint magic"):
        storage.load_checkpoint(__file__)


def test_generate_demonstrations_smoke():
    from minimanip import diffusion
    from minimanip import inverse_dynamics as idm
    dvg_model = diffusion.VideoDenoiser(np.random.default_rng(0), channels=(4, 6, 8))
    idm_model = idm.ActionDecoder(np.random.default_rng(1), d=32, frame_blocks=1, temporal_blocks=1)
    sched = diffusion.build_schedule(3, "cosine")
    demos = pipeline.generate_demonstrations("reach", 2, dvg_model, idm_model, sched, seed=0, batch=2)
    assert len(demos) == 2
    assert demos[0].video.shape == (36, 64, 64, 3)
    assert demos[0].actions.shape == (35, 3)
    assert demos[0].seed != demos[1].seed
    # determinism
    demos2 = pipeline.generate_demonstrations("reach", 2, dvg_model, idm_model, sched, seed=0, batch=2)
    assert np.array_equal(demos[0].video, demos2[0].video)
    assert np.array_equal(demos[0].actions, demos2[0].actions)


def test_config_hash_stable():
    c1, c2 = pipeline.CrossvalConfig(), pipeline.CrossvalConfig()
    assert c1.hash() == c2.hash()
    c3 = pipeline.CrossvalConfig(seed=1)
    assert c3.hash() != c1.hash()
