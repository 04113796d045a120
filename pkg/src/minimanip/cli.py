"""Command-line front end. One subcommand per pipeline stage.

The library API is the primary surface; these commands are thin wrappers
that wire files to the corresponding functions.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np


def _cmd_registry(args):
    from . import env
    env.write_registry(args.out)
    print(f"wrote {len(env.REGISTRY)} tasks to {args.out}")


def _cmd_collect(args):
    from . import data
    trajs = data.collect(args.task, n_episodes=args.episodes, epsilon=args.epsilon,
                         max_steps=args.max_steps, seed=args.seed)
    data.save_dataset(trajs, args.out)
    lengths = [len(t.actions) for t in trajs]
    print(f"saved {len(trajs)} episodes to {args.out} (steps min/mean/max "
          f"{min(lengths)}/{int(np.mean(lengths))}/{max(lengths)})")


def _cmd_expand(args):
    from . import env, prompts
    text = env.get_task(args.task).description if args.task else args.text
    p = prompts.expand_prompt(text)
    print(p.expanded)


def _cmd_similarity(args):
    from . import env, prompts
    descs = [t.description for t in env.REGISTRY.values()]
    names = list(env.REGISTRY)
    mat = prompts.similarity_matrix([prompts.expand_prompt(d) for d in descs])
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("task," + ",".join(names) + "\n")
        for name, row in zip(names, mat):
            f.write(name + "," + ",".join(f"{v:.6f}" for v in row) + "\n")
    print(f"wrote {mat.shape[0]}x{mat.shape[1]} similarity matrix to {args.out}")


def _load_trajs(root, task_ids=None):
    from . import data
    trajs = data.load_dataset(root, task_ids=task_ids)
    if not trajs:
        raise SystemExit(f"no episodes found under {root}")
    return trajs


def _cmd_train_dvg(args):
    from . import data, pipeline, storage
    split = data.fold_split(args.fold)
    trajs = _load_trajs(args.data, task_ids=set(split.few_shot))
    cfg = pipeline.CrossvalConfig(seed=args.seed, dvg_steps=args.steps)
    model, log = pipeline.train_dvg_for_fold(trajs, cfg)
    storage.save_model(args.out, model, "dvg",
                       {"channels": list(model.channels)},
                       {"seed": args.seed, "config_hash": cfg.hash(), "final_loss": log[-1]})
    print(f"trained {args.steps} steps (loss {log[0]:.3f} -> {log[-1]:.3f}); saved {args.out}")


def _cmd_sample(args):
    from . import data, diffusion, env, prompts, storage
    model, meta = storage.load_model(args.ckpt)
    schedule = diffusion.build_schedule(args.T, args.kind)
    task = env.get_task(args.task)
    os.makedirs(args.out, exist_ok=True)
    text = prompts.embed_prompt(prompts.task_prompt(task))
    for m in range(args.count):
        layout = env.sample_layout(task, args.seed + m)
        poses = prompts.plan_pose(task, layout)
        pv = prompts.render_pose_video(poses)
        rng = np.random.default_rng([args.seed, m])
        video = diffusion.sample_video(model, text[None], pv[None], schedule, rng)[0]
        data.save_frames_bin(os.path.join(args.out, f"{task.task_id}_{m:03d}.bin"), video)
    print(f"sampled {args.count} videos to {args.out}")


def _cmd_train_idm(args):
    from . import data, storage
    from . import inverse_dynamics as idm
    split = data.fold_split(args.fold)
    trajs = _load_trajs(args.data, task_ids=set(split.few_shot))
    cfg = idm.IdmConfig(seed=args.seed, window=args.window)
    model, log = idm.train_idm(idm.pack_video_windows(trajs, window=args.window), cfg)
    storage.save_model(args.out, model, "idm",
                       {"d": model.d, "window": model.window},
                       {"seed": args.seed, "final_loss": log[-1]})
    print(f"trained (loss {log[0]:.3f} -> {log[-1]:.3f}); saved {args.out}")


def _cmd_label(args):
    from . import data, storage
    from . import inverse_dynamics as idm
    model, _ = storage.load_model(args.ckpt)
    video = data.load_frames_bin(args.video)
    actions = idm.label_video(model, video)
    data.save_actions_bin(args.out, actions)
    print(f"labeled {len(actions)} steps -> {args.out}")


def _cmd_idm_study(args):
    from . import inverse_dynamics as idm
    rows = idm.generalization_study(
        [int(v) for v in args.families.split(",")],
        [int(v) for v in args.traj.split(",")],
        seed=args.seed)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("families,traj_per_task,few_shot_acc,zero_shot_acc\n")
        for r in rows:
            f.write(f"{r['families']},{r['traj_per_task']},{r['few_shot_acc']:.4f},{r['zero_shot_acc']:.4f}\n")
    print(f"wrote {len(rows)} cells to {args.out}")


def _cmd_train_policy(args):
    from . import data, policies, storage
    split = data.fold_split(args.fold)
    trajs = _load_trajs(args.data, task_ids=set(split.few_shot))
    eps = policies.episodes_from_trajectories(trajs)
    cfg = policies.BCConfig(steps=args.steps, seed=args.seed)
    model, log = policies.train_policy(args.arch, eps, cfg)
    storage.save_model(args.out, model, args.arch,
                       {"d": cfg.d, "blocks": cfg.blocks} | ({"history": cfg.history} if args.arch == "rt1" else {}),
                       {"seed": args.seed, "final_loss": log[-1]})
    print(f"trained {args.arch} (loss {log[0]:.3f} -> {log[-1]:.3f}); saved {args.out}")


def _cmd_eval(args):
    from . import policies, storage
    model, _ = storage.load_model(args.ckpt)
    rate = policies.rollout_eval(model, args.task, episodes=args.episodes, seed=args.seed)
    print(f"{args.task}: accomplishment rate {rate:.3f} over {args.episodes} episodes")


def _parse_config_file(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _cmd_crossval(args):
    from . import pipeline
    kw = {}
    if args.config:
        raw = _parse_config_file(args.config)
        fields = pipeline.CrossvalConfig.__dataclass_fields__
        for k, v in raw.items():
            if k not in fields:
                raise SystemExit(f"unknown config key: {k}")
            typ = fields[k].type
            if typ == "int":
                kw[k] = int(v)
            elif typ == "float":
                kw[k] = float(v)
            elif typ == "bool":
                kw[k] = v.lower() in ("1", "true", "yes")
            elif typ == "tuple":
                kw[k] = tuple(int(x) if x.isdigit() else x for x in v.split(","))
            else:
                kw[k] = v
    cfg = pipeline.CrossvalConfig(**kw)
    reports, quality = pipeline.run_crossval(cfg, out_dir=args.out)
    print(pipeline.summarize(reports))


def _cmd_report(args):
    from . import pipeline
    with open(os.path.join(args.indir, "report.json"), encoding="utf-8") as f:
        payload = json.load(f)
    if args.format == "csv":
        with open(os.path.join(args.indir, "rates.csv"), encoding="utf-8") as f:
            sys.stdout.write(f.read())
    else:
        lines = ["| fold | arm | arch | few-shot | zero-shot |", "|---|---|---|---|---|"]
        for r in payload["reports"]:
            lines.append(f"| {r['fold']} | {r['arm']} | {r['arch']} | "
                         f"{r['totals']['few_shot']} | {r['totals']['zero_shot']} |")
        print("\n".join(lines))


def main(argv=None):
    ap = argparse.ArgumentParser(prog="minimanip", description="Desk-scale skill learning from generated demonstration videos.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("registry", help="export the task registry file")
    p.add_argument("--out", default="tasks.tsv")
    p.set_defaults(fn=_cmd_registry)

    p = sub.add_parser("collect", help="collect scripted-expert episodes")
    p.add_argument("--task", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_collect)

    p = sub.add_parser("expand", help="expand a task description")
    p.add_argument("--task")
    p.add_argument("--text")
    p.set_defaults(fn=_cmd_expand)

    p = sub.add_parser("similarity", help="write the prompt similarity matrix")
    p.add_argument("--out", default="matrix.csv")
    p.set_defaults(fn=_cmd_similarity)

    p = sub.add_parser("train-dvg", help="train the video generator on a fold")
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=800)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_dvg)

    p = sub.add_parser("sample", help="sample demonstration videos")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=32)
    p.add_argument("--kind", default="cosine")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("train-idm", help="train the action labeler on a fold")
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--window", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_idm)

    p = sub.add_parser("label", help="label a video file with actions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--out", default="actions.bin")
    p.set_defaults(fn=_cmd_label)

    p = sub.add_parser("idm-study", help="labeler generalization study")
    p.add_argument("--families", default="2,8")
    p.add_argument("--traj", default="10,20")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="report.csv")
    p.set_defaults(fn=_cmd_idm_study)

    p = sub.add_parser("train-policy", help="behavior-clone a policy")
    p.add_argument("--arch", choices=("lcbc", "rt1"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fold", type=int, default=1)
    p.add_argument("--steps", type=int, default=2500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_policy)

    p = sub.add_parser("eval", help="closed-loop accomplishment rate")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("crossval", help="run the two-fold experiment")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_crossval)

    p = sub.add_parser("report", help="render a crossval report")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--format", choices=("csv", "md"), default="md")
    p.set_defaults(fn=_cmd_report)

    args = ap.parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
