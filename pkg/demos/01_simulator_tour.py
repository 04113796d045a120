"""Tour of the 2D manipulation simulator.

Resets a few task variants, rolls the scripted expert, and saves a contact
sheet of frames so you can see what each family looks like.
"""
import numpy as np

from minimanip import env

SHOW = ["button-press", "reach-wall", "push", "door-close", "drawer-open",
        "faucet-open", "plate-slide", "window-close"]


def rollout(task_id, seed=3):
    state, frame = env.reset(task_id, seed)
    frames = [frame]
    for _ in range(env.MAX_STEPS):
        state, frame, done = env.step(state, env.expert_action(state, task_id))
        frames.append(frame)
        if done:
            break
    return np.stack(frames), done


def main():
    print(f"{len(env.REGISTRY)} task variants across 8 families\n")
    sheets = []
    for tid in SHOW:
        frames, done = rollout(tid)
        t = env.get_task(tid)
        print(f"{tid:20s} fold {t.fold}  expert finished in {len(frames) - 1} steps (success={done})")
        picks = np.linspace(0, len(frames) - 1, 6).astype(int)
        sheets.append(np.concatenate(frames[picks], axis=1))
    sheet = np.concatenate(sheets, axis=0)
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        plt.figure(figsize=(10, 12))
        plt.imshow(sheet)
        plt.axis("off")
        plt.title("scripted experts: 6 snapshots per task")
        plt.tight_layout()
        plt.savefig("simulator_tour.png", dpi=120)
        print("\nwrote simulator_tour.png")
    except ImportError:
        np.save("simulator_tour.npy", sheet)
        print("\nmatplotlib not available; wrote simulator_tour.npy")


if __name__ == "__main__":
    main()
