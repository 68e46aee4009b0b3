"""Record MinAtar reference trajectories for the Rust replay tests.

Usage: python gen_minatar_fixtures.py OUT_DIR [--seeds N] [--steps N]

Needs the reference package: pip install MinAtar==1.0.15
"""
import argparse
import pathlib

import numpy as np
from minatar import Environment

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK = (1 << 64) - 1


def digest(state):
    h = FNV_OFFSET
    for b in np.ascontiguousarray(state.transpose(2, 0, 1)).astype(np.uint8).ravel():
        h = ((h ^ int(b)) * FNV_PRIME) & MASK
    return h


def record(game, seed, steps, sticky=0.1):
    env = Environment(game, sticky_action_prob=sticky)
    env.seed(seed)
    env.reset()
    actions = np.random.RandomState(10000 + seed).randint(6, size=steps)
    lines = [f"game {game}", f"seed {seed}", f"sticky {sticky}", f"reset {digest(env.state()):016x}"]
    for a in actions:
        r, done = env.act(int(a))
        lines.append(f"step {a} {float(r)} {int(done)} {digest(env.state()):016x}")
        if done:
            env.reset()
            lines.append(f"reset {digest(env.state()):016x}")
    return "\n".join(lines) + "\n"


def main():
    p = argparse.ArgumentParser()
    p.add_argument("out", type=pathlib.Path)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--steps", type=int, default=300)
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for game in ("breakout", "space_invaders"):
        for seed in range(args.seeds):
            path = args.out / f"{game}_seed{seed}.txt"
            path.write_text(record(game, seed, args.steps))
            print(path)


if __name__ == "__main__":
    main()
