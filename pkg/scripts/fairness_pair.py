"""Train a beta=0 and a beta>0 censor model per seed on the synthetic task and compare.

Prints one row per seed: test accuracy and discrimination of both runs and
whether the pair meets the thresholds given on the command line.
"""

import argparse
import time

import numpy as np

from censorkit.data import SplitSpec, SynthTabularSpec, split, synth_tabular
from censorkit.metrics import Predictions, accuracy, discrimination
from censorkit.model import ModelSpec, build_censor_model
from censorkit.trainer import TrainConfig, train


def run(args, seed, beta):
    spec = SynthTabularSpec(n=args.n, d=args.d, sensitive_effect=args.effect, label_noise=args.noise,
                            affected_fraction=args.affected, seed=seed)
    tr, _, te = split(synth_tabular(spec), SplitSpec(seed=seed))
    model = build_censor_model(args.d, ModelSpec(hidden_units=args.units, alpha=args.alpha, beta=beta, gamma=1.0),
                               np.random.default_rng(seed))
    train(model, tr, TrainConfig(batch_size=args.batch, max_steps=args.steps, seed=seed,
                                 learning_rate=args.lr, adversary_learning_rate=args.adv_lr, schedule=args.schedule))
    p = Predictions(model.predict(te.x), te.s, te.y)
    return accuracy(p), discrimination(p)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--beta", type=float, default=2.0)
    ap.add_argument("--n", type=int, default=4000)
    ap.add_argument("--d", type=int, default=10)
    ap.add_argument("--effect", type=float, default=2.0)
    ap.add_argument("--noise", type=float, default=0.35)
    ap.add_argument("--affected", type=float, default=0.1)
    ap.add_argument("--units", type=int, default=16)
    ap.add_argument("--alpha", type=float, default=0.01)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--steps", type=int, default=9000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--adv-lr", type=float, default=3e-3)
    ap.add_argument("--schedule", choices=["strict", "gated"], default="strict")
    ap.add_argument("--min-disc", type=float, default=0.25, help="required beta=0 discrimination")
    ap.add_argument("--max-disc", type=float, default=0.08, help="allowed censored discrimination")
    ap.add_argument("--max-drop", type=float, default=0.05, help="allowed accuracy change")
    args = ap.parse_args()

    ok = 0
    print("seed  acc0   disc0  acc1   disc1  pass  secs")
    for seed in args.seeds:
        t = time.perf_counter()
        a0, d0 = run(args, seed, 0.0)
        a1, d1 = run(args, seed, args.beta)
        good = d0 >= args.min_disc and d1 <= args.max_disc and abs(a1 - a0) <= args.max_drop
        ok += good
        print(f"{seed:4d}  {a0:.3f}  {d0:.3f}  {a1:.3f}  {d1:.3f}  {'yes' if good else 'no':4s}  {time.perf_counter() - t:.0f}")
    print(f"{ok}/{len(args.seeds)} seeds pass")


if __name__ == "__main__":
    main()
