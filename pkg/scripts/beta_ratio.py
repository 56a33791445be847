"""Random search on the synthetic task; rank correlation of beta/(beta+gamma) with test discrimination."""

import argparse
import time

from censorkit.data import SplitSpec, SynthTabularSpec, split, synth_tabular
from censorkit.search import HyperPrior, beta_ratio_study, run_search, write_scatter_csv
from censorkit.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--experiments", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--adv-lr", type=float, default=3e-3)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--csv", help="write the scatter points here")
    args = ap.parse_args()

    parts = split(synth_tabular(SynthTabularSpec(seed=args.seed)), SplitSpec(seed=args.seed))
    t = time.perf_counter()
    cfg = TrainConfig(batch_size=args.batch, max_steps=args.steps, adversary_learning_rate=args.adv_lr)
    records = run_search(parts, HyperPrior(), args.experiments, cfg, master_seed=args.seed, jobs=args.jobs, t_grid=[0.0])
    study = beta_ratio_study(records)
    for p in sorted(study.points, key=lambda p: p.ratio):
        print(f"ratio {p.ratio:.3f}  beta {p.beta:6.2f}  gamma {p.gamma:5.2f}  test disc {p.test_disc:.3f}")
    rho = "undefined" if study.spearman is None else f"{study.spearman:.3f}"
    print(f"spearman {rho} over {len(study.points)} runs in {time.perf_counter() - t:.0f}s")
    if args.csv:
        write_scatter_csv(study, args.csv)


if __name__ == "__main__":
    main()
