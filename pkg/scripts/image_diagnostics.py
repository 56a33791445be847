"""Train the image censor with the default image config and probe what its adversary sees.

Beyond the headline numbers this reports:
  * a fresh adversary fit on raw training images (is the text detectable at all?)
  * a fresh adversary fit on censored training images (what a post-hoc auditor gets)
  * the co-trained adversary on an ablation where every gated patch is replaced by
    the ground-truth clean patch, i.e. a perfect inpainter behind the same gates
  * the residual left on stroke pixels relative to the raw stroke contrast
"""

import argparse
import dataclasses
import json
import time

import numpy as np

from censorkit.anon import (
    adversary_accuracy, build_expert_model, evaluate, expert_reconstruct, image_adversary, paired_images,
    pretrain_patch_classifier, train_anonymizer, train_image_adversary,
)
from censorkit.config import ImageSection
from censorkit.images import synth_images
from censorkit.trainer import TrainConfig


def fit_adversary(shape, images, s, seed, steps):
    adv = image_adversary(shape, np.random.default_rng(seed))
    train_image_adversary(adv, images, s, TrainConfig(batch_size=32, max_steps=steps, learning_rate=1e-3, seed=seed))
    return adv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, help="override the anonymizer training steps")
    ap.add_argument("--adv-lr", type=float, help="override the adversary learning rate")
    ap.add_argument("--schedule", choices=["strict", "gated"])
    ap.add_argument("--audit-steps", type=int, default=600)
    args = ap.parse_args()

    ic = ImageSection()
    over = {k: v for k, v in (("max_steps", args.steps), ("adversary_learning_rate", args.adv_lr),
                              ("schedule", args.schedule)) if v is not None}
    train_cfg = dataclasses.replace(ic.train, seed=args.seed, **over)
    t0 = time.perf_counter()
    corpus = synth_images(dataclasses.replace(ic.corpus, seed=args.seed))
    model = build_expert_model(corpus.shape, ic.expert, np.random.default_rng(args.seed))
    pretrain_patch_classifier(model, corpus, dataclasses.replace(ic.pretrain, seed=args.seed))
    gates = model.gates(corpus.train)
    print(f"gates open: text images {gates[corpus.train_s == 1].mean():.4f}, clean {gates[corpus.train_s == 0].mean():.4f}")
    train_anonymizer(model, corpus, ic.alpha, ic.beta, train_cfg)
    ev = evaluate(model, corpus.test)
    print("headline", json.dumps(ev.to_dict()))

    te = corpus.test
    x, s = paired_images(te)
    raw_ref = fit_adversary(corpus.shape, corpus.train, corpus.train_s, 101, args.audit_steps)
    print(f"fresh adversary on raw test: {adversary_accuracy(raw_ref.forward(x[:, None])[:, 0], s):.3f}")
    audit = fit_adversary(corpus.shape, expert_reconstruct(model, corpus.train), corpus.train_s, 102, args.audit_steps)
    cens = expert_reconstruct(model, x)
    print(f"fresh adversary on censored test: {adversary_accuracy(audit.forward(cens[:, None])[:, 0], s):.3f}")

    pt, pc = model.patches(te.with_text), model.patches(te.without_text)
    g = model.gates(te.with_text)
    ideal = pt.copy()
    ideal[g] = pc[g]
    ideal = model.assemble(ideal)
    acc = adversary_accuracy(np.concatenate([model.adversary_proba(ideal), model.adversary_proba(te.without_text)]), s)
    print(f"co-trained adversary with gated patches replaced by ground truth: {acc:.3f}")

    stroke = te.with_text != te.without_text
    out = expert_reconstruct(model, te.with_text)
    ratio = np.abs(out - te.without_text)[stroke].mean() / np.abs(te.with_text - te.without_text)[stroke].mean()
    print(f"residual on stroke pixels: {ratio:.3f} of raw contrast")
    print(f"total {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
