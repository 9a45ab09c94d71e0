"""Build a small self-contained demo kit: bundle, clusters, infra, session.

The frontend integration test and the manual demo both consume the output:
    python3 scripts/make_demo_assets.py --out frontend/demo-assets
Produces bundle.ftb, clusters.bin, infra.jsonl, session.json (a mix of labels
the model keeps and labels it flags, verdicts stripped).
"""

import argparse
import json
from pathlib import Path

import numpy as np

from labelqc.data import emit
from labelqc.pipeline import (
    PipelineConfig,
    featurize_against_index,
    finetune_run,
    predict_bundle,
    pretrain_run,
)
from labelqc.synth import SynthConfig, generate, make_expert_set
from labelqc.training import TrainConfig


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=5)
    parser.add_argument("--n", type=int, default=3000)
    parser.add_argument("--epochs", type=int, default=40)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cfg = SynthConfig(n_labels=args.n, seed=args.seed)
    labels, infra, truth = generate(cfg)
    pcfg = PipelineConfig(
        seed=args.seed,
        pretrain=TrainConfig.pretrain(epochs=args.epochs),
        finetune=TrainConfig.finetune(epochs=args.epochs),
    )
    pre = pretrain_run(labels, infra, pcfg)
    expert = make_expert_set(labels, truth, 0.5, args.seed)
    ft = finetune_run(pre.bundle, expert, infra, pre.index, 10, pcfg)

    ft.bundle.save(out / "bundle.ftb")
    pre.index.save(out / "clusters.bin")
    infra.to_jsonl(out / "infra.jsonl")

    # Session items: roughly half kept, half flagged, stable for this bundle.
    pool = [lb for lb in labels if lb.id not in set(ft.sample_ids)]
    feats = featurize_against_index(pool, infra, pre.index)
    p = predict_bundle(ft.bundle, feats)
    kept_idx = [i for i in np.argsort(-p)[:6]]
    flagged_idx = [i for i in np.argsort(p)[:6]]
    items = []
    for i in sorted(kept_idx + flagged_idx, key=int):
        lb = pool[int(i)]
        items.append(
            {
                "label": {
                    "id": lb.id,
                    "label_type": lb.label_type.name,
                    "lat": lb.position.lat,
                    "lon": lb.position.lon,
                    "severity": lb.severity,
                    "tags": list(lb.tags),
                    "description": lb.description,
                    "zoom": lb.zoom,
                    "heading": lb.heading,
                    "pitch": lb.pitch,
                    "way_type": lb.way_type,
                    "user_id": lb.user_id,
                    "city_id": lb.city_id,
                }
            }
        )
    (out / "session.json").write_text(
        json.dumps({"city_id": cfg.city_id, "items": items}, indent=2), encoding="utf-8"
    )
    emit(pool[:50], out / "sample_labels.csv", "csv")
    print(f"demo assets written to {out}")


if __name__ == "__main__":
    main()
