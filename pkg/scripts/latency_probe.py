"""Measure service-side preparation and inference latency percentiles.

Point it at a running service and a label file:
    python3 scripts/latency_probe.py --url http://127.0.0.1:8080 \
        --labels runs/demo/city/labels.csv --n 1000
"""

import argparse
import json

import numpy as np
import requests

from labelqc.data import ingest


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--url", default="http://127.0.0.1:8080")
    parser.add_argument("--labels", required=True)
    parser.add_argument("--n", type=int, default=1000)
    args = parser.parse_args()

    labels = ingest(args.labels)
    prep, infer = [], []
    session = requests.Session()
    for i in range(args.n):
        lb = labels[i % len(labels)]
        body = {
            "id": lb.id, "label_type": lb.label_type.name,
            "lat": lb.position.lat, "lon": lb.position.lon,
            "severity": lb.severity, "tags": list(lb.tags),
            "description": lb.description, "zoom": lb.zoom,
            "heading": lb.heading, "pitch": lb.pitch,
            "way_type": lb.way_type, "user_id": lb.user_id, "city_id": lb.city_id,
        }
        response = session.post(f"{args.url}/v1/infer", json=body, timeout=5)
        response.raise_for_status()
        timing = response.json()["timing"]
        prep.append(timing["prep_ms"])
        infer.append(timing["infer_ms"])

    for name, xs in (("prep", prep), ("infer", infer), ("total", np.add(prep, infer))):
        xs = np.asarray(xs)
        print(
            f"{name:>6}: mean {xs.mean():.2f} ms  p50 {np.percentile(xs, 50):.2f}  "
            f"p95 {np.percentile(xs, 95):.2f}  p99 {np.percentile(xs, 99):.2f}"
        )


if __name__ == "__main__":
    main()
