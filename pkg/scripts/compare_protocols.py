from __future__ import annotations

import argparse
import logging
import os
import pathlib
import statistics
import sys

_ROOT = pathlib.Path(__file__).resolve().parents[1]
_SRC = _ROOT / "src"
sys.path.insert(0, str(_SRC))

from contrastive_embed import (  # noqa: E402
    DirectConfig,
    ProtocolConfig,
    RandomStream,
    SynthConfig,
    embed,
    generate_synthetic,
    knn_accuracy,
    run_direct,
    run_protocol,
)


def main() -> None:
    parser = argparse.ArgumentParser(
        description="Three-stage annealing vs direct 2-D training on the synthetic dataset",
    )
    parser.add_argument(
        "--seeds",
        type=int,
        default=int(os.getenv("COMPARE_SEEDS", "3")),
        help="Number of seeds per arm (env: COMPARE_SEEDS)",
    )
    parser.add_argument(
        "--per-class",
        type=int,
        default=int(os.getenv("COMPARE_PER_CLASS", "1000")),
        help="Synthetic images per class (env: COMPARE_PER_CLASS)",
    )
    parser.add_argument(
        "--workers",
        type=int,
        default=int(os.getenv("CONTRASTIVE_EMBED_WORKERS", "4")),
        help="Augmentation threads (env: CONTRASTIVE_EMBED_WORKERS)",
    )
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    results: dict[str, list[tuple[float, float]]] = {"protocol": [], "direct": []}
    for seed in range(args.seeds):
        dataset = generate_synthetic(SynthConfig(per_class=args.per_class), seed=seed)
        train, test = dataset.train(), dataset.test()
        protocol = ProtocolConfig.desk(seed=seed)
        direct = DirectConfig.build(epochs=protocol.total_epochs, batch_size=128, seed=seed)
        runs = {
            "protocol": run_protocol(train, protocol, RandomStream(seed), workers=args.workers),
            "direct": run_direct(train, direct, RandomStream(seed), workers=args.workers),
        }
        for arm, (params, report) in runs.items():
            _, z_train = embed(params, train.images)
            _, z_test = embed(params, test.images)
            acc = knn_accuracy(z_train, train.fine_labels, z_test, test.fine_labels, k=15)
            loss = float("nan") if report.final_loss is None else report.final_loss
            results[arm].append((loss, acc))
            print(f"seed {seed} {arm:>8}: loss {loss:.4f} kNN {acc:.4f}")

    for arm, rows in results.items():
        loss = statistics.median(r[0] for r in rows)
        acc = statistics.median(r[1] for r in rows)
        print(f"median {arm:>8}: loss {loss:.4f} kNN {acc:.4f}")


if __name__ == "__main__":
    main()
