"""Command-line surface: training, evaluation, conversion, ablation, benches.

Every command prints machine-parseable output: one JSON record per line,
each carrying the configuration that produced it.  Timing values are the
only non-deterministic fields for a fixed (inputs, seed, thread count).

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical error.

numpy is imported only after ``--threads`` has pinned the BLAS thread-count
environment variables, which is why all engine imports live inside the
command handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_TRAIN_MODES = {"both": "train_both", "mu": "train_mu_only", "sigma": "train_sigma_only", "frozen": "frozen"}


def _emit(record: dict) -> None:
    print(json.dumps(record), flush=True)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pin_threads(threads: int) -> None:
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ[var] = str(threads)


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    from .io import CovarianceShape, SyntheticSpec, generate_synthetic, write_synthetic_files

    spec = SyntheticSpec(
        num_classes=args.classes,
        dim=args.dim,
        samples_per_class=args.per_class,
        mean_scale=args.mean_scale,
        covariance=CovarianceShape(args.cov_shape),
        seed=args.seed,
        val_samples_per_class=args.val_per_class,
    )
    dataset = generate_synthetic(spec, compute_bayes=not args.no_bayes)
    manifest = write_synthetic_files(dataset, args.out)
    _emit({"cmd": "gen-synthetic", "out": str(args.out), **manifest})
    return EXIT_OK


def cmd_train(args) -> int:
    from .batch import UpdateSemantics, ingest_stream
    from .core import CovarianceMode, TrainMode
    from .io import read_embedding_header, save_checkpoint, stream_embedding_batches
    from .slda import init_empty

    header = read_embedding_header(args.embeddings)
    model = init_empty(
        header.dim,
        header.num_classes,
        CovarianceMode(args.cov),
        TrainMode(_TRAIN_MODES[args.train_mode]),
    )
    batches = stream_embedding_batches(args.embeddings, args.batch_size)
    model, report = ingest_stream(model, batches, UpdateSemantics(args.semantics))
    save_checkpoint(args.out, model, args.beta)
    _emit(
        {
            "cmd": "train",
            "embeddings": str(args.embeddings),
            "out": str(args.out),
            "batch_size": args.batch_size,
            "cov": args.cov,
            "train_mode": args.train_mode,
            "semantics": args.semantics,
            "beta": args.beta,
            "samples": report.num_samples,
            "batches": report.num_batches,
            "total_seconds": report.total_seconds,
            "mean_batch_seconds": report.mean_batch_seconds,
        }
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    from .ann import AnnConfig, build_index, query_active
    from .baseline import head_accuracy
    from .io import load_checkpoint, read_embedding_file
    from .slda import translate

    model, checkpoint_beta = load_checkpoint(args.model)
    beta = args.beta if args.beta is not None else checkpoint_beta
    header, data = read_embedding_file(args.embeddings)
    head = translate(model, beta)
    record = {
        "cmd": "eval",
        "embeddings": str(args.embeddings),
        "model": str(args.model),
        "beta": beta,
        "samples": len(data),
        "accuracy": head_accuracy(head.head, data),
    }
    if args.ann:
        from .ann import default_active_count

        config = AnnConfig(k=args.k, tables=args.tables, bits=args.bits, probes=args.probes)
        index = build_index(model, config, args.seed)
        hits = 0
        for x, y in zip(data.embeddings, data.labels):
            _, label = query_active(index, head, x, args.k)
            hits += label == y
        record["ann_accuracy"] = hits / len(data) if len(data) else 0.0
        record["k"] = args.k if args.k is not None else default_active_count(model.num_classes)
    _emit(record)
    return EXIT_OK


def _load_head(path):
    import numpy as np

    from .core import LinearHead

    with np.load(path) as archive:
        return LinearHead(weights=archive["weights"], bias=archive["bias"])


def _save_head(path, head) -> None:
    import numpy as np

    with open(path, "wb") as f:
        np.savez(f, weights=head.weights, bias=head.bias)


def cmd_convert(args) -> int:
    from .convert import SigmaInit, fc_to_lda
    from .core import CovarianceMode, TrainMode
    from .io import save_checkpoint

    head = _load_head(args.head)
    model = fc_to_lda(
        head,
        SigmaInit(args.sigma_mode),
        CovarianceMode(args.cov),
        TrainMode(_TRAIN_MODES[args.train_mode]),
    )
    save_checkpoint(args.out, model, args.beta)
    _emit(
        {
            "cmd": "convert",
            "head": str(args.head),
            "out": str(args.out),
            "sigma_mode": args.sigma_mode,
            "cov": args.cov,
            "num_classes": model.num_classes,
            "dim": model.dim,
        }
    )
    return EXIT_OK


def cmd_fc_baseline(args) -> int:
    from .baseline import FcTrainConfig, head_accuracy, train_fc_head, train_until_converged
    from .io import read_embedding_file

    header, train = read_embedding_file(args.embeddings)
    val = None
    if args.val_embeddings:
        val = read_embedding_file(args.val_embeddings)[1]
    config = FcTrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed
    )
    base = {
        "cmd": "fc-baseline",
        "embeddings": str(args.embeddings),
        "batch_size": args.batch_size,
        "lr": args.lr,
        "seed": args.seed,
    }
    if args.to_convergence:
        if val is None:
            raise SystemExit("--to-convergence requires --val-embeddings")
        converged = train_until_converged(train, header.num_classes, val, config)
        result = converged.result
    else:
        result = train_fc_head(train, header.num_classes, config, val)
    for stats in result.epochs:
        _emit(
            {
                **base,
                "epoch": stats.epoch,
                "loss": stats.loss,
                "seconds": stats.seconds,
                "val_accuracy": stats.val_accuracy,
            }
        )
    summary = {**base, "epochs": len(result.epochs), "total_seconds": result.total_seconds}
    if args.to_convergence:
        summary["epochs_to_converge"] = converged.epochs_to_converge
        summary["seconds_to_converge"] = converged.seconds_to_converge
        summary["plateau_accuracy"] = converged.plateau_accuracy
    elif val is not None:
        summary["val_accuracy"] = head_accuracy(result.head, val)
    _emit(summary)
    if args.out:
        _save_head(args.out, result.head)
    return EXIT_OK


_ABLATE_SCHEDULES = ("init_only", "train_mu", "train_sigma", "train_both")


def run_ablation(
    head,
    train_path,
    val,
    sigma_mode,
    beta: float,
    batch_size: int,
    semantics,
    passes: int = 1,
    freeze_sigma_after_first: bool = False,
) -> list[dict]:
    """Run the four conversion-training schedules and score each on ``val``."""
    from .baseline import head_accuracy
    from .batch import ingest_stream
    from .convert import fc_to_lda
    from .core import CovarianceMode, TrainMode
    from .io import stream_embedding_batches
    from .slda import translate

    train_modes = {
        "init_only": TrainMode.FROZEN,
        "train_mu": TrainMode.TRAIN_MU_ONLY,
        "train_sigma": TrainMode.TRAIN_SIGMA_ONLY,
        "train_both": TrainMode.TRAIN_BOTH,
    }
    rows = []
    for schedule in _ABLATE_SCHEDULES:
        model = fc_to_lda(head, sigma_mode, CovarianceMode.PLASTIC, train_modes[schedule])
        if schedule != "init_only":
            for pass_index in range(passes):
                if pass_index == 1 and freeze_sigma_after_first:
                    model.covariance.mode = CovarianceMode.FIXED
                ingest_stream(model, stream_embedding_batches(train_path, batch_size), semantics)
        accuracy = head_accuracy(translate(model, beta).head, val)
        rows.append({"schedule": schedule, "accuracy": accuracy})
    init_accuracy = rows[0]["accuracy"]
    for row in rows:
        row["delta_vs_init"] = row["accuracy"] - init_accuracy
    return rows


def cmd_ablate(args) -> int:
    from .batch import UpdateSemantics
    from .convert import SigmaInit
    from .io import read_embedding_file

    head = _load_head(args.head)
    val = read_embedding_file(args.val_embeddings)[1]
    rows = run_ablation(
        head,
        args.embeddings,
        val,
        SigmaInit(args.sigma_mode),
        args.beta,
        args.batch_size,
        UpdateSemantics(args.semantics),
        passes=args.passes,
        freeze_sigma_after_first=args.sigma_schedule == "freeze-after-first",
    )
    base = {
        "cmd": "ablate",
        "sigma_mode": args.sigma_mode,
        "passes": args.passes,
        "sigma_schedule": args.sigma_schedule,
        "beta": args.beta,
    }
    for row in rows:
        _emit({**base, **row})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Bench harness.  These helpers are also driven directly by the acceptance
# suite, so they keep pure-Python signatures and return plain dicts.
# ---------------------------------------------------------------------------


def measure_mean_update_seconds(
    num_classes: int,
    dim: int,
    batch_size: int,
    num_batches: int,
    seed: int = 0,
    warmup: int = 2,
) -> float:
    """Median per-batch wall time of the batched mean update path.

    Uses a fixed covariance so ingestion exercises only the mean update.
    """
    import numpy as np

    from .batch import ingest_stream
    from .core import CovarianceMode, LabeledBatch
    from .slda import init_empty

    rng = np.random.default_rng(seed)
    batches = [
        LabeledBatch(
            embeddings=rng.standard_normal((batch_size, dim)),
            labels=rng.integers(0, num_classes, batch_size),
        )
        for _ in range(num_batches + warmup)
    ]
    model = init_empty(dim, num_classes, CovarianceMode.FIXED)
    _, report = ingest_stream(model, batches)
    return statistics.median(report.batch_seconds[warmup:])


def run_training_bench(
    num_classes: int,
    dim: int,
    total_samples: int,
    batch_size: int = 512,
    learning_rate: float = 0.5,
    seed: int = 0,
    mean_scale: float = 1.0,
    measure_convergence: bool = False,
    accuracy_rows: int = 5000,
    fc_epochs: int = 1,
) -> dict:
    """Time one synthetic training run per method; returns a summary dict.

    Methods: FC head for ``fc_epochs`` epochs, per-sample streaming updates
    (batch size 1), and batched streaming updates, the latter two with both
    plastic and fixed covariance.  Accuracies are measured on a capped slice
    of the held-out split so extreme class counts stay affordable.
    """
    import numpy as np

    from .baseline import FcTrainConfig, head_accuracy, train_fc_head, train_until_converged
    from .batch import UpdateSemantics, ingest_stream
    from .core import CovarianceMode, LabeledBatch, TrainMode
    from .io import CovarianceShape, SyntheticSpec, generate_synthetic
    from .slda import init_empty, translate, update_sample

    per_class = max(1, total_samples // num_classes)
    spec = SyntheticSpec(
        num_classes=num_classes,
        dim=dim,
        samples_per_class=per_class,
        mean_scale=mean_scale,
        covariance=CovarianceShape.IDENTITY,
        seed=seed,
        val_samples_per_class=1,
    )
    dataset = generate_synthetic(spec, compute_bayes=False)
    train = dataset.train
    val = LabeledBatch(
        embeddings=dataset.val.embeddings[:accuracy_rows],
        labels=dataset.val.labels[:accuracy_rows],
    )

    def chunked(batch: LabeledBatch):
        for start in range(0, len(batch), batch_size):
            yield LabeledBatch(
                embeddings=batch.embeddings[start : start + batch_size],
                labels=batch.labels[start : start + batch_size],
            )

    summary: dict = {
        "num_classes": num_classes,
        "dim": dim,
        "samples": len(train),
        "batch_size": batch_size,
        "seed": seed,
    }

    fc = train_fc_head(train, num_classes, FcTrainConfig(fc_epochs, batch_size, learning_rate, seed))
    summary["fc_epoch_seconds"] = fc.total_seconds / max(1, fc_epochs)
    summary["fc_seconds"] = fc.total_seconds
    summary["fc_accuracy"] = head_accuracy(fc.head, val)

    if measure_convergence:
        converged = train_until_converged(
            train, num_classes, val, FcTrainConfig(1, batch_size, learning_rate, seed)
        )
        summary["fc_epochs_to_converge"] = converged.epochs_to_converge
        summary["fc_seconds_to_converge"] = converged.seconds_to_converge
        summary["fc_converged_accuracy"] = converged.plateau_accuracy

    for label, mode in (("plastic", CovarianceMode.PLASTIC), ("fixed", CovarianceMode.FIXED)):
        model = init_empty(dim, num_classes, mode, TrainMode.TRAIN_BOTH)
        x64 = np.asarray(train.embeddings, dtype=np.float64)
        start = time.perf_counter()
        for i in range(len(train)):
            update_sample(model, x64[i], int(train.labels[i]))
        summary[f"slda_bs1_{label}_seconds"] = time.perf_counter() - start

        model = init_empty(dim, num_classes, mode, TrainMode.TRAIN_BOTH)
        start = time.perf_counter()
        model, _ = ingest_stream(model, chunked(train), UpdateSemantics.CHUNK)
        summary[f"batched_{label}_seconds"] = time.perf_counter() - start
        summary[f"batched_{label}_accuracy"] = head_accuracy(translate(model).head, val)

    summary["speedup_fc_vs_batched"] = summary["fc_epoch_seconds"] / summary["batched_plastic_seconds"]
    summary["speedup_bs1_vs_batched"] = (
        summary["slda_bs1_plastic_seconds"] / summary["batched_plastic_seconds"]
    )
    return summary


def cmd_bench_train(args) -> int:
    sizes = [int(s) for s in args.classes.split(",")]
    for num_classes in sizes:
        summary = run_training_bench(
            num_classes,
            args.dim,
            args.samples,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            seed=args.seed,
            measure_convergence=args.converge,
        )
        _emit({"cmd": "bench-train", **summary})
    return EXIT_OK


def make_separated_model(num_classes: int, dim: int, seed: int = 0, mean_scale: float = 4.0):
    """A live model over well-separated random class means (for benches)."""
    import numpy as np

    from .core import ClassStats, CovarianceMode, LdaModel, SharedCovariance, TrainMode

    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, dim)) * mean_scale
    return LdaModel(
        stats=ClassStats(means=means, counts=np.ones(num_classes, dtype=np.int64)),
        covariance=SharedCovariance(sigma=np.eye(dim), step=num_classes, mode=CovarianceMode.FIXED),
        dim=dim,
        num_classes=num_classes,
        train_mode=TrainMode.FROZEN,
    )


def auto_signature_bits(num_classes: int, k: int, tables: int = 16, probes: int = 2) -> int:
    """Deepest signature that still feeds the re-ranker ~1.7k raw candidates.

    Expected raw matches are tables * probed_buckets(bits) * n / 2^bits;
    deeper codes shrink the candidate pool (faster re-rank) until the
    shortfall fallback would start kicking in.
    """
    import math as _math

    best = 8
    for bits in range(8, 19):
        probed = sum(_math.comb(bits, r) for r in range(probes + 1))
        expected = tables * probed * num_classes / 2.0**bits
        if expected >= 1.7 * k:
            best = bits
    return best


def run_inference_bench(
    num_classes: int,
    dim: int,
    num_queries: int,
    k: int | None = None,
    tables: int = 16,
    bits: int | None = None,
    probes: int = 2,
    seed: int = 0,
    mean_scale: float = 4.0,
):
    """Build a separated synthetic model plus index and time both paths."""
    import numpy as np

    from .ann import AnnConfig, bench_inference, build_index, default_active_count

    if bits is None:
        resolved_k = k if k is not None else default_active_count(num_classes)
        bits = auto_signature_bits(num_classes, resolved_k, tables, probes)
    model = make_separated_model(num_classes, dim, seed, mean_scale)
    config = AnnConfig(k=k, tables=tables, bits=bits, probes=probes)
    index = build_index(model, config, seed)

    rng = np.random.default_rng(seed + 1)
    owners = rng.integers(0, num_classes, num_queries)
    queries = model.stats.means[owners] + rng.standard_normal((num_queries, dim))
    report = bench_inference(model, index, queries, k)
    return report, {"tables": tables, "bits": bits, "probes": probes, "owners": owners}


def cmd_bench_infer(args) -> int:
    sizes = [int(s) for s in args.classes.split(",")]
    for num_classes in sizes:
        report, config = run_inference_bench(
            num_classes,
            args.dim,
            args.queries,
            k=args.k,
            tables=args.tables,
            bits=args.bits,
            probes=args.probes,
            seed=args.seed,
        )
        if not args.summary_only:
            for line in report.to_lines():
                print(line)
        _emit(
            {
                "cmd": "bench-infer",
                "dim": args.dim,
                "queries": args.queries,
                "tables": config["tables"],
                "bits": config["bits"],
                "probes": config["probes"],
                "seed": args.seed,
                **report.summary(),
            }
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="streamlda", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="pin BLAS/OpenMP thread count")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, helptext):
        p = sub.add_parser(name, help=helptext)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("gen-synthetic", cmd_gen_synthetic, "write a synthetic Gaussian embedding dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--val-per-class", type=int, default=5)
    p.add_argument("--mean-scale", type=float, default=1.0)
    p.add_argument("--cov-shape", choices=["identity", "spd"], default="identity")
    p.add_argument("--no-bayes", action="store_true", help="skip the Bayes accuracy estimate")

    p = add("train", cmd_train, "stream an embedding file into a new model")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--cov", choices=["plastic", "fixed"], default="plastic")
    p.add_argument("--semantics", choices=["exact", "chunk"], default="chunk")
    p.add_argument("--train-mode", choices=sorted(_TRAIN_MODES), default="both")
    p.add_argument("--beta", type=float, default=1e-4)

    p = add("eval", cmd_eval, "accuracy of a checkpoint on an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--beta", type=float, default=None, help="override the checkpoint beta")
    p.add_argument("--ann", action="store_true", help="also score through the ANN path")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--tables", type=int, default=16)
    p.add_argument("--bits", type=int, default=12)
    p.add_argument("--probes", type=int, default=2)

    p = add("convert", cmd_convert, "seed a model checkpoint from a saved FC head")
    p.add_argument("--head", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma-mode", choices=["identity", "cov"], default="identity")
    p.add_argument("--cov", choices=["plastic", "fixed"], default="plastic")
    p.add_argument("--train-mode", choices=sorted(_TRAIN_MODES), default="both")
    p.add_argument("--beta", type=float, default=1e-4)

    p = add("fc-baseline", cmd_fc_baseline, "train the softmax-regression reference head")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--val-embeddings", default=None)
    p.add_argument("--out", default=None, help="save the trained head (npz)")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--to-convergence", action="store_true")

    p = add("ablate", cmd_ablate, "compare the four conversion-training schedules")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--val-embeddings", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--sigma-mode", choices=["identity", "cov"], default="identity")
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--semantics", choices=["exact", "chunk"], default="chunk")
    p.add_argument("--beta", type=float, default=1e-4)
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--sigma-schedule", choices=["plastic", "freeze-after-first"], default="plastic")

    p = add("bench-train", cmd_bench_train, "training-time comparison across class counts")
    p.add_argument("--classes", default="1000,10000", help="comma-separated class counts")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--samples", type=int, default=32768)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--converge", action="store_true", help="also measure FC epochs-to-converge")

    p = add("bench-infer", cmd_bench_infer, "per-sample inference latency, exact vs shortlisted")
    p.add_argument("--classes", default="10000", help="comma-separated class counts")
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--tables", type=int, default=16)
    p.add_argument("--bits", type=int, default=None, help="default scales with the class count")
    p.add_argument("--probes", type=int, default=2)
    p.add_argument("--summary-only", action="store_true")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        _pin_threads(args.threads)

    from .core import DataError, NumericalError

    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"streamlda: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"streamlda: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
