"""Command-line pipeline driver.

Subcommands cover the full batch workflow: generate synthetic families,
quantize datasets, embed them, assemble Gram matrices, run PCA, train and
score an LDA classifier, report dispersion statistics and quantization
guarantees, and sweep a K-grid benchmark. Every command writes its resolved
configuration to run.json inside the output directory, prints a one-line
JSON summary to stdout, and reports contract violations as JSON on stderr
with a nonzero exit status.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .core import Dataset, RngStream, ValidationError, load_dataset, \
    load_matrix, save_matrix
from .quantize import load_quantized, quantize_each, quantize_mean, \
    random_subset_quantize, save_quantized
from .embed_lot import embed_family, load_lot_embeddings, lot_gram, \
    make_reference, save_lot_embeddings
from .embed_kme import Kernel, kme_gram, median_heuristic, nystrom_fit, \
    nystrom_gram, rff_embed, rff_map, save_rff
from .stats import dispersion, dispersion_bound_check, gram_pca, lda_fit, \
    lda_predict, train_test_split, wcss, bcss
from .synth import default_params, gen_dataset, save_synth, true_kme_gram, \
    true_lot_gram
from ._parallel import resolve_threads

K_GRID_DEFAULT = (4, 8, 16, 32, 64, 128)


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_run(out_dir, args, resolved=None) -> None:
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    payload["version"] = __version__
    if resolved:
        payload["resolved"] = resolved
    _write_json(os.path.join(out_dir, "run.json"), payload)


def _emit(payload) -> None:
    print(json.dumps(payload, sort_keys=True))


def _parse_int_list(text: str, what: str):
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValidationError("%s must be a comma-separated integer list" % what)
    if not values:
        raise ValidationError("%s is empty" % what)
    return values


def _parse_float_list(text: str, what: str):
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValidationError("%s must be a comma-separated number list" % what)
    if not values:
        raise ValidationError("%s is empty" % what)
    return values


def _parse_subsample(text: str):
    if text == "auto":
        return "auto"
    if text == "full":
        return None
    try:
        value = int(text)
    except ValueError:
        raise ValidationError("--subsample takes 'auto', 'full', or an integer")
    if value < 1:
        raise ValidationError("--subsample size must be positive")
    return value


def _load_measures(args):
    """Measures plus labels from --data or --quantized, whichever is set."""
    data = getattr(args, "data", None)
    quantized = getattr(args, "quantized", None)
    if (data is None) == (quantized is None):
        raise ValidationError("give exactly one of --data or --quantized")
    if data is not None:
        ds = load_dataset(data)
        return ds.measures, ds.labels, ds.ids
    qf = load_quantized(quantized)
    measures = qf.measures()
    return measures, None, ["q%04d" % i for i in range(len(measures))]


def _resolve_kernel(args, measures, seed_tag: int):
    kind = args.kernel
    if kind != "rbf":
        return Kernel(kind), None
    if args.sigma == "auto":
        sigma = median_heuristic(Dataset(measures),
                                 rng=RngStream(args.seed, 977 + seed_tag))
    else:
        try:
            sigma = float(args.sigma)
        except ValueError:
            raise ValidationError("--sigma takes 'auto' or a number")
    return Kernel("rbf", sigma), sigma


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    threads = resolve_threads(args.threads)
    os.makedirs(args.out, exist_ok=True)
    params = default_params(args.n, args.d, args.m, classes=args.classes,
                            seed=args.seed)
    manifest = save_synth(params, args.out, threads=threads)
    _write_run(args.out, args, {"threads": threads, "manifest": manifest})
    _emit({"manifest": manifest, "n": params.n, "d": params.d})
    return 0


def _run_quantize(ds, args, threads, extra=None):
    rng = RngStream(args.seed)
    if args.scheme == "per-measure":
        return quantize_each(ds, args.k, rng, max_iter=args.max_iter,
                             restarts=args.restarts, threads=threads,
                             extra_inits=extra)
    if args.scheme == "mean-measure":
        return quantize_mean(ds, args.k, rng, max_iter=args.max_iter,
                             restarts=args.restarts,
                             subsample=_parse_subsample(args.subsample),
                             threads=threads, extra_init=extra)
    return random_subset_quantize(ds, args.k, rng, threads=threads)


def cmd_quantize(args) -> int:
    threads = resolve_threads(args.threads)
    ds = load_dataset(args.data)
    qf = _run_quantize(ds, args, threads)
    os.makedirs(args.out, exist_ok=True)
    save_quantized(qf, args.out)
    _write_run(args.out, args, {"threads": threads, "eps_k": qf.eps_k})
    _emit({"eps_k": qf.eps_k, "scheme": qf.scheme, "k": args.k})
    return 0


def cmd_embed(args) -> int:
    threads = resolve_threads(args.threads)
    measures, _, _ = _load_measures(args)
    dim = measures[0].dim
    os.makedirs(args.out, exist_ok=True)
    if args.kind == "lot":
        ref = make_reference(args.ref_kind, d=dim, m0=args.m0,
                             rng=RngStream(args.seed, 7),
                             path=args.ref_file)
        embs = embed_family(measures, ref, threads=threads)
        save_lot_embeddings(embs, ref, args.out)
        _write_run(args.out, args,
                   {"threads": threads, "reference_id": ref.reference_id})
        _emit({"kind": "lot", "m0": ref.m0, "measures": len(embs)})
        return 0
    kernel, sigma = _resolve_kernel(args, measures, seed_tag=1)
    fmap = rff_map(kernel, d=dim, s=args.features, rng=RngStream(args.seed, 8),
                   raw=args.rff_raw)
    rows = np.vstack([rff_embed(m, fmap) for m in measures])
    save_rff(fmap, args.out)
    save_matrix(rows, os.path.join(args.out, "embeddings.csv"))
    _write_run(args.out, args, {"threads": threads, "sigma": sigma})
    _emit({"kind": "rff", "s": fmap.s, "measures": rows.shape[0]})
    return 0


def cmd_gram(args) -> int:
    threads = resolve_threads(args.threads)
    os.makedirs(args.out, exist_ok=True)
    resolved = {"threads": threads}
    if args.embedding == "lot":
        if args.embedded is None:
            raise ValidationError("--embedding lot needs --embedded")
        embs, ref = load_lot_embeddings(args.embedded)
        if not embs:
            raise ValidationError("no embeddings found in --embedded directory")
        gram = lot_gram(embs, threads=threads)
        resolved["reference_id"] = ref.reference_id
    elif args.embedding == "rff":
        if args.embedded is None:
            raise ValidationError("--embedding rff needs --embedded")
        rows = load_matrix(os.path.join(args.embedded, "embeddings.csv"))
        gram = rows @ rows.T
    else:
        measures, _, _ = _load_measures(args)
        kernel, sigma = _resolve_kernel(args, measures, seed_tag=2)
        resolved["sigma"] = sigma
        if args.embedding == "kme":
            gram = kme_gram(measures, kernel, threads=threads)
        else:
            ridge = None if args.ridge == "auto" else float(args.ridge)
            fits = [nystrom_fit(m, args.k, kernel, ridge=ridge,
                                rng=RngStream(args.seed, 100 + i))
                    for i, m in enumerate(measures)]
            gram = nystrom_gram(fits, threads=threads)
    save_matrix(gram, os.path.join(args.out, "gram.csv"))
    _write_run(args.out, args, resolved)
    _emit({"embedding": args.embedding, "shape": list(gram.shape)})
    return 0


def cmd_pca(args) -> int:
    gram = load_matrix(args.gram)
    n = gram.shape[0]
    q = min(args.q, n) if args.q is not None else min(10, n)
    res = gram_pca(gram, q=q, centered=args.centered)
    os.makedirs(args.out, exist_ok=True)
    save_matrix(res.eigenvalues.reshape(-1, 1),
                os.path.join(args.out, "eigenvalues.csv"))
    save_matrix(res.scores, os.path.join(args.out, "scores.csv"))
    save_matrix(res.coefficients, os.path.join(args.out, "coefficients.csv"))
    _write_run(args.out, args, {"q": q})
    _emit({"q": q, "top_eigenvalue": float(res.eigenvalues[0])})
    return 0


def cmd_classify(args) -> int:
    threads = resolve_threads(args.threads)
    ds = load_dataset(args.data)
    if ds.labels is None:
        raise ValidationError("classification needs a labeled dataset")
    os.makedirs(args.out, exist_ok=True)

    if args.scheme == "none":
        measures = ds.measures
        eps = None
    else:
        qf = _run_quantize(ds, args, threads)
        measures = qf.measures()
        eps = qf.eps_k

    resolved = {"threads": threads, "eps_k": eps}
    if args.embedding == "lot":
        dim = measures[0].dim
        ref = make_reference(args.ref_kind, d=dim, m0=args.m0,
                             rng=RngStream(args.seed, 7))
        embs = embed_family(measures, ref, threads=threads)
        gram = lot_gram(embs, threads=threads)
        resolved["reference_id"] = ref.reference_id
    else:
        kernel, sigma = _resolve_kernel(args, measures, seed_tag=3)
        gram = kme_gram(measures, kernel, threads=threads)
        resolved["sigma"] = sigma

    n = gram.shape[0]
    q = min(args.q, n)
    res = gram_pca(gram, q=q, centered=args.centered)
    train, test, stratified = train_test_split(
        n, args.train_frac, RngStream(args.seed, 11), labels=ds.labels)
    if len(test) == 0:
        raise ValidationError("test split is empty")
    train_labels = [ds.labels[i] for i in train]
    test_labels = [ds.labels[i] for i in test]
    shrink = None if args.shrinkage == "auto" else float(args.shrinkage)
    model = lda_fit(res.scores[train], train_labels, shrinkage=shrink)
    pred = lda_predict(model, res.scores[test])
    correct = sum(1 for p, t in zip(pred, test_labels) if p == t)
    per_class = {}
    for cls in sorted(set(ds.labels)):
        idx = [j for j, t in enumerate(test_labels) if t == cls]
        hits = sum(1 for j in idx if pred[j] == test_labels[j])
        per_class[cls] = {"total": len(idx), "correct": hits,
                          "accuracy": (hits / len(idx)) if idx else None}
    report = {
        "accuracy": correct / len(test),
        "per_class": per_class,
        "train_ids": [ds.ids[i] for i in train],
        "test_ids": [ds.ids[i] for i in test],
        "seed": args.seed,
        "stratified": stratified,
        "q": q,
        "eps_k": eps,
    }
    _write_json(os.path.join(args.out, "report.json"), report)
    save_matrix(res.scores, os.path.join(args.out, "scores.csv"))
    _write_run(args.out, args, resolved)
    _emit({"accuracy": report["accuracy"], "test_size": len(test)})
    return 0


def cmd_stats(args) -> int:
    threads = resolve_threads(args.threads)
    ds = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    payload = {"n": len(ds), "dispersion": dispersion(ds.measures, threads=threads)}
    if ds.labels is not None:
        classes = sorted(set(ds.labels))
        payload["wcss"] = {cls: wcss(ds.measures, ds.labels, cls, threads=threads)
                           for cls in classes}
        payload["bcss"] = {}
        for i, a in enumerate(classes):
            for b in classes[i + 1:]:
                payload["bcss"]["%s|%s" % (a, b)] = bcss(
                    ds.measures, ds.labels, a, b, threads=threads)
    if args.quantized is not None:
        qf = load_quantized(args.quantized)
        report = dispersion_bound_check(
            ds.measures, qf, lam=_parse_float_list(args.lambdas, "--lambdas"),
            threads=threads)
        payload["quantized"] = {
            "scheme": qf.scheme,
            "eps_k": qf.eps_k,
            "ss_quantized": report["ss_quantized"],
            "lambda_slack": {repr(k): v for k, v in report["lambda_slack"].items()},
            "pairwise_slack_min": report["pairwise_slack_min"],
            "max_cell_sq_diameter": report["max_cell_sq_diameter"],
        }
    _write_json(os.path.join(args.out, "stats.json"), payload)
    _write_run(args.out, args, {"threads": threads})
    _emit({"dispersion": payload["dispersion"],
           "eps_k": payload.get("quantized", {}).get("eps_k")})
    return 0


def cmd_bench(args) -> int:
    threads = resolve_threads(args.threads)
    os.makedirs(args.out, exist_ok=True)
    grid = _parse_int_list(args.k_grid, "--k-grid")
    if sorted(grid) != grid:
        raise ValidationError("--k-grid must be ascending")
    params = default_params(args.n, args.d, args.m, classes=args.classes,
                            seed=args.seed)
    ds = gen_dataset(params, threads=threads)
    ref = make_reference("unit-ball-radial", d=args.d, m0=args.m0,
                         rng=RngStream(args.seed, 7))
    g_lot_true = true_lot_gram(params)
    g_kme_true = true_kme_gram(params)
    kernel = Kernel("linear-plus-square")
    lot_norm = float(np.linalg.norm(g_lot_true)) or 1.0
    kme_norm = float(np.linalg.norm(g_kme_true)) or 1.0

    rows = []
    prev = {"per-measure": None, "mean-measure": None}
    for k in grid:
        for scheme in ("per-measure", "mean-measure"):
            rng = RngStream(args.seed, 1000 + k)
            t0 = time.perf_counter()
            if scheme == "per-measure":
                qf = quantize_each(ds, k, rng, restarts=args.restarts,
                                   threads=threads, extra_inits=prev[scheme])
                prev[scheme] = qf.centers
            else:
                qf = quantize_mean(ds, k, rng, restarts=args.restarts,
                                   threads=threads, extra_init=prev[scheme])
                prev[scheme] = qf.centers
            t_quant = (time.perf_counter() - t0) * 1000.0

            quantized = qf.measures()
            t0 = time.perf_counter()
            embs = embed_family(quantized, ref, threads=threads)
            g_lot = lot_gram(embs, threads=threads)
            g_kme = kme_gram(quantized, kernel, threads=threads)
            t_embed = (time.perf_counter() - t0) * 1000.0

            rows.append({
                "K": k,
                "scheme": scheme,
                "eps_K": qf.eps_k,
                "gram_err_lot": float(np.linalg.norm(g_lot - g_lot_true)) / lot_norm,
                "gram_err_kme": float(np.linalg.norm(g_kme - g_kme_true)) / kme_norm,
                "wall_time_quantize_ms": t_quant,
                "wall_time_embed_ms": t_embed,
            })

    csv_path = os.path.join(args.out, "bench.csv")
    cols = ["K", "scheme", "eps_K", "gram_err_lot", "gram_err_kme",
            "wall_time_quantize_ms", "wall_time_embed_ms"]
    with open(csv_path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            cells = []
            for c in cols:
                v = row[c]
                cells.append(repr(v) if isinstance(v, float) else str(v))
            fh.write(",".join(cells) + "\n")
    _write_run(args.out, args, {"threads": threads})
    _emit({"rows": len(rows), "csv": csv_path})
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="measure-embed",
        description="Quantize, embed, and analyze families of discrete measures.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: MEASURE_EMBED_THREADS or 1)")

    p = sub.add_parser("synth", help="generate a synthetic shift/scaling dataset")
    add_common(p)
    p.add_argument("--n", type=int, default=60, help="number of measures")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--m", type=int, default=2000, help="points per measure")
    p.add_argument("--classes", type=int, default=3)
    p.set_defaults(func=cmd_synth)

    def add_quantize_args(p, schemes):
        p.add_argument("--k", type=int, required=True, help="points per quantized measure")
        p.add_argument("--scheme", default="mean-measure", choices=schemes)
        p.add_argument("--restarts", type=int, default=1)
        p.add_argument("--max-iter", type=int, default=100)
        p.add_argument("--subsample", default="auto",
                       help="'auto', 'full', or a sample size for the mean measure")

    p = sub.add_parser("quantize", help="quantize every measure to K points")
    add_common(p)
    p.add_argument("--data", required=True, help="dataset manifest path")
    add_quantize_args(p, ["per-measure", "mean-measure", "random-subset"])
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("embed", help="embed measures (displacement field or features)")
    add_common(p)
    p.add_argument("--data", help="dataset manifest path")
    p.add_argument("--quantized", help="quantized family directory")
    p.add_argument("--kind", required=True, choices=["lot", "rff"])
    p.add_argument("--m0", type=int, default=1000, help="reference sample size")
    p.add_argument("--ref-kind", default="uniform-cube",
                   choices=["uniform-cube", "unit-ball-radial", "external-file"])
    p.add_argument("--ref-file", default=None,
                   help="points CSV for --ref-kind external-file")
    p.add_argument("--kernel", default="rbf",
                   choices=["rbf", "linear", "linear-plus-square"])
    p.add_argument("--sigma", default="auto")
    p.add_argument("--features", type=int, default=256, help="feature count s")
    p.add_argument("--rff-raw", action="store_true",
                   help="skip the sqrt(2/s) feature normalization")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("gram", help="assemble a Gram matrix")
    add_common(p)
    p.add_argument("--data", help="dataset manifest path")
    p.add_argument("--quantized", help="quantized family directory")
    p.add_argument("--embedded", help="embed output directory (lot/rff)")
    p.add_argument("--embedding", required=True,
                   choices=["lot", "kme", "nystrom", "rff"])
    p.add_argument("--kernel", default="rbf",
                   choices=["rbf", "linear", "linear-plus-square"])
    p.add_argument("--sigma", default="auto")
    p.add_argument("--k", type=int, default=16, help="landmarks per measure")
    p.add_argument("--ridge", default="auto")
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("pca", help="PCA of a Gram matrix")
    add_common(p)
    p.add_argument("--gram", required=True, help="Gram matrix CSV")
    p.add_argument("--q", type=int, default=None,
                   help="components to keep (default min(10, N))")
    p.add_argument("--centered", action="store_true")
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("classify", help="quantize, embed, PCA, and LDA-classify")
    add_common(p)
    p.add_argument("--data", required=True, help="labeled dataset manifest")
    add_quantize_args(p, ["per-measure", "mean-measure", "random-subset", "none"])
    p.add_argument("--embedding", default="lot", choices=["lot", "kme"])
    p.add_argument("--m0", type=int, default=1000)
    p.add_argument("--ref-kind", default="uniform-cube",
                   choices=["uniform-cube", "unit-ball-radial"])
    p.add_argument("--kernel", default="rbf",
                   choices=["rbf", "linear", "linear-plus-square"])
    p.add_argument("--sigma", default="auto")
    p.add_argument("--q", type=int, default=10)
    p.add_argument("--train-frac", type=float, default=0.75)
    p.add_argument("--centered", action="store_true")
    p.add_argument("--shrinkage", default="auto")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("stats", help="dispersion, scatter, and quantization bounds")
    add_common(p)
    p.add_argument("--data", required=True, help="dataset manifest path")
    p.add_argument("--quantized", default=None,
                   help="quantized family directory to check bounds against")
    p.add_argument("--lambdas", default="0.5,1,2")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", help="K-grid quantization/embedding benchmark")
    add_common(p)
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--m", type=int, default=2000)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--k-grid", default=",".join(str(k) for k in K_GRID_DEFAULT))
    p.add_argument("--m0", type=int, default=1000)
    p.add_argument("--restarts", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(json.dumps({"error": "validation", "message": str(exc)}),
              file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(json.dumps({"error": "runtime", "message": str(exc)}),
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
