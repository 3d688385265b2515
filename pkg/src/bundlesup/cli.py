"""Command-line interface.

Subcommands: gen-synth, sample-bundles, annotate, train, eval, pipeline,
sweep, verify, bench-kernels. Run `bundlesup <cmd> --help` for flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import gnn, kernels
from .annotate import AnnotationCache, OracleConfig, annotate_all, save_records
from .graphs import (
    load_edge_list,
    load_embeddings,
    load_node_table,
    normalized_adjacency,
    save_embeddings,
)
from .llm import LlmEndpointConfig
from .pipeline import (
    DatasetPaths,
    ExperimentConfig,
    MODES,
    SWEEP_AXES,
    accuracy,
    compare_queries,
    run_pipeline,
    save_report_json,
    standard_experiment,
    sweep,
)
from .sampling import CRITERIA, SamplingConfig, load_bundles, sample_bundles, save_bundles
from .synth import SbmConfig, gen_sbm, homophily
from .train import TrainConfig, train
from .theorems import (
    default_theorem2_instance,
    verify_theorem1,
    verify_theorem2,
    verify_theorem3,
)


def _write_dataset(out_dir, graph, emb, table, seed):
    os.makedirs(out_dir, exist_ok=True)
    edges_path = os.path.join(out_dir, "edges.txt")
    with open(edges_path, "w", encoding="utf-8") as fh:
        fh.write(f"n {graph.n}\n")
        for u, v in sorted(graph.edges):
            fh.write(f"{u} {v}\n")
    emb_path = os.path.join(out_dir, "embeddings.txt")
    save_embeddings(emb_path, emb)
    nodes_path = os.path.join(out_dir, "nodes.jsonl")
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for i in range(graph.n):
            rec = {"id": i}
            if table.texts is not None:
                rec["text"] = table.texts[i]
            if table.labels is not None:
                rec["label"] = table.class_names[table.labels[i]]
            fh.write(json.dumps(rec) + "\n")
    manifest = {
        "n": graph.n,
        "num_edges": graph.num_edges,
        "class_names": table.class_names,
        "seed": seed,
        "homophily": homophily(graph, table.labels) if table.labels else None,
        "files": {"edges": "edges.txt", "embeddings": "embeddings.txt", "nodes": "nodes.jsonl"},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def cmd_gen_synth(args):
    cfg = SbmConfig(
        n=args.n,
        n_classes=args.classes,
        p_in=args.p_in,
        p_out=args.p_out,
        dim=args.dim,
        separation=args.separation,
        sigma=args.sigma,
        seed=args.seed,
    )
    graph, emb, table = gen_sbm(cfg)
    manifest = _write_dataset(args.out, graph, emb, table, args.seed)
    print(
        f"wrote {args.out}: n={manifest['n']} edges={manifest['num_edges']} "
        f"classes={len(manifest['class_names'])} homophily={manifest['homophily']:.3f}"
    )
    return 0


def _class_names(args):
    if getattr(args, "manifest", None):
        with open(args.manifest, "r", encoding="utf-8") as fh:
            return json.load(fh)["class_names"]
    if getattr(args, "class_names", None):
        return [s.strip() for s in args.class_names.split(",")]
    raise SystemExit("pass --manifest or --class-names")


def cmd_sample_bundles(args):
    graph = load_edge_list(args.edges) if args.edges else None
    emb = load_embeddings(args.embeddings) if args.embeddings else None
    cfg = SamplingConfig(
        criterion=args.criterion,
        bundle_size=args.bundle_size,
        num_bundles=args.num_bundles,
        seed=args.seed,
        max_resample_attempts=args.max_resample_attempts,
    )
    bundles = sample_bundles(graph, emb, cfg)
    save_bundles(args.out, bundles)
    sizes = [len(b.members) for b in bundles]
    print(f"wrote {len(bundles)} bundles to {args.out} (sizes {min(sizes)}..{max(sizes)})")
    return 0


def cmd_annotate(args):
    bundles = load_bundles(args.bundles)
    class_names = _class_names(args)
    table = load_node_table(args.nodes, class_names)
    if args.annotator == "oracle":
        summary = annotate_all(
            bundles, table, oracle=OracleConfig(noise_rate=args.noise, seed=args.seed)
        )
    else:
        llm_cfg = LlmEndpointConfig(
            base_url=args.base_url,
            model=args.model,
            api_key_env_var=args.api_key_env,
            max_retries=args.max_retries,
            timeout=args.timeout,
            max_chars_per_item=args.max_chars_per_item,
            parallelism=args.parallelism,
        )
        summary = annotate_all(
            bundles,
            table,
            llm=llm_cfg,
            cache=AnnotationCache(args.cache),
            dataset_description=args.description,
        )
    save_bundles(args.out, bundles)
    if args.records:
        save_records(args.records, summary.records)
    print(f"labeled {summary.n_labeled}/{len(bundles)} bundles ({summary.n_failed} failed)")
    return 0


def cmd_train(args):
    graph = load_edge_list(args.edges)
    emb = load_embeddings(args.embeddings)
    bundles = load_bundles(args.bundles)
    n_classes = args.classes if args.classes else len(_class_names(args))
    cfg = TrainConfig(
        learning_rate=args.eta if args.eta else 0.5,
        epochs=args.epochs,
        warmup_epochs=args.warmup,
        refine_every=args.refine_every,
        bundle_floor=args.floor,
        seed=args.seed,
        eta_auto=args.eta_auto,
        hidden=args.hidden,
    )
    a_hat = normalized_adjacency(graph)
    params, report = train(a_hat, emb, bundles, cfg, n_classes)
    os.makedirs(args.out, exist_ok=True)
    gnn.save_params(os.path.join(args.out, "params"), params, seed=args.seed)
    report.save_jsonl(os.path.join(args.out, "report.jsonl"))
    save_bundles(os.path.join(args.out, "bundles_refined.jsonl"), bundles)
    s = report.summary()
    print(
        f"trained {s['epochs']} epochs (eta={s['eta']:.4g}): final loss {s['final_loss']:.5f}, "
        f"grad norm {s['final_grad_norm']:.3e}, {s['refinement_events']} evictions"
    )
    return 0


def cmd_eval(args):
    graph = load_edge_list(args.edges)
    emb = load_embeddings(args.embeddings)
    class_names = _class_names(args)
    table = load_node_table(args.nodes, class_names)
    if table.labels is None:
        raise SystemExit("node table has no labels; nothing to evaluate against")
    params = gnn.load_params(args.params)
    acc = accuracy(params, normalized_adjacency(graph), emb, table.labels)
    print(f"accuracy: {acc:.4f}")
    return 0


def _config_from_json(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    dataset = raw.get("dataset", {})
    if {"edges", "embeddings", "nodes"} <= set(dataset):
        ds = DatasetPaths(
            edges=dataset["edges"],
            embeddings=dataset["embeddings"],
            nodes=dataset["nodes"],
            class_names=tuple(dataset["class_names"]),
        )
    else:
        ds = SbmConfig(**dataset)
    llm = LlmEndpointConfig(**raw["llm"]) if "llm" in raw else None
    return ExperimentConfig(
        dataset=ds,
        sampling=SamplingConfig(**raw.get("sampling", {})),
        oracle=OracleConfig(**raw.get("oracle", {})),
        llm=llm,
        train=TrainConfig(**raw.get("train", {})),
        mode=raw.get("mode", "bundle"),
        replicate_seeds=tuple(raw.get("replicate_seeds", range(10))),
        dataset_description=raw.get("dataset_description", ""),
        cache_path=raw.get("cache_path"),
    )


def _experiment_config(args) -> ExperimentConfig:
    if args.config:
        cfg = _config_from_json(args.config)
    else:
        cfg = standard_experiment()
    if args.mode:
        cfg = replace(cfg, mode=args.mode)
    if args.noise is not None:
        cfg = replace(cfg, oracle=replace(cfg.oracle, noise_rate=args.noise))
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(","))
        cfg = replace(cfg, replicate_seeds=seeds)
    return cfg


def cmd_pipeline(args):
    cfg = _experiment_config(args)
    if args.compare_queries:
        comparison = compare_queries(cfg)
        os.makedirs(args.out, exist_ok=True)
        comparison.save_csv(os.path.join(args.out, "query_comparison.csv"))
        for row in comparison.rows:
            print(
                f"{row['arm']}: agreement={row['agreement']:.3f} "
                f"accuracy={row['accuracy_mean']:.4f}±{row['accuracy_std']:.4f}"
            )
        return 0
    report = run_pipeline(cfg)
    os.makedirs(args.out, exist_ok=True)
    save_report_json(os.path.join(args.out, "pipeline_report.json"), report)
    for row in report.rows():
        print(f"seed {row['seed']}: accuracy {row['accuracy']:.4f}")
    print(f"mode={report.mode}: mean {report.mean_accuracy:.4f} ± {report.std_accuracy:.4f}")
    return 0


def cmd_sweep(args):
    cfg = _experiment_config(args)
    values = [float(v) if args.axis == "noise_rate" else int(v) for v in args.values.split(",")]
    table = sweep(cfg, args.axis, values)
    os.makedirs(args.out, exist_ok=True)
    table.save_csv(
        os.path.join(args.out, "sweep_runs.csv"), os.path.join(args.out, "sweep_summary.csv")
    )
    for row in table.summary:
        print(f"{args.axis}={row['value']}: mean {row['mean']:.4f} ± {row['std']:.4f} (n={row['n']})")
    return 0


def cmd_verify(args):
    if args.theorem == 1:
        rep = verify_theorem1(args.trials, n_classes=5, bundle_size=5, seed=args.seed)
        print(
            f"outlier-tolerance check: {rep.passed}/{rep.kept} trials passed "
            f"(fraction {rep.pass_fraction:.6f}, drawn {rep.drawn})"
        )
        print(
            f"  min lower margin {rep.min_lower_margin:.3e}, "
            f"max upper violation {rep.max_upper_violation:.3e}"
        )
        return 0 if rep.pass_fraction == 1.0 else 1
    if args.theorem == 2:
        rep = verify_theorem2(default_theorem2_instance(args.seed, n_points=args.points), args.seed)
        for i, pt in enumerate(rep.points):
            print(
                f"point {i}: |grad|_inf={pt.grad_inf:.4f} vs bound {pt.grad_bound:.4f} "
                f"[{'ok' if pt.grad_ok else 'VIOLATED'}]  "
                f"|hess|_max={pt.hess_max:.4f} vs bound {pt.hess_bound:.4f} "
                f"[{'ok' if pt.hess_ok else 'VIOLATED'}]  "
                f"(per-member {pt.grad_inf_per_member:.4f}, undiscounted bound "
                f"{pt.grad_bound_undiscounted:.4f})"
            )
        print(
            f"gradient bound: {'pass' if rep.all_grad_ok else 'FAIL'}; "
            f"hessian bound: {'pass' if rep.all_hess_ok else 'FAIL'}; "
            f"lipschitz probe {rep.lipschitz_max:.3f} <= smoothness {rep.smoothness_const:.3f}: "
            f"{'pass' if rep.lipschitz_ok else 'FAIL'}"
        )
        return 0 if rep.all_ok and rep.lipschitz_ok else 1
    rep = verify_theorem3(seed=args.seed, epochs=args.epochs, refinement=args.refinement)
    print(
        f"descent check: eta={rep.eta:.5g}, monotone={rep.monotone}, "
        f"max step increase {rep.max_step_increase:.3e}, "
        f"final grad norm {rep.final_grad_norm:.4e}, "
        f"{rep.refinement_events} evictions, "
        f"{rep.increases_between_refinements} increases between refinements"
    )
    return 0 if rep.monotone else 1


def cmd_bench_kernels(args):
    from .kernels.bench import run_benchmark

    run_benchmark(n=args.n, avg_degree=args.avg_degree, cols=args.cols, repeats=args.repeats)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bundlesup",
        description="Bundle-level weak supervision for graph neural networks "
        f"(kernel backend: {kernels.BACKEND})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--p-in", type=float, default=0.30)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--dim", type=int, default=24)
    p.add_argument("--separation", type=float, default=2.5)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("sample-bundles", help="draw node bundles by proximity")
    p.add_argument("--edges")
    p.add_argument("--embeddings")
    p.add_argument("--criterion", choices=CRITERIA, default="topological")
    p.add_argument("--bundle-size", type=int, default=5)
    p.add_argument("--num-bundles", type=int, default=100)
    p.add_argument("--max-resample-attempts", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample_bundles)

    p = sub.add_parser("annotate", help="label bundles with an oracle or LLM endpoint")
    p.add_argument("--bundles", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--manifest")
    p.add_argument("--class-names")
    p.add_argument("--annotator", choices=("oracle", "llm"), default="oracle")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", default="gpt-4o")
    p.add_argument("--base-url", default="https://api.openai.com/v1")
    p.add_argument("--api-key-env", default="OPENAI_API_KEY")
    p.add_argument("--max-retries", type=int, default=2)
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--max-chars-per-item", type=int, default=2000)
    p.add_argument("--parallelism", type=int, default=4)
    p.add_argument("--cache")
    p.add_argument("--description", default="")
    p.add_argument("--records", help="also write one annotation record per bundle")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("train", help="train the GCN on labeled bundles")
    p.add_argument("--graph", dest="edges", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--bundles", required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--manifest")
    p.add_argument("--class-names")
    p.add_argument("--eta", type=float)
    p.add_argument("--eta-auto", action="store_true")
    p.add_argument("--epochs", type=int, default=800)
    p.add_argument("--warmup", type=int, default=25)
    p.add_argument("--refine-every", type=int, default=5)
    p.add_argument("--floor", type=int, default=2)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved parameters against node labels")
    p.add_argument("--params", required=True)
    p.add_argument("--graph", dest="edges", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--manifest")
    p.add_argument("--class-names")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run sample/annotate/train/eval end to end")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--noise", type=float)
    p.add_argument("--seeds", help="comma-separated replicate seeds")
    p.add_argument("--compare-queries", action="store_true")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", help="run the pipeline along one config axis")
    p.add_argument("--config")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--noise", type=float)
    p.add_argument("--seeds")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run a numerical verification suite")
    p.add_argument("--theorem", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--epochs", type=int, default=4000)
    p.add_argument("--refinement", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench-kernels", help="time the compiled kernels against NumPy")
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--avg-degree", type=int, default=12)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench_kernels)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
