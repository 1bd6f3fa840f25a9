"""Command-line interface wiring the pipeline together.

Subcommands compose as chop -> train-lm -> train-tree -> tune -> segment ->
evaluate, with synth providing self-contained corpora. Every run writes a
manifest next to its primary output recording input digests, seeds, and the
effective configuration; re-running with identical inputs reproduces
artifacts byte for byte. Partial outputs are removed on failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .chopping import ChopCriterion, chop, load_units, project_boundaries, serialize_units
from .combine import (
    MODES,
    CombinerConfig,
    ModeParams,
    PreparedShow,
    decode_show,
    load_config,
    prepare_show,
    save_config,
    tune,
)
from .corpus import (
    load_feature_table,
    load_shows,
    load_stories,
    read_story_file,
    save_feature_table,
    save_shows,
    save_stories,
)
from .errors import TopicsegError
from .evaluation import EvalConfig, TimeSegmentation, WordSegmentation, evaluate_corpus
from .hmm import HmmConfig, SegmentationHmm
from .synthesis import FeatureProfile, SourceTopology, generate, make_generator_model, stories_from_shows
from .topic_lm import (
    cluster_stories,
    collect_begin_end_bags,
    estimate_model,
    load_model,
    load_stoplist,
    save_model,
)
from .tree import TreeTrainConfig, load_tree, save_tree, select_features, train

log = logging.getLogger(__name__)

HYP_HEADER = ["show_id", "boundary_index", "token_index", "time", "decision", "posterior"]


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(primary_output: str, command: str, inputs: list, config: dict) -> None:
    doc = {
        "tool": "topicseg",
        "tool_version": __version__,
        "command": command,
        "inputs": {path: _sha256(path) for path in sorted(set(inputs))},
        "config": config,
    }
    with open(primary_output + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


class _Outputs:
    """Track written files so failures leave no partial artifacts behind."""

    def __init__(self):
        self.paths: list[str] = []

    def track(self, path: str) -> str:
        self.paths.append(path)
        return path

    def cleanup(self):
        for path in self.paths:
            for candidate in (path, path + ".manifest.json"):
                if os.path.exists(candidate):
                    os.unlink(candidate)


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _criterion_from_args(args) -> ChopCriterion:
    return ChopCriterion(
        kind=args.criterion.upper(),
        block_length=args.block_length,
        pause_threshold=args.pause_threshold,
    )


def _cmd_chop(args, out: _Outputs) -> int:
    shows = load_shows(args.transcripts)
    criterion = _criterion_from_args(args)
    units_by_show = {}
    labels_by_show = {}
    unreachable_total = 0
    for show in shows:
        units = chop(show, criterion)
        labels, unreachable = project_boundaries(show, units)
        units_by_show[show.show_id] = units
        labels_by_show[show.show_id] = labels
        if unreachable:
            unreachable_total += len(unreachable)
            print(
                f"warning: show {show.show_id}: {len(unreachable)} reference "
                f"boundaries unreachable at token indices {unreachable}",
                file=sys.stderr,
            )
    with open(out.track(args.out), "w", encoding="utf-8") as fh:
        fh.write(serialize_units(units_by_show, labels_by_show))
    _write_manifest(
        args.out,
        "chop",
        [args.transcripts],
        {
            "criterion": criterion.kind,
            "block_length": criterion.block_length,
            "pause_threshold": criterion.pause_threshold,
            "unreachable_boundaries": unreachable_total,
        },
    )
    return 0


def _cmd_train_lm(args, out: _Outputs) -> int:
    stoplist = load_stoplist(args.stoplist)
    stories = load_stories(args.stories, args.min_words, args.max_words)
    raw_count = len(read_story_file(args.stories))
    result = cluster_stories(
        stories, args.clusters, seed=args.seed, passes=args.passes, stoplist=stoplist
    )
    begin_bags = end_bags = None
    inputs = [args.stories, args.stoplist]
    if args.transcripts:
        shows = load_shows(args.transcripts)
        criterion = _criterion_from_args(args)
        triples = []
        for show in shows:
            units = chop(show, criterion)
            labels, _ = project_boundaries(show, units)
            triples.append((show, units, labels))
        begin_bags, end_bags = collect_begin_end_bags(triples)
        inputs.append(args.transcripts)
    model = estimate_model(
        stories,
        result.assignment,
        lam=args.interpolation,
        stoplist=stoplist,
        begin_bags=begin_bags,
        end_bags=end_bags,
    )
    save_model(model, out.track(args.out))
    _write_manifest(
        args.out,
        "train-lm",
        inputs,
        {
            "clusters": args.clusters,
            "lambda": args.interpolation,
            "seed": args.seed,
            "passes": args.passes,
            "min_words": args.min_words,
            "max_words": args.max_words,
            "stories_loaded": raw_count,
            "stories_used": len(stories),
            "kmeans_objective": result.objectives[-1],
            "begin_end": begin_bags is not None,
        },
    )
    return 0


def _cmd_train_tree(args, out: _Outputs) -> int:
    vectors = load_feature_table(args.features)
    labeled = [v for v in vectors if v.label is not None]
    if not labeled:
        raise TopicsegError("feature table has no labeled rows")
    config = TreeTrainConfig(
        min_leaf=args.min_leaf,
        cv_folds=args.cv_folds,
        max_depth=args.max_depth,
        downsample=args.downsample,
        seed=args.seed,
    )
    selection = None
    if args.select_features:
        rng = np.random.default_rng([args.seed, 2])
        order = rng.permutation(len(labeled))
        cut = max(1, int(len(labeled) * (1.0 - args.heldout_fraction)))
        train_part = [labeled[i] for i in sorted(order[:cut])]
        heldout = [labeled[i] for i in sorted(order[cut:])]
        if not heldout:
            raise TopicsegError("held-out split is empty; lower --heldout-fraction")
        selection = select_features(train_part, heldout, beam_width=args.beam_width, config=config)
        keep = set(selection.selected)
        labeled = [
            type(v)(v.show_id, v.boundary_index, {k: x for k, x in v.features.items() if k in keep}, v.label)
            for v in labeled
        ]
    tree = train(labeled, config)
    save_tree(tree, out.track(args.out))
    if selection is not None and args.trace:
        with open(out.track(args.trace), "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "selected": list(selection.selected),
                    "trace": [
                        {"phase": s.phase, "subset": list(s.subset), "score": s.score}
                        for s in selection.trace
                    ],
                },
                fh,
                sort_keys=True,
                indent=1,
            )
            fh.write("\n")
    _write_manifest(
        args.out,
        "train-tree",
        [args.features],
        {
            "min_leaf": config.min_leaf,
            "cv_folds": config.cv_folds,
            "max_depth": config.max_depth,
            "downsample": config.downsample,
            "seed": config.seed,
            "select_features": bool(args.select_features),
            "selected": list(selection.selected) if selection else None,
            "n_leaves": tree.n_leaves(),
        },
    )
    return 0


def _prepare_all(args, model, hmm, tree=None) -> list[PreparedShow]:
    shows = load_shows(args.transcripts)
    criterion = _criterion_from_args(args)
    feature_map = None
    if args.features:
        vectors = load_feature_table(args.features)
        feature_map = {v.key(): v for v in vectors}
    return _parallel_map(
        lambda show: prepare_show(show, criterion, model, hmm, feature_map, tree),
        shows,
        args.jobs,
    )


def _cmd_tune(args, out: _Outputs) -> int:
    with open(args.dev, encoding="utf-8") as fh:
        dev = json.load(fh)
    with open(args.grid, encoding="utf-8") as fh:
        grid = json.load(fh)
    model = load_model(dev["model"])
    use_begin_end = bool(dev.get("use_begin_end", model.has_begin_end))
    hmm_config = HmmConfig(tsp=1.0, n_clusters=model.n_clusters, use_begin_end=use_begin_end)
    hmm = SegmentationHmm(hmm_config)

    balanced_tree = cm_dt_tree = None
    tree_balanced = True
    inputs = [args.dev, args.grid, dev["model"], dev["transcripts"]]
    if dev.get("tree"):
        balanced_tree = load_tree(dev["tree"])
        tree_balanced = balanced_tree.balanced
        inputs.append(dev["tree"])
    if dev.get("cm_dt_tree"):
        cm_dt_tree = load_tree(dev["cm_dt_tree"])
        inputs.append(dev["cm_dt_tree"])
    if dev.get("features"):
        inputs.append(dev["features"])

    ns = argparse.Namespace(
        transcripts=dev["transcripts"],
        features=dev.get("features"),
        criterion=dev.get("criterion", "pause"),
        block_length=int(dev.get("block_length", 10)),
        pause_threshold=float(dev.get("pause_threshold", 0.575)),
        jobs=args.jobs,
    )
    prepared = _prepare_all(ns, model, hmm, balanced_tree)
    config = tune(
        prepared,
        args.mode,
        grid,
        hmm_config,
        cm_dt_tree=cm_dt_tree,
        tree_balanced=tree_balanced,
    )
    save_config(config, out.track(args.out))
    if args.report == "json":
        table = [
            {"source": s, "tsp": p.tsp, "mcw": p.mcw, "threshold": p.threshold, "c_seg": cost}
            for s, p, cost in config.tuning_table
        ]
        print(json.dumps({"mode": args.mode, "table": table}, sort_keys=True, indent=1))
    _write_manifest(args.out, "tune", inputs, {"mode": args.mode, "grid": grid})
    return 0


def _cmd_segment(args, out: _Outputs) -> int:
    model = load_model(args.model)
    config: CombinerConfig = load_config(args.config)
    if args.mode and args.mode != config.mode:
        raise TopicsegError(f"--mode {args.mode} conflicts with tuned config mode {config.mode}")
    mode = config.mode
    if args.clusters and args.clusters != model.n_clusters:
        raise TopicsegError(
            f"requested {args.clusters} clusters but model {args.model} has {model.n_clusters}"
        )
    use_begin_end = model.has_begin_end if args.begin_end == "auto" else args.begin_end == "on"
    hmm_config = HmmConfig(tsp=1.0, n_clusters=model.n_clusters, use_begin_end=use_begin_end)

    if mode in ("pm", "cm-hmm", "cm-dt") and not (args.tree and args.features):
        raise TopicsegError(f"mode {mode} needs --tree and --features")
    balanced_tree = cm_dt_tree = None
    tree_balanced = True
    inputs = [args.model, args.config, args.transcripts]
    if args.tree:
        loaded = load_tree(args.tree)
        inputs.append(args.tree)
        if mode == "cm-dt":
            cm_dt_tree = loaded
        else:
            balanced_tree = loaded
            tree_balanced = loaded.balanced
    if args.features:
        inputs.append(args.features)

    prepared = _prepare_all(args, model, SegmentationHmm(hmm_config), balanced_tree)

    def run(p: PreparedShow):
        params = config.for_source(p.source_type)
        hmm = SegmentationHmm(
            HmmConfig(
                tsp=params.tsp,
                n_clusters=hmm_config.n_clusters,
                use_begin_end=hmm_config.use_begin_end,
                mcw=params.mcw,
            )
        )
        return decode_show(p, mode, params, hmm, cm_dt_tree, tree_balanced)

    hypotheses = _parallel_map(run, prepared, args.jobs)

    lines = ["\t".join(HYP_HEADER)]
    for p, hyp in zip(prepared, hypotheses):
        tokens = p.boundary_token_indices()
        times = p.boundary_times()
        posteriors = hyp.posteriors or [float("nan")] * len(hyp.decisions)
        for b, decision in enumerate(hyp.decisions):
            lines.append(
                "\t".join(
                    [
                        p.show_id,
                        str(b + 1),
                        str(tokens[b]),
                        repr(times[b]),
                        "yes" if decision else "no",
                        repr(float(posteriors[b])),
                    ]
                )
            )
    with open(out.track(args.out), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_manifest(
        args.out,
        "segment",
        inputs,
        {
            "mode": mode,
            "criterion": args.criterion,
            "block_length": args.block_length,
            "pause_threshold": args.pause_threshold,
            "begin_end": use_begin_end,
            "jobs_independent": True,
        },
    )
    return 0


def load_hypotheses(path: str) -> dict:
    """hypothesis TSV -> {show_id: [(token_index, time, decision, posterior)]}"""
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != HYP_HEADER:
            raise TopicsegError(f"bad hypothesis header in {path}")
        for raw in fh:
            if not raw.strip():
                continue
            show_id, b, token_index, time, decision, posterior = raw.rstrip("\n").split("\t")
            out.setdefault(show_id, []).append(
                (int(token_index), float(time), decision == "yes", float(posterior))
            )
    return out


def _cmd_evaluate(args, out: _Outputs) -> int:
    shows = load_shows(args.ref)
    hyp_rows = load_hypotheses(args.hyp)
    unknown = sorted(set(hyp_rows) - {s.show_id for s in shows})
    if unknown:
        raise TopicsegError(f"hypothesis mentions unknown shows: {unknown}")
    config = EvalConfig(k=args.word_k, delta=args.time_delta)
    word_ref, word_hyp, time_ref, time_hyp = {}, {}, {}, {}
    for show in shows:
        rows = hyp_rows.get(show.show_id, [])
        ref_bounds = show.sorted_boundaries()
        word_ref[show.show_id] = WordSegmentation(show.show_id, show.n_tokens, tuple(ref_bounds))
        word_hyp[show.show_id] = WordSegmentation(
            show.show_id, show.n_tokens, tuple(t for t, _, d, _ in rows if d)
        )
        ref_times = tuple(
            0.5 * (show.tokens[b - 1].end_time + show.tokens[b].start_time) for b in ref_bounds
        )
        time_ref[show.show_id] = TimeSegmentation(show.show_id, show.duration, ref_times)
        time_hyp[show.show_id] = TimeSegmentation(
            show.show_id, show.duration, tuple(t for _, t, d, _ in rows if d)
        )
    report = evaluate_corpus(word_ref, word_hyp, time_ref, time_hyp, config)
    doc = report.to_dict()
    if args.report == "json":
        text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    else:
        rows = [["view", "p_miss", "p_fa", "c_seg"]]
        for view in ("word", "time"):
            rows.append(
                [view]
                + [
                    "undefined" if doc[view][k] is None else f"{doc[view][k]:.6f}"
                    for k in ("p_miss", "p_fa", "c_seg")
                ]
            )
        text = "\n".join("\t".join(r) for r in rows) + "\n"
    sys.stdout.write(text)
    if args.out:
        with open(out.track(args.out), "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_manifest(
            args.out, "evaluate", [args.ref, args.hyp], {"k": config.k, "delta": config.delta}
        )
    return 0


def _profiles_from_doc(doc: dict) -> list[FeatureProfile]:
    profiles = []
    for p in doc:
        profiles.append(
            FeatureProfile(
                name=p["name"],
                kind=p["kind"],
                topic_params=tuple(p["topic"]),
                nontopic_params=tuple(p["nontopic"]),
            )
        )
    return profiles


def _cmd_synth(args, out: _Outputs) -> int:
    with open(args.profile, encoding="utf-8") as fh:
        profile = json.load(fh)
    inputs = [args.profile]
    if args.model:
        model = load_model(args.model)
        inputs.append(args.model)
    else:
        gen = profile.get("generator_model")
        if gen is None:
            raise TopicsegError("either --model or a generator_model profile section is required")
        model = make_generator_model(
            n_clusters=int(gen.get("clusters", 100)),
            words_per_cluster=int(gen.get("words_per_cluster", 40)),
            shared_words=int(gen.get("shared_words", 30)),
            shared_mass=float(gen.get("shared_mass", 0.35)),
            seed=int(gen.get("seed", args.seed)),
            with_begin_end=bool(gen.get("begin_end", True)),
        )
    topology = [
        SourceTopology(
            source_type=t["source_type"],
            n_shows=int(t.get("n_shows", args.shows)),
            units_per_show=int(t["units_per_show"]),
            tokens_per_unit=int(t.get("tokens_per_unit", 12)),
            mean_story_units=float(t.get("mean_story_units", 4.0)),
            cluster_pool=int(t.get("cluster_pool", 0)),
            stop_word_rate=float(t.get("stop_word_rate", 0.3)),
            pause_floor=float(t.get("pause_floor", 0.65)),
            turn_profile_name=t.get("turn_profile"),
        )
        for t in profile["sources"]
    ]
    profiles = _profiles_from_doc(profile["features"])
    corpus = generate(model, topology, profiles, seed=args.seed)

    os.makedirs(args.out_dir, exist_ok=True)
    transcripts = os.path.join(args.out_dir, "transcripts.txt")
    features = os.path.join(args.out_dir, "features.tsv")
    stories = os.path.join(args.out_dir, "stories.txt")
    stoplist = os.path.join(args.out_dir, "stoplist.txt")
    save_shows(corpus.shows, out.track(transcripts))
    save_feature_table(corpus.vectors, out.track(features))
    save_stories(stories_from_shows(corpus.shows), out.track(stories))
    with open(out.track(stoplist), "w", encoding="utf-8") as fh:
        fh.write("\n".join(sorted(model.stoplist)) + "\n")
    manifest_target = os.path.join(args.out_dir, "corpus")
    with open(out.track(manifest_target), "w", encoding="utf-8") as fh:
        fh.write("transcripts.txt\nfeatures.tsv\nstories.txt\nstoplist.txt\n")
    _write_manifest(
        manifest_target,
        "synth",
        inputs,
        {"seed": args.seed, "n_shows": sum(t.n_shows for t in topology)},
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topicseg", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_chop_args(p):
        p.add_argument("--criterion", choices=["fixed", "turn", "pause", "sentence"], default="pause")
        p.add_argument("--block-length", type=int, default=10)
        p.add_argument("--pause-threshold", type=float, default=0.575)

    p = sub.add_parser("chop", help="partition transcripts into candidate units")
    p.add_argument("--transcripts", required=True)
    add_chop_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_chop)

    p = sub.add_parser("train-lm", help="cluster stories and estimate topic unigrams")
    p.add_argument("--stories", required=True)
    p.add_argument("--stoplist", required=True)
    p.add_argument("--clusters", type=int, default=100)
    p.add_argument("--lambda", dest="interpolation", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--passes", type=int, default=20)
    p.add_argument("--min-words", type=int, default=300)
    p.add_argument("--max-words", type=int, default=3000)
    p.add_argument("--transcripts", help="boundary-annotated shows for BEGIN/END unigrams")
    add_chop_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_lm)

    p = sub.add_parser("train-tree", help="train the boundary decision tree")
    p.add_argument("--features", required=True)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--downsample", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--select-features", action="store_true")
    p.add_argument("--beam-width", type=int, default=5)
    p.add_argument("--heldout-fraction", type=float, default=0.25)
    p.add_argument("--trace", help="write the feature-selection trace to this JSON file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_tree)

    p = sub.add_parser("tune", help="grid-search decision parameters on dev shows")
    p.add_argument("--mode", choices=list(MODES), required=True)
    p.add_argument("--dev", required=True, help="JSON file naming model/transcripts/features/tree")
    p.add_argument("--grid", required=True, help="JSON file of parameter value lists")
    p.add_argument("--report", choices=["json", "none"], default="none")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_tune)

    p = sub.add_parser("segment", help="decode topic boundaries for shows")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True, help="tuned combiner config JSON")
    p.add_argument("--mode", choices=list(MODES), help="must match the tuned config if given")
    p.add_argument("--transcripts", required=True)
    p.add_argument("--features")
    p.add_argument("--tree")
    p.add_argument("--clusters", type=int, help="expected cluster count; mismatch is an error")
    p.add_argument("--begin-end", choices=["auto", "on", "off"], default="auto")
    add_chop_args(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_segment)

    p = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    p.add_argument("--profile", required=True)
    p.add_argument("--model")
    p.add_argument("--shows", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--ref", required=True, help="transcripts carrying reference boundaries")
    p.add_argument("--hyp", required=True, help="hypothesis TSV from segment")
    p.add_argument("--word-k", type=int, default=50)
    p.add_argument("--time-delta", type=float, default=15.0)
    p.add_argument("--report", choices=["json", "tsv"], default="tsv")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    outputs = _Outputs()
    try:
        return args.fn(args, outputs)
    except (TopicsegError, OSError, json.JSONDecodeError) as exc:
        outputs.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
