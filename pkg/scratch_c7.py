"""Calibration prototype for the end-to-end synthetic experiment."""

import time

from topicseg.chopping import ChopCriterion, chop, project_boundaries
from topicseg.combine import (
    CM_DT,
    CM_HMM,
    LM_ONLY,
    PM_ONLY,
    augment_show_vectors,
    decode_show,
    prepare_show,
    tune,
)
from topicseg.evaluation import EvalConfig, c_seg, word_based
from topicseg.hmm import HmmConfig, SegmentationHmm
from topicseg.synthesis import (
    FeatureProfile,
    SourceTopology,
    generate,
    make_generator_model,
    stories_from_shows,
)
from topicseg.topic_lm import cluster_stories, collect_begin_end_bags, estimate_model
from topicseg.tree import TreeTrainConfig, train

t0 = time.time()
SEED = 7
CRITERION = ChopCriterion("PAUSE", pause_threshold=0.575)
STOP = frozenset(("the", "a", "of", "to", "and", "in", "is", "that", "it", "on"))
PROFILES = [
    FeatureProfile("PAU_DUR", "lognormal", (0.8, 0.4), (-0.6, 0.45)),
    FeatureProfile("F0_DIFF", "normal", (3.0, 0.9), (0.0, 0.9)),
    FeatureProfile("TURN_F", "bernoulli", (0.9,), (0.08,)),
]
gen = make_generator_model(
    100, words_per_cluster=30, shared_words=40, shared_mass=0.65, seed=SEED, with_begin_end=True, begin_end_mass=0.25
)


def topo(src, n, units, ms, pool):
    return SourceTopology(
        src,
        n_shows=n,
        units_per_show=units,
        tokens_per_unit=12,
        mean_story_units=ms,
        cluster_pool=pool,
        distinct_adjacent=False,
        stop_word_rate=0.35,
        turn_profile_name="TURN_F",
        false_cue_rate=0.015,
        digression_rate=0.08,
    )


train_c = generate(
    gen,
    [
        SourceTopology(
            "TRAIN",
            n_shows=30,
            units_per_show=300,
            tokens_per_unit=12,
            mean_story_units=30.0,
            stop_word_rate=0.35,
            turn_profile_name="TURN_F",
        )
    ],
    PROFILES,
    seed=SEED + 1,
)
dev_c = generate(gen, [topo("AAA", 15, 300, 25.0, 5), topo("BBB", 15, 250, 40.0, 5)], PROFILES, seed=SEED + 2)
eval_c = generate(gen, [topo("AAA", 25, 300, 25.0, 5), topo("BBB", 25, 250, 40.0, 5)], PROFILES, seed=SEED + 3)
print(f"[{time.time()-t0:5.1f}s] generated")

stories = stories_from_shows(train_c.shows)
print("stories:", len(stories), "mean words", sum(s.total_words for s in stories) / len(stories))
res = cluster_stories(stories, 100, seed=SEED, passes=12, stoplist=STOP)
print(f"[{time.time()-t0:5.1f}s] kmeans {len(res.objectives)-1} passes")
triples = []
for s in train_c.shows:
    u = chop(s, CRITERION)
    l, _ = project_boundaries(s, u)
    triples.append((s, u, l))
bb, eb = collect_begin_end_bags(triples)
model = estimate_model(stories, res.assignment, lam=0.85, stoplist=STOP, begin_bags=bb, end_bags=eb)
hc = HmmConfig(tsp=1.0, n_clusters=100, use_begin_end=True)
hmm = SegmentationHmm(hc)
btree = train(
    [v for v in train_c.vectors if v.label is not None],
    TreeTrainConfig(min_leaf=5, cv_folds=5, downsample=True, seed=SEED),
)
print(f"[{time.time()-t0:5.1f}s] balanced tree {btree.n_leaves()} leaves")
tfm = {v.key(): v for v in train_c.vectors}
dfm = {v.key(): v for v in dev_c.vectors}
efm = {v.key(): v for v in eval_c.vectors}
trainp = [prepare_show(s, CRITERION, model, hmm, tfm, btree) for s in train_c.shows]
dev = [prepare_show(s, CRITERION, model, hmm, dfm, btree) for s in dev_c.shows]
ev = [prepare_show(s, CRITERION, model, hmm, efm, btree) for s in eval_c.shows]
print(f"[{time.time()-t0:5.1f}s] prepared")
FINE = [1e-12, 1e-9, 1e-7, 1e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0]
MCW = [0.5, 1.0, 2.0]
cfg = {}
cfg[LM_ONLY] = tune(dev, LM_ONLY, {"tsp": FINE}, hc)
print(f"[{time.time()-t0:5.1f}s] lm tuned {cfg[LM_ONLY].params}")
cfg[PM_ONLY] = tune(dev, PM_ONLY, {"tsp": FINE, "mcw": MCW}, hc)
print(f"[{time.time()-t0:5.1f}s] pm tuned {cfg[PM_ONLY].params}")
cfg[CM_HMM] = tune(dev, CM_HMM, {"tsp": FINE, "mcw": MCW}, hc)
print(f"[{time.time()-t0:5.1f}s] cm-hmm tuned {cfg[CM_HMM].params}")
lm_tsp = cfg[LM_ONLY].params.tsp
aug = []
for p in trainp:
    for vec, lab in zip(augment_show_vectors(p, hmm, lm_tsp), p.ref_labels):
        aug.append(type(vec)(vec.show_id, vec.boundary_index, vec.features, "topic" if lab else "nontopic"))
ct = train(aug, TreeTrainConfig(min_leaf=5, cv_folds=5, downsample=False, seed=SEED))
cfg[CM_DT] = tune(
    dev, CM_DT, {"tsp": [lm_tsp], "threshold": [i / 20 for i in range(1, 20)]}, hc, cm_dt_tree=ct
)
print(f"[{time.time()-t0:5.1f}s] cm-dt tuned {cfg[CM_DT].params}")
ec = EvalConfig()
rates = {}
for mode in (LM_ONLY, PM_ONLY, CM_DT, CM_HMM):
    c = cfg[mode]
    hyps = []
    for p in ev:
        pr = c.for_source(p.source_type)
        h = SegmentationHmm(HmmConfig(tsp=pr.tsp, n_clusters=100, use_begin_end=True, mcw=pr.mcw))
        hyps.append(decode_show(p, mode, pr, h, ct, True, with_posterior=False))
    refs = {p.show_id: p.ref_word_segmentation() for p in ev}
    hs = {p.show_id: p.hyp_word_segmentation(h.decisions) for p, h in zip(ev, hyps)}
    pm, pf = word_based(refs, hs, ec.k)
    rates[mode] = (pm, pf, c_seg(pm, pf, ec))
    print(
        f"{mode:7s} tuned=({cfg[mode].params.tsp:g},{cfg[mode].params.mcw:g},{cfg[mode].params.threshold:g}) "
        f"p_miss={pm:.4f} p_fa={pf:.4f} c_seg={rates[mode][2]:.4f}"
    )
print(f"[{time.time()-t0:5.1f}s]")
print("all beat chance:", all(c < 0.3 for _, _, c in rates.values()))
print("cm-hmm<=min:", rates[CM_HMM][2] <= min(rates[LM_ONLY][2], rates[PM_ONLY][2]))
print("ordering:", rates[CM_HMM][2] < rates[PM_ONLY][2] < rates[LM_ONLY][2])
print(
    "pm fa>lm fa:",
    rates[PM_ONLY][1] > rates[LM_ONLY][1],
    " lm miss>pm miss:",
    rates[LM_ONLY][0] > rates[PM_ONLY][0],
)
