"""Binary decision trees estimating P(topic boundary | features).

Growth is greedy entropy-gain splitting (numeric thresholds at midpoints of
sorted observed values, categorical subset questions); each internal node
learns a missing-value branch (the child holding more present training
examples, ties left). Pruning is cost-complexity with the penalty chosen by
cross-validation. Leaf posteriors are raw class fractions, so on a
class-balanced training set the posterior ratio at a leaf equals the
class-conditional likelihood ratio.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import BoundaryFeatureVector, FeatureSchema, infer_schema
from .errors import ValidationError

log = logging.getLogger(__name__)

_POSTERIOR_FLOOR = 1e-12  # only for log-loss evaluation, never stored
_SUBSET_ENUM_MAX = 8  # categorical cardinality up to which all subsets are tried


@dataclass(frozen=True)
class TreeTrainConfig:
    min_leaf: int = 5
    cv_folds: int = 5
    max_depth: int | None = None
    downsample: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.min_leaf < 1:
            raise ValidationError("min_leaf must be >= 1")
        if self.cv_folds < 2:
            raise ValidationError("cv_folds must be >= 2")


@dataclass
class TreeNode:
    n_yes: int
    n_no: int
    feature: str | None = None
    kind: str | None = None  # numeric | categorical
    threshold: float | None = None
    subset: frozenset | None = None
    missing_left: bool = True
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def total(self) -> int:
        return self.n_yes + self.n_no

    @property
    def posterior(self) -> float:
        return self.n_yes / self.total if self.total else 0.5

    def goes_left(self, value) -> bool:
        if value is None:
            return self.missing_left
        if self.kind == "numeric":
            return value <= self.threshold
        return value in self.subset


@dataclass
class DecisionTree:
    root: TreeNode
    schema: dict  # feature name -> numeric | categorical
    prior_yes: int
    prior_no: int
    balanced: bool
    cv_alphas: tuple[float, ...] = ()
    cv_errors: tuple[float, ...] = ()
    chosen_alpha: float = 0.0

    def n_leaves(self) -> int:
        return _count_leaves(self.root)

    def depth(self) -> int:
        return _depth(self.root)


def _count_leaves(node: TreeNode) -> int:
    if node.is_leaf:
        return 1
    return _count_leaves(node.left) + _count_leaves(node.right)


def _depth(node: TreeNode) -> int:
    if node.is_leaf:
        return 0
    return 1 + max(_depth(node.left), _depth(node.right))


def _canonical(data: list[BoundaryFeatureVector]) -> list[BoundaryFeatureVector]:
    return sorted(data, key=lambda v: (v.show_id, v.boundary_index))


def _labels(data: list[BoundaryFeatureVector]) -> np.ndarray:
    out = np.zeros(len(data), dtype=bool)
    for i, vec in enumerate(data):
        if vec.label not in ("topic", "nontopic"):
            raise ValidationError(f"vector {vec.key()} is unlabeled")
        out[i] = vec.label == "topic"
    return out


def downsample(data: list[BoundaryFeatureVector], seed: int) -> list[BoundaryFeatureVector]:
    """Subsample the majority class (without replacement) to equalize priors."""
    data = _canonical(data)
    y = _labels(data)
    yes = [v for v, t in zip(data, y) if t]
    no = [v for v, t in zip(data, y) if not t]
    if not yes or not no:
        raise ValidationError("downsampling needs both classes present")
    if len(yes) == len(no):
        return data
    minority, majority = (yes, no) if len(yes) < len(no) else (no, yes)
    rng = np.random.default_rng([seed, 0])
    keep = rng.choice(len(majority), size=len(minority), replace=False)
    sampled = [majority[i] for i in sorted(keep)]
    return _canonical(minority + sampled)


class _Table:
    """Columnar view of the training vectors."""

    def __init__(self, data: list[BoundaryFeatureVector], schema: dict):
        self.schema = schema
        self.names = sorted(schema)
        self.y = _labels(data)
        self.columns: dict = {}
        for name in self.names:
            if schema[name] == "numeric":
                col = np.full(len(data), np.nan)
                for i, vec in enumerate(data):
                    value = vec.features.get(name)
                    if value is not None:
                        col[i] = float(value)
            else:
                col = np.array([vec.features.get(name) for vec in data], dtype=object)
            self.columns[name] = col


def _impurity(yes: np.ndarray, total: np.ndarray) -> np.ndarray:
    """total * binary entropy in nats; zero-count terms contribute 0."""
    yes = np.asarray(yes, dtype=float)
    total = np.asarray(total, dtype=float)
    no = total - yes
    with np.errstate(divide="ignore", invalid="ignore"):
        part_y = np.where(yes > 0, yes * np.log(total / yes), 0.0)
        part_n = np.where(no > 0, no * np.log(total / no), 0.0)
    return part_y + part_n


@dataclass
class _Split:
    gain: float
    feature: str
    kind: str
    threshold: float | None
    subset: frozenset | None
    missing_left: bool


def _numeric_candidates(x, y, min_leaf, parent_impurity):
    present = ~np.isnan(x)
    xm, ym = x[present], y[present]
    n_miss = int(np.sum(~present))
    miss_yes = int(np.sum(y[~present]))
    m = len(xm)
    if m < 2:
        return None
    order = np.argsort(xm, kind="stable")
    xs, ys = xm[order], ym[order]
    distinct = np.nonzero(xs[1:] > xs[:-1])[0] + 1
    if len(distinct) == 0:
        return None
    cum_yes = np.cumsum(ys)
    total_yes = int(cum_yes[-1]) + miss_yes
    n_total = m + n_miss

    s = distinct
    miss_left = s >= (m - s)
    left_tot = s + np.where(miss_left, n_miss, 0)
    left_yes = cum_yes[s - 1] + np.where(miss_left, miss_yes, 0)
    right_tot = n_total - left_tot
    right_yes = total_yes - left_yes
    valid = (left_tot >= min_leaf) & (right_tot >= min_leaf)
    if not np.any(valid):
        return None
    gain = parent_impurity - _impurity(left_yes, left_tot) - _impurity(right_yes, right_tot)
    gain[~valid] = -np.inf
    best = int(np.argmax(gain))
    if gain[best] <= 0:
        return None
    cut = s[best]
    return _Split(
        gain=float(gain[best]),
        feature="",
        kind="numeric",
        threshold=0.5 * (xs[cut - 1] + xs[cut]),
        subset=None,
        missing_left=bool(miss_left[best]),
    )


def _categorical_candidates(col, y, min_leaf, parent_impurity):
    present = np.array([v is not None for v in col])
    n_miss = int(np.sum(~present))
    miss_yes = int(np.sum(y[~present]))
    values = col[present]
    ym = y[present]
    cats = sorted(set(values))
    if len(cats) < 2:
        return None
    cat_tot = {c: 0 for c in cats}
    cat_yes = {c: 0 for c in cats}
    for v, t in zip(values, ym):
        cat_tot[v] += 1
        cat_yes[v] += int(t)
    m = len(values)
    n_total = m + n_miss
    total_yes = int(np.sum(ym)) + miss_yes

    if len(cats) <= _SUBSET_ENUM_MAX:
        # fix the first category on the left to avoid mirrored duplicates
        rest = cats[1:]
        subsets = []
        for mask in range(1 << len(rest)):
            subset = [cats[0]] + [c for b, c in enumerate(rest) if mask >> b & 1]
            if len(subset) < len(cats):
                subsets.append(subset)
    else:
        by_rate = sorted(cats, key=lambda c: (cat_yes[c] / cat_tot[c], c))
        subsets = [by_rate[: i + 1] for i in range(len(by_rate) - 1)]

    best = None
    for subset in subsets:
        left_p = sum(cat_tot[c] for c in subset)
        left_y = sum(cat_yes[c] for c in subset)
        miss_left = left_p >= m - left_p
        left_tot = left_p + (n_miss if miss_left else 0)
        left_yes = left_y + (miss_yes if miss_left else 0)
        right_tot = n_total - left_tot
        right_yes = total_yes - left_yes
        if left_tot < min_leaf or right_tot < min_leaf:
            continue
        gain = float(parent_impurity - _impurity(left_yes, left_tot) - _impurity(right_yes, right_tot))
        if gain > 0 and (best is None or gain > best.gain):
            best = _Split(gain, "", "categorical", None, frozenset(subset), miss_left)
    return best


def _best_split(table: _Table, idx: np.ndarray, min_leaf: int) -> _Split | None:
    y = table.y[idx]
    n_yes = int(np.sum(y))
    parent = float(_impurity(n_yes, len(idx)))
    best = None
    for name in table.names:
        col = table.columns[name][idx]
        if table.schema[name] == "numeric":
            cand = _numeric_candidates(col, y, min_leaf, parent)
        else:
            cand = _categorical_candidates(col, y, min_leaf, parent)
        if cand is None:
            continue
        cand.feature = name
        if best is None or cand.gain > best.gain:
            best = cand
    return best


def _route(table: _Table, idx: np.ndarray, split: _Split) -> tuple[np.ndarray, np.ndarray]:
    col = table.columns[split.feature][idx]
    if split.kind == "numeric":
        present = ~np.isnan(col)
        left = np.where(present, col <= (split.threshold if split.threshold is not None else 0), False)
    else:
        present = np.array([v is not None for v in col])
        left = np.array([v in split.subset if v is not None else False for v in col])
    left = np.where(present, left, split.missing_left)
    return idx[left], idx[~left]


def _grow(table: _Table, idx: np.ndarray, config: TreeTrainConfig, depth: int) -> TreeNode:
    y = table.y[idx]
    node = TreeNode(n_yes=int(np.sum(y)), n_no=int(len(y) - np.sum(y)))
    if node.n_yes == 0 or node.n_no == 0 or len(idx) < 2 * config.min_leaf:
        return node
    if config.max_depth is not None and depth >= config.max_depth:
        return node
    split = _best_split(table, idx, config.min_leaf)
    if split is None:
        return node
    node.feature = split.feature
    node.kind = split.kind
    node.threshold = split.threshold
    node.subset = split.subset
    node.missing_left = split.missing_left
    left_idx, right_idx = _route(table, idx, split)
    node.left = _grow(table, left_idx, config, depth + 1)
    node.right = _grow(table, right_idx, config, depth + 1)
    return node


def _leaf_error(node: TreeNode) -> int:
    return min(node.n_yes, node.n_no)


def _subtree_error(node: TreeNode) -> int:
    if node.is_leaf:
        return _leaf_error(node)
    return _subtree_error(node.left) + _subtree_error(node.right)


def _weakest_alphas(root: TreeNode) -> list[float]:
    """Penalty values at which cost-complexity pruning collapses nodes."""
    node = _copy_tree(root)
    alphas = []
    floor = 0.0
    while not node.is_leaf:
        best = [math.inf, None]

        def visit(t):
            if t.is_leaf:
                return
            g = (_leaf_error(t) - _subtree_error(t)) / (_count_leaves(t) - 1)
            if g < best[0]:
                best[0], best[1] = g, t
            visit(t.left)
            visit(t.right)

        visit(node)
        floor = max(floor, best[0])
        alphas.append(floor)
        target = best[1]
        target.feature = target.kind = target.threshold = target.subset = None
        target.left = target.right = None
    return alphas


def _copy_tree(node: TreeNode) -> TreeNode:
    out = TreeNode(
        n_yes=node.n_yes,
        n_no=node.n_no,
        feature=node.feature,
        kind=node.kind,
        threshold=node.threshold,
        subset=node.subset,
        missing_left=node.missing_left,
    )
    if not node.is_leaf:
        out.left = _copy_tree(node.left)
        out.right = _copy_tree(node.right)
    return out


def _prune_at(node: TreeNode, alpha: float) -> tuple[float, TreeNode]:
    """Optimal pruned subtree minimizing training error + alpha * leaves."""
    as_leaf_cost = _leaf_error(node) + alpha
    leaf = TreeNode(n_yes=node.n_yes, n_no=node.n_no)
    if node.is_leaf:
        return as_leaf_cost, leaf
    cost_l, left = _prune_at(node.left, alpha)
    cost_r, right = _prune_at(node.right, alpha)
    kept_cost = cost_l + cost_r
    if as_leaf_cost <= kept_cost:
        return as_leaf_cost, leaf
    out = _copy_tree(node)
    out.left, out.right = left, right
    return kept_cost, out


def _predict_node(node: TreeNode, features: dict) -> TreeNode:
    while not node.is_leaf:
        node = node.left if node.goes_left(features.get(node.feature)) else node.right
    return node


def _misclassified(node: TreeNode, table: _Table, idx: np.ndarray) -> int:
    errors = 0
    for i in idx:
        t = node
        while not t.is_leaf:
            t = t.left if t.goes_left(_cell(table, t.feature, i)) else t.right
        errors += int((t.posterior > 0.5) != table.y[i])
    return errors


def _cell(table: _Table, name: str, i: int):
    value = table.columns[name][i]
    if table.schema[name] == "numeric":
        return None if np.isnan(value) else float(value)
    return value


def train(
    data: list[BoundaryFeatureVector],
    config: TreeTrainConfig = TreeTrainConfig(),
    schema: FeatureSchema | None = None,
) -> DecisionTree:
    """Grow and cv-prune a tree; training is invariant to example order."""
    if len(data) < 2:
        raise ValidationError("need at least 2 training examples")
    data = _canonical(data)
    if config.downsample:
        data = downsample(data, config.seed)
    kinds = dict(schema.kinds) if schema is not None else dict(infer_schema(data).kinds)
    table = _Table(data, kinds)
    n = len(data)
    all_idx = np.arange(n)

    root = _grow(table, all_idx, config, depth=0)
    prior_yes, prior_no = root.n_yes, root.n_no

    cv_alphas: tuple[float, ...] = ()
    cv_errors: tuple[float, ...] = ()
    chosen = 0.0
    if not root.is_leaf:
        alphas = sorted(set(_weakest_alphas(root)))
        candidates = [0.0]
        for a, b in zip(alphas, alphas[1:]):
            candidates.append(math.sqrt(a * b) if a > 0 else 0.5 * b)
        candidates.append(2.0 * alphas[-1] if alphas[-1] > 0 else 1.0)

        folds = min(config.cv_folds, n)
        rng = np.random.default_rng([config.seed, 1])
        perm = rng.permutation(n)
        totals = np.zeros(len(candidates))
        for f in range(folds):
            val_idx = perm[f::folds]
            train_idx = np.setdiff1d(perm, val_idx)
            if len(train_idx) == 0:
                continue
            fold_root = _grow(table, np.sort(train_idx), config, depth=0)
            for ci, alpha in enumerate(candidates):
                _, pruned = _prune_at(fold_root, alpha)
                totals[ci] += _misclassified(pruned, table, val_idx)
        # ties prefer the larger penalty, i.e. the smaller tree
        best_error = totals.min()
        chosen = max(a for a, e in zip(candidates, totals) if e == best_error)
        _, root = _prune_at(root, chosen)
        cv_alphas, cv_errors = tuple(candidates), tuple(float(t) for t in totals)

    return DecisionTree(
        root=root,
        schema=kinds,
        prior_yes=prior_yes,
        prior_no=prior_no,
        balanced=config.downsample,
        cv_alphas=cv_alphas,
        cv_errors=cv_errors,
        chosen_alpha=chosen,
    )


def predict(tree: DecisionTree, vector: BoundaryFeatureVector, schema: FeatureSchema | None = None) -> float:
    """Posterior P(topic) for one vector by root-to-leaf descent."""
    if schema is not None:
        node_features = _tree_features(tree.root)
        for name in node_features:
            if schema.kind_of(name) is None:
                raise ValidationError(f"tree queries feature {name!r} absent from schema")
    node = tree.root
    while not node.is_leaf:
        if node.feature not in tree.schema:
            raise ValidationError(f"tree queries feature {node.feature!r} absent from schema")
        node = node.left if node.goes_left(vector.features.get(node.feature)) else node.right
    return node.posterior


def _tree_features(node: TreeNode, out=None) -> set:
    if out is None:
        out = set()
    if not node.is_leaf:
        out.add(node.feature)
        _tree_features(node.left, out)
        _tree_features(node.right, out)
    return out


def entropy_reduction(tree: DecisionTree, heldout: list[BoundaryFeatureVector]) -> float:
    """Held-out prior entropy minus mean posterior cross-entropy, in bits."""
    if not heldout:
        raise ValidationError("held-out set is empty")
    y = _labels(_canonical(heldout))
    data = _canonical(heldout)
    p_prior = float(np.mean(y))
    prior_entropy = _bits(p_prior)
    ce = 0.0
    for vec, truth in zip(data, y):
        p = predict(tree, vec)
        p_true = p if truth else 1.0 - p
        ce -= math.log2(max(p_true, _POSTERIOR_FLOOR))
    return prior_entropy - ce / len(data)


def _bits(p: float) -> float:
    total = 0.0
    for q in (p, 1.0 - p):
        if q > 0:
            total -= q * math.log2(q)
    return total


def _restrict(data: list[BoundaryFeatureVector], subset) -> list[BoundaryFeatureVector]:
    keep = set(subset)
    return [
        BoundaryFeatureVector(
            v.show_id, v.boundary_index, {k: x for k, x in v.features.items() if k in keep}, v.label
        )
        for v in data
    ]


@dataclass
class SelectionStep:
    phase: int
    subset: tuple[str, ...]
    score: float


@dataclass
class SelectionResult:
    selected: tuple[str, ...]
    trace: list[SelectionStep] = field(default_factory=list)


def select_features(
    data: list[BoundaryFeatureVector],
    heldout: list[BoundaryFeatureVector],
    beam_width: int = 5,
    config: TreeTrainConfig = TreeTrainConfig(),
) -> SelectionResult:
    """Two-phase wrapper selection scored by held-out entropy reduction.

    Phase 1 drops any feature whose removal from the full set strictly
    improves the score. Phase 2 beam-searches subsets of the survivors,
    growing from singletons while any expansion strictly improves on the
    best subset seen; ties prefer smaller subsets, then name order.
    """
    features = sorted({name for v in data for name in v.features})
    if not features:
        raise ValidationError("no features to select from")
    result = SelectionResult(selected=())

    def score(subset) -> float:
        tree = train(_restrict(data, subset), config)
        return entropy_reduction(tree, heldout)

    if len(features) == 1:
        only = (features[0],)
        result.trace.append(SelectionStep(2, only, score(only)))
        result.selected = only
        return result

    base = score(features)
    result.trace.append(SelectionStep(1, tuple(features), base))
    avoided = []
    for name in features:
        rest = [f for f in features if f != name]
        s = score(rest)
        result.trace.append(SelectionStep(1, tuple(rest), s))
        if s > base:
            avoided.append(name)
    survivors = [f for f in features if f not in avoided]
    if not survivors:
        log.info("phase 1 avoided every feature; searching the full set instead")
        survivors = features

    def better(a: tuple[float, tuple], b: tuple[float, tuple]) -> bool:
        if a[0] != b[0]:
            return a[0] > b[0]
        if len(a[1]) != len(b[1]):
            return len(a[1]) < len(b[1])
        return tuple(sorted(a[1])) < tuple(sorted(b[1]))

    best: tuple[float, tuple] | None = None
    if len(survivors) > 1:
        full = tuple(survivors)
        s = score(full)
        result.trace.append(SelectionStep(2, full, s))
        best = (s, full)

    beam: list[tuple[str, ...]] = [()]
    while True:
        expansions = []
        seen = set()
        for subset in beam:
            for name in survivors:
                if name in subset:
                    continue
                cand = tuple(sorted(subset + (name,)))
                if cand in seen:
                    continue
                seen.add(cand)
                s = score(cand)
                result.trace.append(SelectionStep(2, cand, s))
                expansions.append((s, cand))
        if not expansions:
            break
        expansions.sort(key=lambda item: (-item[0], len(item[1]), item[1]))
        top = expansions[0]
        improved = best is None or better(top, best)
        if improved:
            best = top
        if not improved or len(top[1]) == len(survivors):
            break
        beam = [subset for _, subset in expansions[:beam_width]]

    result.selected = tuple(sorted(best[1]))
    return result


def feature_usage(
    tree: DecisionTree, heldout: list[BoundaryFeatureVector], groups: dict | None = None
) -> dict:
    """Fraction of node queries attributable to each feature group over a
    held-out traversal; a root-only tree yields an empty map."""
    if not heldout:
        raise ValidationError("held-out set is empty")
    counts: dict = {}
    total = 0
    for vec in heldout:
        node = tree.root
        while not node.is_leaf:
            group = groups.get(node.feature, node.feature) if groups else node.feature
            counts[group] = counts.get(group, 0) + 1
            total += 1
            node = node.left if node.goes_left(vec.features.get(node.feature)) else node.right
    return {g: c / total for g, c in sorted(counts.items())}


TREE_FORMAT = "topicseg-tree"
TREE_VERSION = 1


def _node_to_dict(node: TreeNode) -> dict:
    doc = {"n_yes": node.n_yes, "n_no": node.n_no}
    if not node.is_leaf:
        doc.update(
            feature=node.feature,
            kind=node.kind,
            threshold=node.threshold,
            subset=sorted(node.subset) if node.subset is not None else None,
            missing_left=node.missing_left,
            left=_node_to_dict(node.left),
            right=_node_to_dict(node.right),
        )
    else:
        doc["posterior"] = node.posterior
    return doc


def _node_from_dict(doc: dict) -> TreeNode:
    node = TreeNode(n_yes=doc["n_yes"], n_no=doc["n_no"])
    if "feature" in doc:
        node.feature = doc["feature"]
        node.kind = doc["kind"]
        node.threshold = doc["threshold"]
        node.subset = frozenset(doc["subset"]) if doc["subset"] is not None else None
        node.missing_left = doc["missing_left"]
        node.left = _node_from_dict(doc["left"])
        node.right = _node_from_dict(doc["right"])
    return node


def save_tree(tree: DecisionTree, path: str) -> None:
    doc = {
        "format": TREE_FORMAT,
        "version": TREE_VERSION,
        "schema": tree.schema,
        "prior_yes": tree.prior_yes,
        "prior_no": tree.prior_no,
        "balanced": tree.balanced,
        "chosen_alpha": tree.chosen_alpha,
        "root": _node_to_dict(tree.root),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_tree(path: str) -> DecisionTree:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != TREE_FORMAT or doc.get("version") != TREE_VERSION:
        raise ValidationError(f"unsupported tree document in {path}")
    return DecisionTree(
        root=_node_from_dict(doc["root"]),
        schema=dict(doc["schema"]),
        prior_yes=doc["prior_yes"],
        prior_no=doc["prior_no"],
        balanced=doc["balanced"],
        chosen_alpha=doc["chosen_alpha"],
    )
