"""Ground-truth functions and planted knowledge bases for verification.

:func:`brute_force_fanova` decomposes any function of the unit cube by plain
averaging over a midpoint grid. It shares no code with the tree-based
decomposition and serves as its oracle.

Planted knowledge bases are described by a JSON document::

    {
      "n_samples": 500,
      "algorithms": [
        {
          "name": "adaboost",            # built-in space or key of "spaces"
          "datasets": 20,                # count or list of ids
          "offset": 0.75,                # baseline score
          "scale": 0.2,                  # peak-to-peak effect size
          "noise": 0.01,                 # Gaussian noise sd
          "dataset_jitter": 0.05,        # sd of the per-dataset baseline shift
          "terms": [
            {"hyperparameters": ["learning_rate"], "shape": "linear", "weight": 1.0},
            {"hyperparameters": ["max_depth", "learning_rate"], "shape": "product", "weight": 0.3}
          ]
        }
      ],
      "spaces": {}                       # optional inline space documents
    }

Term shapes act on unit-cube coordinates ``u`` (categorical dimensions are
quantised to their cell midpoints): ``linear`` u, ``decreasing`` 1-u,
``quadratic`` u**2, ``peak`` 1-4(u-0.5)**2, ``step`` [u > 0.5],
``product`` prod(u). An algorithm without terms is flat.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .config_space import ConfigurationSpace, builtin_space
from .forest import RegressionTree
from .perfdata import KnowledgeBase, PerformanceRecord, PerformanceTable, build_knowledge_base

MAX_ORACLE_DIMENSION = 4
MIN_GRID_RESOLUTION = 20


@dataclass(frozen=True)
class GroundTruthFunction:
    """A bounded function on ``[0, 1] ** dimension`` evaluated row-wise."""

    dimension: int
    evaluator: Callable[[np.ndarray], np.ndarray]
    description: str = ""

    def __call__(self, U) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return np.asarray(self.evaluator(U), dtype=float).reshape(len(U))


@dataclass
class OracleDecomposition:
    fractions: dict[tuple[int, ...], float]
    variances: dict[tuple[int, ...], float]
    total_variance: float
    mean: float
    grid_resolution: int
    degenerate: bool


def brute_force_fanova(f: GroundTruthFunction, grid_resolution: int = 100) -> OracleDecomposition:
    """Decompose ``f`` by exhaustive averaging over a midpoint grid."""
    n = f.dimension
    r = int(grid_resolution)
    if not 1 <= n <= MAX_ORACLE_DIMENSION:
        raise ValueError(f"oracle supports 1..{MAX_ORACLE_DIMENSION} dimensions, got {n}")
    if r < MIN_GRID_RESOLUTION:
        raise ValueError(f"grid_resolution must be >= {MIN_GRID_RESOLUTION}")
    axis = (np.arange(r) + 0.5) / r
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    values = f(points).reshape((r,) * n)
    mean = float(values.mean())
    total = float(np.mean((values - mean) ** 2))
    comps: dict[tuple[int, ...], np.ndarray] = {(): np.full((1,) * n, mean)}
    variances: dict[tuple[int, ...], float] = {}
    for k in range(1, n + 1):
        for u in itertools.combinations(range(n), k):
            others = tuple(d for d in range(n) if d not in u)
            comp = values.mean(axis=others, keepdims=True) if others else values.copy()
            for j in range(k):
                for w in itertools.combinations(u, j):
                    comp = comp - comps[w]
            comps[u] = comp
            variances[u] = float(np.mean(comp ** 2))
    degenerate = total <= 1e-15 * max(1.0, mean * mean)
    fractions = {u: (0.0 if degenerate else v / total) for u, v in variances.items()}
    return OracleDecomposition(fractions, variances, total, mean, r, degenerate)


def tree_function(tree: RegressionTree) -> GroundTruthFunction:
    """The function computed by ``tree`` (numeric dimensions only)."""
    if any(tree.cardinalities):
        raise ValueError("tree_function only supports numeric trees")
    return GroundTruthFunction(tree.n_features, tree.predict, "regression tree")


def random_tree(n_dims: int, n_leaves: int, seed: int | np.random.Generator = 0,
                cardinalities: Sequence[int] | None = None,
                threshold_lattice: int | None = None) -> RegressionTree:
    """Random axis-aligned tree: repeatedly split a random leaf.

    Numeric thresholds are uniform inside the leaf's interval on the chosen
    dimension, or uniform over the interior multiples of
    ``1 / threshold_lattice`` when that is given (so a midpoint grid whose
    resolution is a multiple of the lattice integrates the tree exactly).
    Categorical splits send a random nonempty proper subset of the leaf's
    categories left. Leaf values are uniform on ``[0, 1]``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    card = tuple(cardinalities) if cardinalities is not None else (0,) * n_dims
    feature, threshold, left_mask, left, right = [-1], [0.0], [0], [-1], [-1]
    full = [(1 << k) - 1 if k else 0 for k in card]
    boxes = {0: (np.zeros(n_dims), np.ones(n_dims), list(full))}
    leaves = [0]
    while len(leaves) < n_leaves:
        node = leaves[int(rng.integers(len(leaves)))]
        lo, hi, mask = boxes[node]
        min_width = 1.5 / threshold_lattice if threshold_lattice else 1e-3
        splittable = [d for d in range(n_dims)
                      if (card[d] and bin(mask[d]).count("1") > 1)
                      or (not card[d] and hi[d] - lo[d] > min_width)]
        if not splittable:
            if all(not splittable_leaf(boxes[l], card, min_width) for l in leaves):
                break
            continue
        d = splittable[int(rng.integers(len(splittable)))]
        l_box = (lo.copy(), hi.copy(), list(mask))
        r_box = (lo.copy(), hi.copy(), list(mask))
        if card[d]:
            members = [c for c in range(card[d]) if (mask[d] >> c) & 1]
            rng.shuffle(members)
            cut = int(rng.integers(1, len(members)))
            lm = sum(1 << c for c in members[:cut])
            left_mask[node] = lm
            l_box[2][d] = mask[d] & lm
            r_box[2][d] = mask[d] & ~lm
        elif threshold_lattice:
            q = threshold_lattice
            steps = np.arange(int(round(lo[d] * q)) + 1, int(round(hi[d] * q)))
            t = float(rng.choice(steps)) / q
        else:
            t = float(rng.uniform(lo[d] + 0.1 * (hi[d] - lo[d]), hi[d] - 0.1 * (hi[d] - lo[d])))
        if not card[d]:
            threshold[node] = t
            l_box[1][d] = t
            r_box[0][d] = t
        feature[node] = d
        ids = []
        for box in (l_box, r_box):
            feature.append(-1)
            threshold.append(0.0)
            left_mask.append(0)
            left.append(-1)
            right.append(-1)
            ids.append(len(feature) - 1)
            boxes[ids[-1]] = box
        left[node], right[node] = ids
        leaves.remove(node)
        leaves.extend(ids)
    value = rng.uniform(0.0, 1.0, size=len(feature))
    return RegressionTree(feature, threshold, left_mask, left, right, value, None, card)


def splittable_leaf(box, card, min_width: float = 1e-3) -> bool:
    lo, hi, mask = box
    return any((k and bin(mask[d]).count("1") > 1) or (not k and hi[d] - lo[d] > min_width)
               for d, k in enumerate(card))


def generate_table(f: GroundTruthFunction, space: ConfigurationSpace, n_samples: int,
                   noise_sd: float, seed: int, dataset: str = "d0") -> PerformanceTable:
    """Uniform configurations scored by ``f`` plus clamped Gaussian noise."""
    if f.dimension != len(space):
        raise ValueError(f"function has {f.dimension} dims, space has {len(space)}")
    rng = np.random.default_rng(seed)
    X = space.sample_internal(n_samples, int(rng.integers(2**63 - 1)))
    scores = f(space.to_unit_cube(X))
    if noise_sd > 0:
        scores = scores + rng.normal(0.0, noise_sd, size=len(scores))
    scores = np.clip(scores, 0.0, 1.0)
    records = tuple(
        PerformanceRecord(space.algorithm, dataset, space.from_internal(x), float(s), i + 1)
        for i, (x, s) in enumerate(zip(X, scores))
    )
    return PerformanceTable(space.algorithm, dataset, records)


# ---------------------------------------------------------------------------
# planted knowledge bases

_SHAPES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "linear": lambda u: u,
    "decreasing": lambda u: 1.0 - u,
    "quadratic": lambda u: u ** 2,
    "peak": lambda u: 1.0 - 4.0 * (u - 0.5) ** 2,
    "step": lambda u: (u > 0.5).astype(float),
}


class SynthSpecError(ValueError):
    pass


@dataclass
class PlantedAlgorithm:
    name: str
    space: ConfigurationSpace
    datasets: list[str]
    terms: list[dict]
    offset: float = 0.75
    scale: float = 0.2
    noise: float = 0.01
    dataset_jitter: float = 0.0
    term_jitter: float = 0.0

    def shape_function(self, weights: Sequence[float] | None = None) -> GroundTruthFunction:
        """Normalised response ``in [0, 1]`` on the unit cube (before offset/scale)."""
        card = self.space.cardinalities
        terms = []
        for i, t in enumerate(self.terms):
            dims = [self.space.index(h) for h in t["hyperparameters"]]
            shape = t.get("shape", "linear" if len(dims) == 1 else "product")
            if shape != "product" and shape not in _SHAPES:
                raise SynthSpecError(f"unknown term shape {shape!r}")
            if shape != "product" and len(dims) != 1:
                raise SynthSpecError(f"shape {shape!r} takes a single hyperparameter")
            w = float(t.get("weight", 1.0)) if weights is None else float(weights[i])
            terms.append((dims, shape, w))
        total_weight = sum(abs(w) for _, _, w in terms) or 1.0

        def quantise(u, d):
            k = card[d]
            if not k:
                return u
            return (np.minimum(np.floor(u * k), k - 1) + 0.5) / k

        def evaluate(U):
            out = np.zeros(len(U))
            for dims, shape, w in terms:
                cols = [quantise(U[:, d], d) for d in dims]
                if shape == "product":
                    g = np.prod(cols, axis=0)
                else:
                    g = _SHAPES[shape](cols[0])
                out += w * g
            return out / total_weight

        return GroundTruthFunction(len(self.space), evaluate, f"{self.name} planted response")

    def active_dims(self) -> list[int]:
        return sorted({self.space.index(h) for t in self.terms for h in t["hyperparameters"]})


@dataclass
class PlantedKnowledgeBase:
    kb: KnowledgeBase
    algorithms: list[PlantedAlgorithm]
    seed: int
    n_samples: int
    truth: dict = field(default_factory=dict)


def parse_planted_spec(spec: Mapping) -> tuple[list[PlantedAlgorithm], int]:
    if "algorithms" not in spec or not spec["algorithms"]:
        raise SynthSpecError("spec needs a non-empty 'algorithms' list")
    inline = {name: ConfigurationSpace.from_dict(doc) for name, doc in (spec.get("spaces") or {}).items()}
    n_samples = int(spec.get("n_samples", 500))
    if n_samples < 2:
        raise SynthSpecError("n_samples must be >= 2")
    out = []
    for a in spec["algorithms"]:
        name = a["name"]
        space = inline.get(a.get("space", name)) or builtin_space(a.get("space", name))
        ds = a.get("datasets", 1)
        datasets = [f"d{i:03d}" for i in range(int(ds))] if isinstance(ds, int) else [str(d) for d in ds]
        if not datasets:
            raise SynthSpecError(f"{name}: no datasets")
        terms = list(a.get("terms") or [])
        for t in terms:
            for h in t.get("hyperparameters", []):
                space.index(h)
        out.append(PlantedAlgorithm(
            name=name, space=space if space.algorithm == name else
            ConfigurationSpace(name, space.domains),
            datasets=datasets, terms=terms,
            offset=float(a.get("offset", 0.75)), scale=float(a.get("scale", 0.2)),
            noise=float(a.get("noise", 0.01)),
            dataset_jitter=float(a.get("dataset_jitter", 0.0)),
            term_jitter=float(a.get("term_jitter", 0.0)),
        ))
    names = [p.name for p in out]
    if len(set(names)) != len(names):
        raise SynthSpecError("algorithm names must be unique")
    return out, n_samples


def planted_truth(alg: PlantedAlgorithm, grid_resolution: int = 120) -> dict:
    """Variance fractions of the nominal planted response, by hyperparameter label."""
    active = alg.active_dims()
    if not active:
        return {"degenerate": True, "fractions": {}}
    if len(active) > MAX_ORACLE_DIMENSION:
        return {"degenerate": False, "fractions": None,
                "note": f"{len(active)} active hyperparameters exceed the oracle limit"}
    full = alg.shape_function()
    n = len(alg.space)

    def restricted(U):
        P = np.full((len(U), n), 0.5)
        P[:, active] = U
        return full(P)

    oracle = brute_force_fanova(GroundTruthFunction(len(active), restricted), grid_resolution)
    names = alg.space.names
    fractions = {
        "+".join(names[active[i]] for i in u): round(v, 6)
        for u, v in oracle.fractions.items()
    }
    return {"degenerate": oracle.degenerate, "fractions": fractions,
            "grid_resolution": grid_resolution}


def planted_kb(spec: Mapping, seed: int = 0, with_truth: bool = False):
    """Build a multi-dataset knowledge base with known structure.

    Dataset ``j`` of an algorithm scores ``offset + shift_j + scale * g(u) + noise``
    (clamped to ``[0, 1]``) where ``g`` is the normalised planted response.
    Returns the :class:`KnowledgeBase`, or a :class:`PlantedKnowledgeBase`
    with ground truth when ``with_truth`` is set.
    """
    algorithms, n_samples = parse_planted_spec(spec)
    rng = np.random.default_rng(seed)
    records: list[PerformanceRecord] = []
    for alg in algorithms:
        for ds in alg.datasets:
            shift = rng.normal(0.0, alg.dataset_jitter) if alg.dataset_jitter else 0.0
            weights = [float(t.get("weight", 1.0)) for t in alg.terms]
            if alg.term_jitter:
                weights = [w * math.exp(rng.normal(0.0, alg.term_jitter)) for w in weights]
            g = alg.shape_function(weights)
            f = GroundTruthFunction(
                g.dimension,
                lambda U, g=g, shift=shift, alg=alg: alg.offset + shift + alg.scale * g(U),
            )
            table = generate_table(f, alg.space, n_samples, alg.noise,
                                   int(rng.integers(2**63 - 1)), dataset=ds)
            records.extend(table.records)
    spaces = {a.name: a.space for a in algorithms}
    kb = build_knowledge_base(records, spaces)
    if not with_truth:
        return kb
    truth = {a.name: planted_truth(a) for a in algorithms}
    return PlantedKnowledgeBase(kb, algorithms, seed, n_samples, truth)


def load_planted_spec(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
