"""Construction of node bundles around randomly drawn core nodes.

Three member-selection criteria:

  topological  sample within the smallest BFS radius k whose neighborhood
               holds at least bundle_size - 1 candidates (adaptive hop)
  semantic     take the bundle_size - 1 nearest other nodes by Euclidean
               distance in the embedding space (ties -> lower index)
  random       uniform over all other nodes, ignoring proximity

Per-bundle randomness is derived from (seed, bundle id) so results do not
depend on evaluation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graphs import EmbeddingMatrix, Graph, hop_distances

CRITERIA = ("topological", "semantic", "random")

# rng stream tags so the same user seed never aliases across purposes
_STREAM_CORES = 0
_STREAM_MEMBERS = 1


class IsolatedCoreError(RuntimeError):
    """The chosen core node has no neighbors to sample from."""


class SamplingBudgetError(RuntimeError):
    """Core redraws ran out before all bundles were built."""

    def __init__(self, succeeded: int, requested: int, attempts: int):
        self.succeeded = succeeded
        super().__init__(
            f"exhausted {attempts} core redraws with {succeeded}/{requested} bundles built"
        )


@dataclass
class Bundle:
    """A core node plus proximate members, annotated with one class label."""

    id: int
    core: int
    members: list
    label: int | None = None
    evicted: list = field(default_factory=list)

    def __post_init__(self):
        evicted_nodes = {node for _, node in self.evicted}
        if self.core not in self.members and self.core not in evicted_nodes:
            raise ValueError("core must be a member of its own bundle")
        if len(set(self.members)) != len(self.members):
            raise ValueError("bundle members must be distinct")
        if len(self.members) < 2:
            raise ValueError("a bundle needs at least two members")


@dataclass(frozen=True)
class SamplingConfig:
    criterion: str = "topological"
    bundle_size: int = 5
    num_bundles: int = 100
    seed: int = 0
    max_resample_attempts: int = 100

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if self.bundle_size < 2:
            raise ValueError("bundle_size must be >= 2")
        if self.num_bundles < 1:
            raise ValueError("num_bundles must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def _hop_from_levels(levels: np.ndarray, bundle_size: int) -> tuple:
    reach = levels[levels > 0]
    need = bundle_size - 1
    if reach.size < need:
        return int(reach.max()), True
    cumulative = np.cumsum(np.bincount(reach))
    k = int(np.searchsorted(cumulative, need, side="left"))
    return k, False


def adaptive_hop(graph: Graph, core: int, bundle_size: int) -> tuple:
    """Smallest hop radius whose neighborhood can fill a bundle.

    Returns (k, saturated). `saturated` is set when the core's connected
    component runs out of nodes first; k is then the component's radius
    from the core.
    """
    if bundle_size < 2:
        raise ValueError("bundle_size must be >= 2")
    if graph.degree(core) == 0:
        raise IsolatedCoreError(f"node {core} has no neighbors")
    return _hop_from_levels(hop_distances(graph, core), bundle_size)


def sample_topological(
    graph: Graph, core: int, bundle_size: int, rng: np.random.Generator, bundle_id: int = 0
) -> Bundle:
    """Core plus a uniform sample from its adaptive-hop neighborhood."""
    if graph.degree(core) == 0:
        raise IsolatedCoreError(f"node {core} has no neighbors")
    levels = hop_distances(graph, core)
    k, _ = _hop_from_levels(levels, bundle_size)
    pool = np.flatnonzero((levels >= 1) & (levels <= k))
    take = min(bundle_size - 1, pool.size)
    chosen = rng.choice(pool, size=take, replace=False)
    return Bundle(id=bundle_id, core=int(core), members=[int(core)] + [int(v) for v in chosen])


def sample_semantic(
    embeddings: EmbeddingMatrix, core: int, bundle_size: int, bundle_id: int = 0
) -> Bundle:
    """Core plus its bundle_size - 1 nearest other nodes in embedding space."""
    x = embeddings.data
    n = x.shape[0]
    if n < bundle_size:
        raise ValueError(f"cannot build a bundle of {bundle_size} from {n} nodes")
    diff = x - x[core]
    dist2 = np.einsum("ij,ij->i", diff, diff)
    dist2[core] = np.inf
    order = np.lexsort((np.arange(n), dist2))
    chosen = order[: bundle_size - 1]
    return Bundle(id=bundle_id, core=int(core), members=[int(core)] + [int(v) for v in chosen])


def sample_uniform(
    n: int, core: int, bundle_size: int, rng: np.random.Generator, bundle_id: int = 0
) -> Bundle:
    """Proximity-blind variant: members drawn uniformly from all other nodes."""
    if n < 2:
        raise ValueError("need at least two nodes")
    pool = np.delete(np.arange(n), core)
    take = min(bundle_size - 1, pool.size)
    chosen = rng.choice(pool, size=take, replace=False)
    return Bundle(id=bundle_id, core=int(core), members=[int(core)] + [int(v) for v in chosen])


def _member_rng(seed: int, bundle_id: int) -> np.random.Generator:
    return np.random.default_rng((seed, _STREAM_MEMBERS, bundle_id))


def sample_bundles(graph: Graph, embeddings: EmbeddingMatrix, cfg: SamplingConfig) -> list:
    """Draw cfg.num_bundles bundles with ids 0..num_bundles-1.

    Cores are drawn without replacement while the node count allows it.
    Isolated cores under the topological criterion are redrawn, up to
    cfg.max_resample_attempts redraws in total.
    """
    if cfg.criterion == "topological":
        if graph is None:
            raise ValueError("topological sampling needs a graph")
        n = graph.n
    elif cfg.criterion == "semantic":
        if embeddings is None:
            raise ValueError("semantic sampling needs embeddings")
        n = embeddings.rows
    else:
        n = graph.n if graph is not None else embeddings.rows

    master = np.random.default_rng((cfg.seed, _STREAM_CORES))
    if cfg.num_bundles <= n:
        cores = master.permutation(n)[: cfg.num_bundles]
    else:
        cores = master.integers(0, n, size=cfg.num_bundles)

    bundles = []
    redraws = 0
    for bid in range(cfg.num_bundles):
        core = int(cores[bid])
        while True:
            try:
                bundles.append(_sample_one(graph, embeddings, cfg, core, bid))
                break
            except IsolatedCoreError:
                redraws += 1
                if redraws > cfg.max_resample_attempts:
                    raise SamplingBudgetError(
                        succeeded=len(bundles),
                        requested=cfg.num_bundles,
                        attempts=cfg.max_resample_attempts,
                    ) from None
                core = int(master.integers(0, n))
    return bundles


def _sample_one(graph, embeddings, cfg: SamplingConfig, core: int, bid: int) -> Bundle:
    if cfg.criterion == "topological":
        return sample_topological(graph, core, cfg.bundle_size, _member_rng(cfg.seed, bid), bid)
    if cfg.criterion == "semantic":
        return sample_semantic(embeddings, core, cfg.bundle_size, bid)
    n = graph.n if graph is not None else embeddings.rows
    return sample_uniform(n, core, cfg.bundle_size, _member_rng(cfg.seed, bid), bid)


def save_bundles(path, bundles) -> None:
    """Write bundles as JSON lines; unlabeled bundles omit the label key."""
    with open(path, "w", encoding="utf-8") as fh:
        for b in bundles:
            rec = {"id": b.id, "core": b.core, "members": list(b.members)}
            if b.label is not None:
                rec["label"] = int(b.label)
            rec["evicted"] = [[int(e), int(v)] for e, v in b.evicted]
            fh.write(json.dumps(rec) + "\n")


def load_bundles(path) -> list:
    bundles = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            bundles.append(
                Bundle(
                    id=int(rec["id"]),
                    core=int(rec["core"]),
                    members=[int(v) for v in rec["members"]],
                    label=int(rec["label"]) if rec.get("label") is not None else None,
                    evicted=[(int(e), int(v)) for e, v in rec.get("evicted", [])],
                )
            )
    return bundles
