"""Group-level losses on GCN logits and their exact gradients.

For a node group B with annotated class y, the group distribution is
q = softmax(mean of member logits). Two terms act on it:

  entropy term   -log q[y]
  ranking term   max(log max_c q[c] - log q[y], 0)

and the training objective is their mean over all labeled groups. The
ranking term is zero exactly when y attains the row maximum (ties
included); when it is positive and the maximum is tied among classes
other than y, the smallest class index defines the competing class.

Member logit rows are summed in ascending node order so that the group
distribution is bitwise invariant under member permutations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gnn import softmax_row


def _log_softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def bundle_distribution(z: np.ndarray, bundle) -> np.ndarray:
    """Class distribution of a group: softmax of the mean member logits."""
    members = np.sort(np.asarray(bundle.members if hasattr(bundle, "members") else bundle, dtype=np.intp))
    if members.size == 0:
        raise ValueError("empty bundle has no class distribution")
    mean = z[members].sum(axis=0) / members.size
    return softmax_row(mean)


def loss_be(p_bundle: np.ndarray, y_hat: int) -> float:
    """Cross-entropy of a group distribution against the annotated class."""
    return float(-np.log(p_bundle[y_hat]))


def loss_rank(p_bundle: np.ndarray, y_hat: int) -> float:
    """Hinge on the log-probability gap to the best-ranked class."""
    gap = float(np.log(p_bundle[y_hat]) - np.log(p_bundle.max()))
    return -min(gap, 0.0)


@dataclass
class FlatBundles:
    """Labeled bundles flattened for vectorized loss evaluation."""

    members: np.ndarray   # all member indices, sorted within each bundle
    offsets: np.ndarray   # (n_bundles + 1,) segment boundaries
    sizes: np.ndarray     # (n_bundles,)
    labels: np.ndarray    # (n_bundles,)

    @classmethod
    def from_bundles(cls, bundles) -> "FlatBundles":
        labeled = [b for b in bundles if b.label is not None]
        if not labeled:
            raise ValueError("no labeled bundles to supervise on")
        member_lists = [np.sort(np.asarray(b.members, dtype=np.intp)) for b in labeled]
        sizes = np.array([m.size for m in member_lists], dtype=np.intp)
        offsets = np.zeros(sizes.size + 1, dtype=np.intp)
        np.cumsum(sizes, out=offsets[1:])
        return cls(
            members=np.concatenate(member_lists),
            offsets=offsets,
            sizes=sizes,
            labels=np.array([b.label for b in labeled], dtype=np.intp),
        )

    @property
    def count(self) -> int:
        return self.sizes.size


@dataclass
class ObjectiveValue:
    """One evaluation of a training objective at fixed logits."""

    loss: float
    be_mean: float
    rank_mean: float
    d_z: np.ndarray
    d_z_be: np.ndarray   # gradient of the entropy part alone


def bundle_objective(z: np.ndarray, flat: FlatBundles, terms=("be", "rank")) -> ObjectiveValue:
    """Mean group loss over labeled bundles with its exact logit gradient."""
    nb = flat.count
    rows = np.arange(nb)
    sums = np.add.reduceat(z[flat.members], flat.offsets[:-1], axis=0)
    zbar = sums / flat.sizes[:, None]
    logq = _log_softmax_rows(zbar)
    q = np.exp(logq)

    be = -logq[rows, flat.labels]
    top = np.argmax(logq, axis=1)
    rank = logq[rows, top] - logq[rows, flat.labels]
    active = rank > 0.0

    d_zbar_be = q.copy()
    d_zbar_be[rows, flat.labels] -= 1.0
    d_zbar = d_zbar_be.copy() if "be" in terms else np.zeros_like(d_zbar_be)
    if "rank" in terms:
        act = np.flatnonzero(active)
        d_zbar[act, top[act]] += 1.0
        d_zbar[act, flat.labels[act]] -= 1.0

    be_mean = float(be.mean())
    rank_mean = float(rank[active].sum() / nb)
    loss = (be_mean if "be" in terms else 0.0) + (rank_mean if "rank" in terms else 0.0)

    scale = 1.0 / (flat.sizes * nb)
    d_z = np.zeros_like(z)
    np.add.at(d_z, flat.members, np.repeat(d_zbar * scale[:, None], flat.sizes, axis=0))
    d_z_be = np.zeros_like(z)
    if "be" in terms:
        np.add.at(d_z_be, flat.members, np.repeat(d_zbar_be * scale[:, None], flat.sizes, axis=0))

    return ObjectiveValue(
        loss=loss,
        be_mean=be_mean if "be" in terms else 0.0,
        rank_mean=rank_mean if "rank" in terms else 0.0,
        d_z=d_z,
        d_z_be=d_z_be,
    )


def member_ce_objective(z: np.ndarray, flat: FlatBundles) -> ObjectiveValue:
    """Per-member cross-entropy against the group label, averaged per group.

    This is the individual-supervision alternative: each member's own
    softmax is pushed toward the group label, with weight 1/|B| inside a
    group and the mean over groups outside.
    """
    nb = flat.count
    logp = _log_softmax_rows(z[flat.members])
    member_labels = np.repeat(flat.labels, flat.sizes)
    ce = -logp[np.arange(flat.members.size), member_labels]
    weights = np.repeat(1.0 / (flat.sizes * nb), flat.sizes)
    loss = float((ce * weights).sum())

    d_rows = np.exp(logp)
    d_rows[np.arange(flat.members.size), member_labels] -= 1.0
    d_z = np.zeros_like(z)
    np.add.at(d_z, flat.members, d_rows * weights[:, None])
    return ObjectiveValue(loss=loss, be_mean=loss, rank_mean=0.0, d_z=d_z, d_z_be=d_z.copy())


def node_ce_objective(z: np.ndarray, node_idx: np.ndarray, node_labels: np.ndarray) -> ObjectiveValue:
    """Plain mean cross-entropy on individually annotated nodes."""
    if node_idx.size == 0:
        raise ValueError("no annotated nodes to supervise on")
    logp = _log_softmax_rows(z[node_idx])
    ce = -logp[np.arange(node_idx.size), node_labels]
    loss = float(ce.mean())
    d_rows = np.exp(logp)
    d_rows[np.arange(node_idx.size), node_labels] -= 1.0
    d_z = np.zeros_like(z)
    np.add.at(d_z, node_idx, d_rows / node_idx.size)
    return ObjectiveValue(loss=loss, be_mean=loss, rank_mean=0.0, d_z=d_z, d_z_be=d_z.copy())


def total_loss_and_grad(z: np.ndarray, bundles) -> tuple:
    """Combined entropy+ranking loss over labeled bundles and dL/dZ."""
    value = bundle_objective(z, FlatBundles.from_bundles(bundles))
    return value.loss, value.d_z
