"""Full-batch gradient-descent training with periodic bundle refinement.

The update rule is plain gradient descent on the mean group loss. When
`eta_auto` is set, the step size is derived from finite-difference
estimates of the logit gradient/curvature bounds measured at
initialization on a small probe of member nodes:

    eta = 0.9 * mean_bundle_size / (n_params * (M + G^2))

Refinement starts after the warmup and then runs every `refine_every`
epochs: each labeled bundle drops the members least confident in the
bundle label, unless that would cross the size floor or all confidences
tie within 1e-12.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import gnn
from .losses import FlatBundles, bundle_objective, member_ce_objective, node_ce_objective

REFINE_TIE_TOL = 1e-12

OBJECTIVES = ("full", "be_only", "rank_only", "member_ce")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, eta: float):
        self.epoch = epoch
        self.eta = eta
        super().__init__(f"non-finite loss at epoch {epoch} with eta={eta:g}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 800
    warmup_epochs: int = 25
    refine_every: int = 5
    bundle_floor: int = 2
    seed: int = 0
    eta_auto: bool = False
    hidden: int = 64

    def __post_init__(self):
        if self.learning_rate <= 0 and not self.eta_auto:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if self.refine_every < 1:
            raise ValueError("refine_every must be >= 1")
        if self.bundle_floor < 2:
            raise ValueError("bundle_floor must be >= 2")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")


@dataclass
class TrainReport:
    loss: np.ndarray
    loss_be: np.ndarray
    loss_rank: np.ndarray
    grad_norm: np.ndarray
    grad_be_inf: np.ndarray
    refinements: list
    eta: float
    final_loss: float
    final_grad_norm: float
    g_hat: float | None = None
    m_hat: float | None = None
    final_accuracy: float | None = None

    @property
    def epochs(self) -> int:
        return self.loss.size

    def summary(self) -> dict:
        return {
            "kind": "summary",
            "epochs": self.epochs,
            "eta": self.eta,
            "final_loss": self.final_loss,
            "final_grad_norm": self.final_grad_norm,
            "refinement_events": len(self.refinements),
            "g_hat": self.g_hat,
            "m_hat": self.m_hat,
            "final_accuracy": self.final_accuracy,
        }

    def save_jsonl(self, path) -> None:
        """One record per epoch, refinement events embedded, summary last."""
        by_epoch = {}
        for epoch, bundle_id, node in self.refinements:
            by_epoch.setdefault(epoch, []).append([bundle_id, node])
        with open(path, "w", encoding="utf-8") as fh:
            for t in range(self.epochs):
                rec = {
                    "kind": "epoch",
                    "epoch": t + 1,
                    "loss": float(self.loss[t]),
                    "loss_be": float(self.loss_be[t]),
                    "loss_rank": float(self.loss_rank[t]),
                    "grad_norm": float(self.grad_norm[t]),
                    "grad_be_inf": float(self.grad_be_inf[t]),
                }
                if t + 1 in by_epoch:
                    rec["evictions"] = by_epoch[t + 1]
                fh.write(json.dumps(rec) + "\n")
            fh.write(json.dumps(self.summary()) + "\n")


def refine(p: np.ndarray, bundles, floor: int, epoch: int) -> list:
    """One eviction round: drop members least confident in the bundle label.

    Every member attaining the minimum confidence is evicted, unless the
    bundle would fall below `floor` or all confidences tie within
    REFINE_TIE_TOL. Returns (epoch, bundle id, node) events.
    """
    events = []
    for b in bundles:
        if b.label is None:
            continue
        members = np.asarray(b.members, dtype=np.intp)
        conf = p[members, b.label]
        low = conf.min()
        if conf.max() - low <= REFINE_TIE_TOL:
            continue
        keep = conf > low
        if int(keep.sum()) < floor:
            continue
        for node in members[~keep]:
            b.evicted.append((epoch, int(node)))
            events.append((epoch, b.id, int(node)))
        b.members = [int(m) for m in members[keep]]
    return events


def _grad_norm(grads: gnn.GcnParams) -> float:
    return float(np.sqrt(sum(float((t * t).sum()) for t in grads.tensors())))


def _grad_inf(grads: gnn.GcnParams) -> float:
    return float(max(float(np.abs(t).max()) for t in grads.tensors()))


def estimate_logit_bounds(
    params: gnn.GcnParams,
    a_hat,
    x,
    probe_nodes,
    *,
    fd_step: float = 1e-5,
    hess_step: float = 1e-4,
    hess_cols_per_layer: int = 32,
    seed: int = 0,
) -> tuple:
    """Finite-difference estimates (G, M) of the logit derivative bounds.

    G is the max |d z_ic / d theta_j| over probe nodes, classes, and every
    parameter. M is the max second derivative; its mixed differences are
    taken along a random subset of parameter coordinates per layer to keep
    the cost linear in the parameter count.
    """
    probe = np.asarray(probe_nodes, dtype=np.intp)
    vec = params.to_vector()
    n_d = vec.size

    g_hat = 0.0
    for j in range(n_d):
        vp = vec.copy()
        vp[j] += fd_step
        zp = gnn.forward(params.from_vector(vp), a_hat, x).z[probe]
        vp[j] -= 2 * fd_step
        zm = gnn.forward(params.from_vector(vp), a_hat, x).z[probe]
        g_hat = max(g_hat, float(np.abs((zp - zm) / (2 * fd_step)).max()))

    d, h, c = params.dims
    layer1 = d * h + h
    rng = np.random.default_rng((seed, 4))
    cols = np.concatenate(
        [
            rng.choice(layer1, size=min(hess_cols_per_layer, layer1), replace=False),
            layer1 + rng.choice(n_d - layer1, size=min(hess_cols_per_layer, n_d - layer1), replace=False),
        ]
    )

    n_classes = c

    def probe_grads(theta_vec):
        point = params.from_vector(theta_vec)
        trace = gnn.forward(point, a_hat, x)
        rows = []
        for i in probe:
            for cc in range(n_classes):
                one_hot = np.zeros_like(trace.z)
                one_hot[i, cc] = 1.0
                rows.append(gnn.backward(point, a_hat, x, trace, one_hot).to_vector())
        return np.stack(rows)

    m_hat = 0.0
    for k in cols:
        vp = vec.copy()
        vp[k] += hess_step
        gp = probe_grads(vp)
        vp[k] -= 2 * hess_step
        gm = probe_grads(vp)
        m_hat = max(m_hat, float(np.abs((gp - gm) / (2 * hess_step)).max()))
    return g_hat, m_hat


def _auto_eta(params, a_hat, x, flat: FlatBundles, seed: int) -> tuple:
    members = np.unique(flat.members)
    rng = np.random.default_rng((seed, 5))
    probe = rng.choice(members, size=min(5, members.size), replace=False)
    g_hat, m_hat = estimate_logit_bounds(params, a_hat, x, probe, seed=seed)
    mean_size = float(flat.sizes.mean())
    eta = 0.9 * mean_size / (params.n_params * (m_hat + g_hat**2))
    return eta, g_hat, m_hat


def train(a_hat, x, bundles, cfg: TrainConfig, n_classes: int, objective: str = "full"):
    """Gradient descent on the group objective; returns (params, report).

    Bundle refinement mutates `bundles` in place (members shrink, eviction
    history grows). With cfg.refine_every > cfg.epochs, bundles are never
    modified.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    flat = FlatBundles.from_bundles(bundles)

    if objective == "member_ce":
        evaluate = member_ce_objective
    elif objective == "be_only":
        evaluate = lambda z, fb: bundle_objective(z, fb, terms=("be",))
    elif objective == "rank_only":
        evaluate = lambda z, fb: bundle_objective(z, fb, terms=("rank",))
    else:
        evaluate = bundle_objective

    refine_ctx = {"bundles": bundles, "flat": flat}
    return _descend(a_hat, x, cfg, n_classes, evaluate, refine_ctx)


def train_on_nodes(a_hat, x, node_idx, node_labels, cfg: TrainConfig, n_classes: int):
    """Train on individually annotated nodes with plain cross-entropy."""
    node_idx = np.asarray(node_idx, dtype=np.intp)
    node_labels = np.asarray(node_labels, dtype=np.intp)
    evaluate = lambda z, fb: node_ce_objective(z, node_idx, node_labels)
    return _descend(a_hat, x, cfg, n_classes, evaluate, refine_ctx=None)


def _descend(a_hat, x, cfg: TrainConfig, n_classes: int, evaluate, refine_ctx):
    feats = x.data if hasattr(x, "data") and not isinstance(x, np.ndarray) else np.asarray(x)
    d = feats.shape[1]
    params = gnn.init_params(d, cfg.hidden, n_classes, cfg.seed)
    ax = a_hat @ feats

    g_hat = m_hat = None
    flat = refine_ctx["flat"] if refine_ctx is not None else None
    if cfg.eta_auto:
        if flat is None:
            raise ValueError("eta_auto needs bundle supervision")
        eta, g_hat, m_hat = _auto_eta(params, a_hat, feats, flat, cfg.seed)
    else:
        eta = cfg.learning_rate

    t_max = cfg.epochs
    loss = np.empty(t_max)
    loss_be = np.empty(t_max)
    loss_rank = np.empty(t_max)
    grad_norm = np.empty(t_max)
    grad_be_inf = np.empty(t_max)
    refinements = []

    for t in range(1, t_max + 1):
        trace = gnn.forward(params, a_hat, feats, ax=ax)
        value = evaluate(trace.z, flat)
        if not np.isfinite(value.loss):
            raise TrainingDivergedError(t, eta)
        grads = gnn.backward(params, a_hat, feats, trace, value.d_z)
        grads_be = gnn.backward(params, a_hat, feats, trace, value.d_z_be)
        idx = t - 1
        loss[idx] = value.loss
        loss_be[idx] = value.be_mean
        loss_rank[idx] = value.rank_mean
        grad_norm[idx] = _grad_norm(grads)
        grad_be_inf[idx] = _grad_inf(grads_be)

        params.w1 -= eta * grads.w1
        params.b1 -= eta * grads.b1
        params.w2 -= eta * grads.w2
        params.b2 -= eta * grads.b2

        if (
            refine_ctx is not None
            and t > cfg.warmup_epochs
            and (t - cfg.warmup_epochs) % cfg.refine_every == 0
        ):
            events = refine(trace.p, refine_ctx["bundles"], cfg.bundle_floor, t)
            if events:
                refinements.extend(events)
                flat = FlatBundles.from_bundles(refine_ctx["bundles"])
                refine_ctx["flat"] = flat

    trace = gnn.forward(params, a_hat, feats, ax=ax)
    value = evaluate(trace.z, flat)
    final_grads = gnn.backward(params, a_hat, feats, trace, value.d_z)

    report = TrainReport(
        loss=loss,
        loss_be=loss_be,
        loss_rank=loss_rank,
        grad_norm=grad_norm,
        grad_be_inf=grad_be_inf,
        refinements=refinements,
        eta=eta,
        final_loss=value.loss,
        final_grad_norm=_grad_norm(final_grads),
        g_hat=g_hat,
        m_hat=m_hat,
    )
    return params, report
