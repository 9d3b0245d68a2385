"""End-to-end training loop: source pretraining, the k-step adaptation loop
alternating (shared+labeling heads on source ∪ pseudo-labeled) and
(shared+target head on pseudo-labeled), relabeling, and metric capture."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import labeler, trinet
from .labeler import LabelingConfig, PseudoLabelSet, candidate_count, label_candidates, sample_candidates
from .nnlib import ConfigError, LayerSpec, make_optimizer
from .trinet import GradientGates, TriNet

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "acc_f1", "acc_f2", "acc_ft", "labeling_acc",
                 "n_pseudo", "mean_E", "mean_penalty")


@dataclass
class TrainConfig:
    steps_k: int = 20
    iter_per_phase: int | None = None   # None: one pass over the phase's pool
    pretrain_iters: int | None = None   # None: same as iter_per_phase
    batch_labeling: int = 64
    batch_target: int = 128
    optimizer: str = "momentum_sgd"
    lr: float = 0.01
    momentum: float = 0.9
    adagrad_eps: float = 1e-8
    lr_decay_step: int | None = None    # decay after this adaptation step
    lr_decay_to: float = 0.001
    lam: float = 0.01
    hidden_dim: int = 50
    activation: str = "sigmoid"
    use_bn: bool = True
    dropout_rate: float = 0.0
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    gates: GradientGates = field(default_factory=GradientGates)
    seed: int = 0

    def __post_init__(self):
        if self.steps_k < 0:
            raise ConfigError("steps_k must be >= 0")
        if self.use_bn and min(self.batch_labeling, self.batch_target) < 2:
            raise ConfigError("batch sizes must be >= 2 when batch norm is active")
        if self.activation not in ("sigmoid", "relu"):
            raise ConfigError(f"unsupported activation {self.activation!r}")


@dataclass
class StepMetrics:
    step: int
    acc_f1: float
    acc_f2: float
    acc_ft: float
    labeling_acc: float
    n_pseudo: int
    mean_E: float
    mean_penalty: float


@dataclass
class TrainState:
    net: TriNet
    opt: object
    rng_train: np.random.Generator
    rng_label: np.random.Generator
    step: int = 0


def build_net(cfg: TrainConfig, in_dim: int, num_classes: int) -> TriNet:
    """Shared extractor: affine -> activation [-> dropout] [-> batch norm];
    each head: a single softmax-producing affine layer."""
    h = cfg.hidden_dim
    f_specs = [LayerSpec("affine", in_dim, h), LayerSpec(cfg.activation, h, h)]
    if cfg.dropout_rate > 0:
        f_specs.append(LayerSpec("dropout", h, h, dropout_rate=cfg.dropout_rate))
    if cfg.use_bn:
        f_specs.append(LayerSpec("batch_norm", h, h))
    branch_specs = [LayerSpec("affine", h, num_classes)]
    return TriNet(f_specs, branch_specs, num_classes, lam=cfg.lam,
                  gates=cfg.gates, seed=cfg.seed)


def init_state(cfg: TrainConfig, in_dim: int, num_classes: int) -> TrainState:
    ss = np.random.SeedSequence(cfg.seed).spawn(3)
    net = build_net(cfg, in_dim, num_classes)
    opt = make_optimizer(cfg.optimizer, cfg.lr, momentum=cfg.momentum, eps=cfg.adagrad_eps)
    return TrainState(net=net, opt=opt,
                      rng_train=np.random.default_rng(ss[1]),
                      rng_label=np.random.default_rng(ss[2]))


def _batches(n: int, batch: int, iters: int | None, rng):
    """Mini-batch index draws. One shuffled pass when iters is None, otherwise
    `iters` independent without-replacement draws. Batches under 2 rows are
    dropped (batch norm needs >= 2)."""
    batch = min(batch, n)
    if batch < 2:
        return
    if iters is None:
        perm = rng.permutation(n)
        for start in range(0, n - 1, batch):
            chunk = perm[start:start + batch]
            if len(chunk) >= 2:
                yield chunk
    else:
        for _ in range(iters):
            yield rng.choice(n, size=batch, replace=False)


def _step_params(state: TrainState, phase: str):
    """Parameters the optimizer may touch in a phase, honoring the gates."""
    net = state.net
    params, grads = {}, {}
    branches = ("f1", "f2") if phase == "labeling" else ("ft",)
    gate = net.gates.from_f1_f2 if phase == "labeling" else net.gates.from_ft
    names = list(branches) + (["f"] if gate else [])
    for name in names:
        params.update(getattr(net, name).named_params(prefix=f"{name}/"))
        grads.update(getattr(net, name).named_grads(prefix=f"{name}/"))
    return params, grads


def _labeling_phase(state, pool_x, pool_y, cfg, iters):
    """Update f1/f2 (and gated f) by the joint objective; returns batch means."""
    es, ps = [], []
    for idx in _batches(len(pool_x), cfg.batch_labeling, iters, state.rng_train):
        e, parts = state.net.joint_labeling_loss(pool_x[idx], pool_y[idx],
                                                mode="train", rng=state.rng_train)
        params, grads = _step_params(state, "labeling")
        state.opt.step(params, grads)
        es.append(e)
        ps.append(parts["penalty"])
    return (float(np.mean(es)), float(np.mean(ps))) if es else (float("nan"), float("nan"))


def _target_phase(state, pool_x, pool_y, cfg, iters):
    for idx in _batches(len(pool_x), cfg.batch_target, iters, state.rng_train):
        state.net.target_loss(pool_x[idx], pool_y[idx], mode="train", rng=state.rng_train)
        params, grads = _step_params(state, "target")
        state.opt.step(params, grads)


def pretrain(state: TrainState, source_x, source_y, cfg: TrainConfig):
    """Train all four networks on mini-batches from the labeled source set."""
    if len(source_x) == 0:
        raise ValueError("source set is empty")
    iters = cfg.pretrain_iters if cfg.pretrain_iters is not None else cfg.iter_per_phase
    mean_e, mean_p = _labeling_phase(state, source_x, source_y, cfg, iters)
    _target_phase(state, source_x, source_y, cfg, iters)
    return mean_e, mean_p


def adapt_step(state: TrainState, source_x, source_y, target_x,
               pseudo: PseudoLabelSet, cfg: TrainConfig, step_k: int):
    """One adaptation step: train on source ∪ pseudo-labeled, then on the
    pseudo-labeled pool alone, then rebuild the pseudo-label set from a fresh
    candidate sample of size candidate_count(step_k)."""
    if cfg.lr_decay_step is not None and step_k > cfg.lr_decay_step:
        state.opt.lr = cfg.lr_decay_to
    pool_x = np.vstack([source_x, target_x[pseudo.indices]])
    pool_y = np.concatenate([source_y, pseudo.labels])
    mean_e, mean_p = _labeling_phase(state, pool_x, pool_y, cfg, cfg.iter_per_phase)
    if len(pseudo) >= 2:
        _target_phase(state, target_x[pseudo.indices], pseudo.labels, cfg, cfg.iter_per_phase)
    else:
        log.warning("step %d: pseudo-label set too small (%d); skipping target phase",
                    step_k, len(pseudo))
    count = candidate_count(step_k, len(target_x), cfg.labeling)
    cand = sample_candidates(len(target_x), count, state.rng_label)
    new_pseudo = label_candidates(state.net, target_x, cand,
                                  cfg.labeling.threshold, step_k)
    state.step = step_k
    return new_pseudo, mean_e, mean_p


def evaluate(net: TriNet, x, y, branch="ft") -> float:
    """Fraction of argmax-correct predictions in eval mode."""
    if len(x) == 0:
        raise ValueError("empty evaluation set")
    out = net.forward(x, branch=branch, mode="eval")
    return float(np.mean(out.predicted_class == np.asarray(y)))


def _capture(state, pseudo, eval_x, eval_y, target_y_hidden, step, mean_e, mean_p):
    accs = {b: float("nan") for b in TriNet.BRANCHES}
    if eval_x is not None and len(eval_x) > 0:
        accs = {b: evaluate(state.net, eval_x, eval_y, branch=b) for b in TriNet.BRANCHES}
    lab_acc = float("nan")
    if target_y_hidden is not None:
        lab_acc = labeler.labeling_accuracy(pseudo, target_y_hidden)
    return StepMetrics(step=step, acc_f1=accs["f1"], acc_f2=accs["f2"],
                       acc_ft=accs["ft"], labeling_acc=lab_acc,
                       n_pseudo=len(pseudo), mean_E=mean_e, mean_penalty=mean_p)


def run(source_x, source_y, target_x, cfg: TrainConfig,
        eval_x=None, eval_y=None, target_y_hidden=None,
        state: TrainState | None = None):
    """Full procedure: pretrain on source, label an initial candidate pool,
    then steps_k adaptation steps. Returns (history, state); the reported
    model is the target-specific head."""
    source_y = np.asarray(source_y, dtype=np.int64)
    num_classes = int(source_y.max()) + 1 if len(source_y) else 2
    if state is None:
        state = init_state(cfg, source_x.shape[1], num_classes)
    mean_e, mean_p = pretrain(state, source_x, source_y, cfg)
    count = candidate_count(0, len(target_x), cfg.labeling)
    cand = sample_candidates(len(target_x), count, state.rng_label)
    pseudo = label_candidates(state.net, target_x, cand, cfg.labeling.threshold, 0)
    history = [_capture(state, pseudo, eval_x, eval_y, target_y_hidden, 0, mean_e, mean_p)]
    for k in range(1, cfg.steps_k + 1):
        pseudo, mean_e, mean_p = adapt_step(state, source_x, source_y, target_x,
                                            pseudo, cfg, k)
        history.append(_capture(state, pseudo, eval_x, eval_y, target_y_hidden,
                                k, mean_e, mean_p))
    return history, state


# ---------------------------------------------------------------------------
# metrics / checkpoint i/o


def write_metrics_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for m in history:
            w.writerow([m.step,
                        repr(m.acc_f1), repr(m.acc_f2), repr(m.acc_ft),
                        repr(m.labeling_acc), m.n_pseudo,
                        repr(m.mean_E), repr(m.mean_penalty)])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [StepMetrics(step=int(r["step"]),
                        acc_f1=float(r["acc_f1"]), acc_f2=float(r["acc_f2"]),
                        acc_ft=float(r["acc_ft"]),
                        labeling_acc=float(r["labeling_acc"]),
                        n_pseudo=int(r["n_pseudo"]),
                        mean_E=float(r["mean_E"]),
                        mean_penalty=float(r["mean_penalty"]))
            for r in rows]


def save_state(path, state: TrainState):
    trinet.save_checkpoint(
        path, state.net, optimizers={"main": state.opt},
        rng_states={"train": state.rng_train.bit_generator.state,
                    "label": state.rng_label.bit_generator.state},
        extra_meta={"step": state.step})


def load_state(path) -> TrainState:
    net, opts, rng_states, extra = trinet.load_checkpoint(path)
    rng_train, rng_label = np.random.default_rng(), np.random.default_rng()
    if "train" in rng_states:
        rng_train.bit_generator.state = rng_states["train"]
    if "label" in rng_states:
        rng_label.bit_generator.state = rng_states["label"]
    return TrainState(net=net, opt=opts.get("main"), rng_train=rng_train,
                      rng_label=rng_label, step=(extra or {}).get("step", 0))
