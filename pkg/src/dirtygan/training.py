"""Training orchestration: the three-step loop over batch groups.

Per batch group, in order: (1) imputation (n_critic element-critic updates,
then one encoder and one imputer update), (2) conditional generation
(n_cg rounds of n_critic hidden-critic updates plus one conditional-
generator update), (3) one classifier update on the class-balanced batch.
Noise, pseudo-labels and conditional rows are redrawn per network update,
except that a conditional-generation step encodes its real side once (the
encoder is frozen for the whole step). All randomness flows from the
single state generator, so a run is fully determined by (config, seed,
dataset).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine, losses, networks
from .data import Batch, DirtyDataset, sample_batch
from .errors import ConfigError, ContractError, DivergenceError
from .losses import LossWeights

COMPONENTS = ("encoder", "imputer", "element_critic",
              "cond_generator", "hidden_critic", "classifier")


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    n_critic: int = 5
    n_cg: int = 10
    batch_size: int = 64
    epochs: int = 300
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    d_z: int | None = None
    seed: int = 0
    clip_c: float = 0.01
    checkpoint_every: int = 10
    init_scheme: str = "he"
    # the critic's label unit is trained adversarially like the element
    # units, so it gets the same zero-centered penalty; without it the
    # label score grows without bound and swamps the classifier objective
    gp_on_label_unit: bool = True
    # penalize gradients over the whole critic input; restricting to the
    # data block leaves the label-input weights as a free growth direction
    gp_data_block_only: bool = False
    # ablation switches: adversarial imputation, conditional oversampling,
    # and the label-authenticity unit (pseudo-label adversary)
    use_imputer: bool = True
    use_cond_generator: bool = True
    use_label_critic: bool = True

    def validate(self) -> "TrainConfig":
        self.weights.validate()
        if self.n_critic < 1 or self.n_cg < 1:
            raise ConfigError("n_critic and n_cg must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 <= self.rmsprop_decay < 1:
            raise ConfigError("rmsprop_decay must be in [0, 1)")
        if self.clip_c <= 0:
            raise ConfigError("clip_c must be positive")
        return self


@dataclass
class TrainState:
    params: networks.NetParams
    opt: dict
    rng: np.random.Generator
    config: TrainConfig
    epoch: int = 0
    traces: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def record(self, component: str, value: float):
        self.traces.setdefault(component, []).append(value)


@dataclass
class EpochRecord:
    epoch: int
    loss_means: dict
    probe_value: float | None = None


def init_state(d: int, n_c: int, cfg: TrainConfig) -> TrainState:
    cfg.validate()
    params = networks.init_params(d, n_c, seed=cfg.seed, d_z=cfg.d_z, scheme=cfg.init_scheme)
    opt = {
        name: engine.RmsPropState(getattr(params, name).params(),
                                  learning_rate=cfg.learning_rate,
                                  decay=cfg.rmsprop_decay,
                                  epsilon=cfg.rmsprop_epsilon)
        for name in COMPONENTS
    }
    return TrainState(params=params, opt=opt, rng=np.random.default_rng(cfg.seed), config=cfg)


def _step_component(state: TrainState, name: str, objective: engine.Node, step_tag: str):
    value = float(objective.value)
    if not np.isfinite(value):
        raise DivergenceError(name, step_tag, value)
    engine.backward(objective)
    return value


def _apply(state: TrainState, name: str, wrapped_layers, value: float):
    mlp = getattr(state.params, name)
    engine.rmsprop_step(mlp.params(), networks.layer_grads(wrapped_layers), state.opt[name])
    state.record(name, value)


def _clip_if_needed(state: TrainState, name: str):
    if state.config.weights.regularizer == "weight_clip" and name.endswith("critic"):
        engine.clip_weights(getattr(state.params, name).params(), state.config.clip_c)


# ------------------------------------------------------------ proposals

def _impute_numpy(params: networks.NetParams, x, m, z):
    """Frozen-network imputation pass: x_tilde -> h -> x_bar -> x_hat."""
    x_tilde = networks.fill_noise(x, m, z)
    h = networks.encode(params.encoder, x_tilde, m)
    x_bar = networks.generate_imputation(params.imputer, h)
    return networks.compose_imputed(x, m, x_bar), x_tilde, h


def _uniform_fill(x, m, rng):
    return networks.fill_noise(x, m, rng.random(x.shape))


def _label_inputs(state: TrainState, x_hat, y, m_y):
    """True one-hots where labeled; fresh pseudo-label draws elsewhere."""
    y_in = y.copy()
    unlabeled = m_y == 0
    if unlabeled.any():
        probs = networks.classify(state.params.classifier, x_hat[unlabeled])
        y_in[unlabeled] = networks.sample_pseudo_label(probs, state.rng)
    return y_in


def balance_targets(class_counts) -> list:
    """Per-class deficits against the majority class: [(class_idx, count)]."""
    counts = np.asarray(class_counts, dtype=float)
    if counts.sum() < 1:
        raise ContractError("balance_targets requires at least one labeled row")
    top = counts.max()
    return [(int(c), int(top - counts[c])) for c in range(counts.size)
            if top - counts[c] > 0]


def _conditional_label_block(targets) -> np.ndarray | None:
    """One-hot rows realizing the balance targets, class-major order."""
    rows = [cls for cls, count in targets for _ in range(count)]
    return np.array(rows, dtype=int) if rows else None


def _generate_conditional(state: TrainState, class_ids: np.ndarray):
    """Frozen-network synthesis of class-conditional instances."""
    p = state.params
    y_c = np.eye(p.n_c)[class_ids]
    z_c = state.rng.random((len(class_ids), p.d_z))
    h_c = networks.generate_hidden_conditional(p.cond_generator, z_c, y_c)
    x_c = networks.generate_imputation(p.imputer, h_c)
    return x_c, y_c, z_c


# ------------------------------------------------------------- updates

def _update_element_critic(state: TrainState, batch: Batch):
    cfg = state.config
    p = state.params
    z = state.rng.random(batch.x.shape)
    x_hat, _, _ = _impute_numpy(p, batch.x, batch.m, z)
    y_in = _label_inputs(state, x_hat, batch.y, batch.m_y)

    layers = networks.wrap(p.element_critic)
    scores, outputs = networks.forward_nodes_collect(
        layers, engine.const(np.concatenate([x_hat, y_in], 1)))
    masks = engine.masks_from_layer_outputs([l[2] for l in layers], outputs)
    parts = {
        "critic_loss": losses.element_critic_loss(
            scores, batch.m, batch.m_y,
            include_label_unit=cfg.use_label_critic),
        "critic_penalty": _critic_penalty(cfg, layers, x_hat, y_in, batch, masks),
    }
    obj = losses.assemble_objectives(cfg.weights, parts)["element_critic"]
    value = _step_component(state, "element_critic", obj, "imputation")
    _apply(state, "element_critic", layers, value)
    _clip_if_needed(state, "element_critic")


def _critic_penalty(cfg: TrainConfig, layers, x_hat, y_in, batch: Batch, masks=None):
    if cfg.weights.regularizer == "standard_gp":
        inputs = np.concatenate([x_hat, y_in], axis=1)
        return losses.one_centered_gradient_penalty(layers, inputs,
                                                    units=batch.m.shape[1],
                                                    d_in=inputs.shape[1])
    return losses.element_gradient_penalty(
        layers, x_hat, y_in, batch.m,
        include_label_unit=cfg.gp_on_label_unit, m_y=batch.m_y,
        data_block_only=cfg.gp_data_block_only, masks=masks)


def _update_imputation_generator(state: TrainState, batch: Batch, which: str):
    cfg = state.config
    p = state.params
    z = state.rng.random(batch.x.shape)
    x_tilde = networks.fill_noise(batch.x, batch.m, z)
    probe_hat, _, _ = _impute_numpy(p, batch.x, batch.m, z)
    y_in = _label_inputs(state, probe_hat, batch.y, batch.m_y)

    enc_layers = networks.wrap(p.encoder, trainable=which == "encoder")
    imp_layers = networks.wrap(p.imputer, trainable=which == "imputer")
    h = networks.forward_nodes(enc_layers, engine.const(np.concatenate([x_tilde, batch.m], 1)))
    x_bar = networks.forward_nodes(imp_layers, h)
    x_hat = networks.compose_imputed_node(batch.x, batch.m, x_bar)
    scores = networks.forward_nodes(networks.wrap(p.element_critic, trainable=False),
                                    engine.concat_columns(x_hat, engine.const(y_in)))
    parts = {
        "generator_loss": losses.imputation_generator_loss(scores, batch.m),
        "reconstruction": losses.reconstruction_loss(batch.x, x_bar, batch.m),
    }
    obj = losses.assemble_objectives(cfg.weights, parts)["imputation_generator"]
    value = _step_component(state, which, obj, "imputation")
    if which == "imputer":
        state.record("reconstruction", float(parts["reconstruction"].value))
    _apply(state, which, enc_layers if which == "encoder" else imp_layers, value)


def imputation_step(state: TrainState, batch: Batch):
    """Algorithm step (1): critic n_critic times, then encoder, then imputer."""
    if batch.x.shape[0] == 0:
        raise ContractError("imputation_step: empty batch")
    if not state.config.use_imputer:
        return
    for _ in range(state.config.n_critic):
        _update_element_critic(state, batch)
    _update_imputation_generator(state, batch, "encoder")
    _update_imputation_generator(state, batch, "imputer")


def _update_hidden_critic(state: TrainState, h_l, y_l, class_block):
    cfg = state.config
    p = state.params
    y_c = np.eye(p.n_c)[class_block]
    z_c = state.rng.random((len(class_block), p.d_z))
    h_c = networks.generate_hidden_conditional(p.cond_generator, z_c, y_c)

    layers = networks.wrap(p.hidden_critic)
    b_c = h_c.shape[0]
    stacked = np.concatenate([np.concatenate([h_c, y_c], 1),
                              np.concatenate([h_l, y_l], 1)], axis=0)
    out = networks.forward_nodes(layers, engine.const(stacked))
    fake = engine.row_slice(out, 0, b_c)
    real = engine.row_slice(out, b_c, stacked.shape[0])
    if cfg.weights.regularizer == "standard_gp":
        penalty = losses.one_centered_gradient_penalty(
            layers, np.concatenate([h_l, y_l], 1), units=1, d_in=h_l.shape[1])
    else:
        penalty = losses.hidden_gradient_penalty(layers, h_l, y_l)
    parts = {
        "hidden_critic_loss": losses.hidden_critic_loss(fake, real),
        "hidden_penalty": penalty,
    }
    obj = losses.assemble_objectives(cfg.weights, parts)["hidden_critic"]
    value = _step_component(state, "hidden_critic", obj, "conditional")
    _apply(state, "hidden_critic", layers, value)
    _clip_if_needed(state, "hidden_critic")


def _update_cond_generator(state: TrainState, class_block):
    cfg = state.config
    p = state.params
    y_c = np.eye(p.n_c)[class_block]
    z_c = state.rng.random((len(class_block), p.d_z))
    zero_mask = np.zeros((len(class_block), p.d))

    gen_layers = networks.wrap(p.cond_generator)
    h_c = networks.forward_nodes(gen_layers, engine.const(np.concatenate([z_c, y_c], 1)))
    score = networks.forward_nodes(networks.wrap(p.hidden_critic, trainable=False),
                                   engine.concat_columns(h_c, engine.const(y_c)))
    x_c = networks.forward_nodes(networks.wrap(p.imputer, trainable=False), h_c)
    d_scores = networks.forward_nodes(networks.wrap(p.element_critic, trainable=False),
                                      engine.concat_columns(x_c, engine.const(y_c)))
    probs = networks.forward_nodes(networks.wrap(p.classifier, trainable=False), x_c)
    parts = {
        "hidden_generator_loss": losses.hidden_generator_loss(score),
        "cond_generator_loss": losses.imputation_generator_loss(d_scores, zero_mask),
        "cond_cross_entropy": losses.cross_entropy(probs, y_c),
    }
    obj = losses.assemble_objectives(cfg.weights, parts)["cond_generator"]
    value = _step_component(state, "cond_generator", obj, "conditional")
    _apply(state, "cond_generator", gen_layers, value)


def conditional_step(state: TrainState, batch: Batch):
    """Algorithm step (2): n_cg rounds of hidden-critic/generator updates.

    Fake labels follow the batch's balance targets; a batch with no labeled
    rows or no class deficit is skipped with an event record.
    """
    cfg = state.config
    if not cfg.use_cond_generator:
        return
    labeled = batch.m_y > 0
    if not labeled.any():
        state.events.append(f"epoch {state.epoch}: conditional step skipped (no labeled rows)")
        return
    counts = batch.y[labeled].sum(axis=0)
    block = _conditional_label_block(balance_targets(counts))
    if block is None:
        state.events.append(f"epoch {state.epoch}: conditional step skipped (batch balanced)")
        return
    x_l, m_l, y_l = batch.x[labeled], batch.m[labeled], batch.y[labeled]
    # the encoder is frozen throughout this step; encode the real side once
    z = state.rng.random(x_l.shape)
    h_l = networks.encode(state.params.encoder, networks.fill_noise(x_l, m_l, z), m_l)
    for _ in range(cfg.n_cg):
        for _ in range(cfg.n_critic):
            _update_hidden_critic(state, h_l, y_l, block)
        _update_cond_generator(state, block)


def classifier_step(state: TrainState, batch: Batch):
    """Algorithm step (3): one classifier update on the balanced batch."""
    cfg = state.config
    p = state.params
    labeled = batch.m_y > 0
    if not labeled.any():
        raise ContractError("classifier_step: batch has no labeled rows")

    z = state.rng.random(batch.x.shape)
    if cfg.use_imputer:
        x_hat, _, _ = _impute_numpy(p, batch.x, batch.m, z)
    else:
        x_hat = _uniform_fill(batch.x, batch.m, state.rng)
    x_l, y_l = x_hat[labeled], batch.y[labeled]

    if cfg.use_cond_generator:
        block = _conditional_label_block(balance_targets(y_l.sum(axis=0)))
        if block is not None:
            x_c, y_c, _ = _generate_conditional(state, block)
            x_l = np.concatenate([x_l, x_c], axis=0)
            y_l = np.concatenate([y_l, y_c], axis=0)

    layers = networks.wrap(p.classifier)
    probs = networks.forward_nodes(layers, engine.const(x_l))
    pseudo = engine.const(np.zeros(()))
    unlabeled = ~labeled
    if cfg.use_label_critic and cfg.weights.alpha4 > 0 and unlabeled.any():
        x_u = x_hat[unlabeled]
        probs_u = networks.forward_nodes(layers, engine.const(x_u))
        scores_u = networks.forward_nodes(networks.wrap(p.element_critic, trainable=False),
                                          engine.concat_columns(engine.const(x_u), probs_u))
        pseudo = losses.pseudo_label_loss(scores_u)
    parts = {
        "classifier_cross_entropy": losses.cross_entropy(probs, y_l),
        "pseudo_label": pseudo,
    }
    obj = losses.assemble_objectives(cfg.weights, parts)["classifier"]
    value = _step_component(state, "classifier", obj, "classification")
    _apply(state, "classifier", layers, value)


# ------------------------------------------------------------------ loop

def train(ds: DirtyDataset, cfg: TrainConfig, probe=None, on_epoch=None,
          audit_log: list | None = None):
    """Run the full procedure; returns (state, per-epoch records).

    ``probe``: optional callable (state, epoch) -> float, evaluated after
    each epoch and stored on the record (e.g. an imputation error probe).
    ``on_epoch``: callback (record, state). ``audit_log``: list collecting
    every batch index array, for leakage audits.
    """
    cfg.validate()
    labeled_classes = np.unique(ds.Y[ds.m_y > 0].argmax(axis=1)) if ds.n_l else []
    if len(labeled_classes) < 2:
        raise ContractError("training requires labeled rows from at least 2 classes")

    state = init_state(ds.d, ds.n_c, cfg)
    records = []
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        trace_start = {k: len(v) for k, v in state.traces.items()}
        perm = state.rng.permutation(ds.n)
        for start in range(0, ds.n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if idx.size < 2:
                state.events.append(f"epoch {epoch}: dropped size-1 tail batch")
                continue
            batch = sample_batch(ds, idx, state.rng)
            if audit_log is not None:
                audit_log.append(np.array(idx))
            imputation_step(state, batch)
            conditional_step(state, batch)
            if (batch.m_y > 0).any():
                classifier_step(state, batch)
            else:
                state.events.append(f"epoch {epoch}: classifier step skipped (no labels)")
        loss_means = {}
        for name, values in state.traces.items():
            fresh = values[trace_start.get(name, 0):]
            if fresh:
                loss_means[name] = float(np.mean(fresh))
        record = EpochRecord(epoch=epoch, loss_means=loss_means,
                             probe_value=probe(state, epoch) if probe else None)
        records.append(record)
        if on_epoch:
            on_epoch(record, state)
    return state, records


def impute_matrix(params: networks.NetParams, x, m, rng, use_imputer=True) -> np.ndarray:
    """Deterministic completion of (x, m) given a noise generator."""
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if x.shape[1] != params.d:
        raise ContractError(f"width {x.shape[1]} does not match trained d={params.d}")
    z = rng.random(x.shape)
    if not use_imputer:
        return networks.fill_noise(x, m, z)
    x_tilde = networks.fill_noise(x, m, z)
    h = networks.encode(params.encoder, x_tilde, m)
    x_bar = networks.generate_imputation(params.imputer, h)
    return networks.compose_imputed(x, m, x_bar)


def impute_with(state: TrainState, ds: DirtyDataset) -> np.ndarray:
    """Complete every missing entry of the dataset with the trained model."""
    return impute_matrix(state.params, ds.X, ds.M, state.rng,
                         use_imputer=state.config.use_imputer)


def predict_class_ids(params: networks.NetParams, x_hat) -> np.ndarray:
    return networks.classify(params.classifier, x_hat).argmax(axis=1)
