"""Every training objective, expressed as scalar graph nodes.

The element-wise adversarial pair treats each coordinate of an instance as
real (observed) or fake (imputed): the critic emits one score per element
plus a final label-authenticity score, and masks decide which scores count
on which side. Each side is averaged over its own sub-population (rows
where element i is observed vs missing; labeled vs pseudo-labeled rows),
and a side with no qualifying rows contributes zero.

Scores enter as graph nodes so a loss can train whichever network produced
them; masks and data always enter as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import (add, col_slice, const, hadamard, input_gradient_rows, matmul,
                     mean_all, row_select_by_mask, scalar_multiply, sqrt, square,
                     subtract, sum_all)
from .errors import ConfigError, ContractError

REGULARIZERS = ("zero_centered", "standard_gp", "weight_clip")


@dataclass
class LossWeights:
    """Objective weights and the critic regularizer mode.

    Defaults: both imputation auxiliaries at 10, conditional auxiliaries
    at 1 and 0.01, pseudo-labeling at 0.1.
    """

    lambda1: float = 10.0
    lambda2: float = 10.0
    alpha1: float = 10.0
    alpha2: float = 1.0
    alpha3: float = 0.01
    alpha4: float = 0.1
    regularizer: str = "zero_centered"

    def validate(self):
        for name in ("lambda1", "lambda2", "alpha1", "alpha2", "alpha3", "alpha4"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")
        if self.regularizer not in REGULARIZERS:
            raise ConfigError(f"regularizer must be one of {REGULARIZERS}, got '{self.regularizer}'")
        return self


def _zero() -> engine.Node:
    return const(np.zeros(()))


def _pad_label_column(mask: np.ndarray) -> np.ndarray:
    """Extend an element mask with a zero column so it spans the d+1 scores."""
    b = mask.shape[0]
    return np.concatenate([mask, np.zeros((b, 1))], axis=1)


def _subset_column_mean(scores, row_mask: np.ndarray, column: int):
    """Mean of one score column over the rows selected by ``row_mask``, or None."""
    if not row_mask.any():
        return None
    picked = row_select_by_mask(scores, row_mask.astype(float))
    return mean_all(col_slice(picked, column, column + 1))


def _normalized_side(mask: np.ndarray) -> np.ndarray:
    """Per-column weights turning a masked sum into a sub-population mean.

    Column i of the result sums to 1 over the rows where ``mask`` is set
    (0 everywhere when no row qualifies), so constant score shifts cancel
    between the fake and real sides. This matches the conditional
    distributions the element-wise optimality argument is stated over; a
    mask-inside whole-batch mean would leave the two sides with unequal
    mass and hand a linear-output critic an unbounded descent direction.
    """
    counts = mask.sum(axis=0)
    return mask / np.maximum(counts, 1.0)


def imputation_generator_loss(scores, m: np.ndarray) -> engine.Node:
    """Generator side of the element-wise adversarial pair.

    -sum_i E_{rows with m_i=0}[score_i]; units with nothing imputed
    contribute zero and the label column is excluded.
    """
    m = np.asarray(m, dtype=np.float64)
    fake = _pad_label_column(_normalized_side(1.0 - m))
    return scalar_multiply(sum_all(hadamard(const(fake), scores)), -1.0)


def element_critic_loss(scores_data, m: np.ndarray, m_y: np.ndarray,
                        scores_cond=None, include_label_unit: bool = True) -> engine.Node:
    """Critic side: sum_i E_{m_i=0}[score_i] - E_{m_i=1}[score_i].

    The label column uses the label mask the same way: pseudo-labeled rows
    count as fake, labeled rows as real, each averaged over its own
    sub-population. Class-conditional rows are entirely fake (all-zero
    mask, label column included) and enter as a separate batch mean.
    """
    m = np.asarray(m, dtype=np.float64)
    m_y = np.asarray(m_y, dtype=np.float64)
    d = m.shape[1]
    signed = _pad_label_column(_normalized_side(1.0 - m) - _normalized_side(m))
    total = sum_all(hadamard(const(signed), scores_data))
    if include_label_unit:
        fake = _subset_column_mean(scores_data, m_y == 0, d)
        if fake is not None:
            total = add(total, fake)
        real = _subset_column_mean(scores_data, m_y == 1, d)
        if real is not None:
            total = subtract(total, real)
    if scores_cond is not None and scores_cond.value.shape[0] > 0:
        b_c = scores_cond.value.shape[0]
        total = add(total, scalar_multiply(sum_all(scores_cond), 1.0 / b_c))
    return total


def reconstruction_loss(x: np.ndarray, x_bar, m: np.ndarray) -> engine.Node:
    """Squared error on observed coordinates, averaged over the batch."""
    m = np.asarray(m, dtype=np.float64)
    b = m.shape[0]
    err = square(subtract(const(x), x_bar))
    return scalar_multiply(sum_all(hadamard(const(m), err)), 1.0 / b)


def cross_entropy(probs, targets: np.ndarray) -> engine.Node:
    """-mean_batch sum_k target_k log(prob_k), with the engine's log clamp."""
    targets = np.asarray(targets, dtype=np.float64)
    if np.abs(probs.value.sum(axis=1) - 1.0).max() > 1e-6:
        raise ContractError("cross_entropy: probability rows must sum to 1")
    if not np.isin(targets, (0.0, 1.0)).all() or (targets.sum(axis=1) != 1.0).any():
        raise ContractError("cross_entropy: targets must be one-hot rows")
    b = targets.shape[0]
    return scalar_multiply(sum_all(hadamard(const(targets), engine.log(probs))), -1.0 / b)


def pseudo_label_loss(scores_u) -> engine.Node:
    """-mean of the label-authenticity column; trains the classifier."""
    d_plus = scores_u.value.shape[1]
    return scalar_multiply(mean_all(col_slice(scores_u, d_plus - 1, d_plus)), -1.0)


def hidden_generator_loss(score_fake) -> engine.Node:
    return scalar_multiply(mean_all(score_fake), -1.0)


def hidden_critic_loss(score_fake, score_real) -> engine.Node:
    return subtract(mean_all(score_fake), mean_all(score_real))


# ------------------------------------------------------------- penalties

def _gradient_row_norms_sq(critic_layers, inputs: np.ndarray, units: int, d_in: int,
                           masks=None):
    """(units*b, 1) node of squared input-gradient norms, unit-major."""
    grads = input_gradient_rows(critic_layers, inputs, units=units, in_cols=(0, d_in),
                                masks=masks)
    ones = np.ones((d_in, 1))
    return matmul(square(grads), const(ones))


def element_gradient_penalty(critic_layers, x_hat: np.ndarray, y: np.ndarray,
                             m: np.ndarray, include_label_unit: bool = False,
                             m_y: np.ndarray | None = None,
                             data_block_only: bool = False, masks=None) -> engine.Node:
    """Zero-centered penalty on the element critic, one term per output unit.

    Unit i averages the squared gradient norm over the rows where element i
    is observed; units with no qualifying rows contribute zero. With
    ``include_label_unit`` the label score is penalized too, over labeled
    rows. By default the gradient covers the whole input (data block and
    label block): a linear-output critic left unpenalized along the label
    inputs can grow its scores through them without bound.
    ``data_block_only`` restricts it to the data coordinates.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    b, d = m.shape
    units = d + 1 if include_label_unit else d
    inputs = np.concatenate([x_hat, y], axis=1)
    norms = _gradient_row_norms_sq(critic_layers, inputs, units,
                                   d if data_block_only else inputs.shape[1], masks=masks)

    counts = m.sum(axis=0)
    weights = np.where(counts > 0, 1.0, 0.0) / np.maximum(counts, 1.0)
    per_row = (m * weights).T.reshape(-1, 1)  # unit-major flat weights
    if include_label_unit:
        if m_y is None:
            raise ContractError("label-unit penalty requires the label mask")
        k = float(np.asarray(m_y).sum())
        lab = (np.asarray(m_y, dtype=np.float64) / k if k > 0 else np.zeros(b)).reshape(-1, 1)
        per_row = np.concatenate([per_row, lab], axis=0)
    if not per_row.any():
        return _zero()
    return sum_all(hadamard(norms, const(per_row)))


def hidden_gradient_penalty(critic_layers, h: np.ndarray, y: np.ndarray,
                            masks=None) -> engine.Node:
    """Zero-centered penalty on the hidden critic at encoded labeled rows."""
    h = np.asarray(h, dtype=np.float64)
    inputs = np.concatenate([h, y], axis=1)
    norms = _gradient_row_norms_sq(critic_layers, inputs, units=1, d_in=h.shape[1],
                                   masks=masks)
    return mean_all(norms)


def one_centered_gradient_penalty(critic_layers, inputs: np.ndarray, units: int,
                                  d_in: int) -> engine.Node:
    """Classic (||grad|| - 1)^2 penalty, evaluated at the given points."""
    inputs = np.asarray(inputs, dtype=np.float64)
    b = inputs.shape[0]
    norms = sqrt(_gradient_row_norms_sq(critic_layers, inputs, units, d_in))
    dev = square(subtract(norms, const(np.ones((units * b, 1)))))
    return scalar_multiply(sum_all(dev), 1.0 / b)


# ------------------------------------------------------------- objectives

_COMPONENT_PARTS = {
    "element_critic": ("critic_loss", "critic_penalty"),
    "imputation_generator": ("generator_loss", "reconstruction"),
    "hidden_critic": ("hidden_critic_loss", "hidden_penalty"),
    "cond_generator": ("hidden_generator_loss", "cond_generator_loss", "cond_cross_entropy"),
    "classifier": ("classifier_cross_entropy", "pseudo_label"),
}


def assemble_objectives(weights: LossWeights, parts: dict) -> dict:
    """Combine named scalar parts into the per-component objectives.

    element_critic:        critic_loss + lambda1 * critic_penalty
    imputation_generator:  generator_loss + alpha1 * reconstruction
    hidden_critic:         hidden_critic_loss + lambda2 * hidden_penalty
    cond_generator:        hidden_generator_loss + alpha2 * cond_generator_loss
                           + alpha3 * cond_cross_entropy
    classifier:            classifier_cross_entropy + alpha4 * pseudo_label

    Only components whose parts are all present are assembled; a component
    with some but not all parts raises naming the missing one. Under the
    weight_clip regularizer the penalty terms are dropped.
    """
    out = {}
    for component, needed in _COMPONENT_PARTS.items():
        have = [name for name in needed if name in parts]
        if not have:
            continue
        missing = [name for name in needed if name not in parts]
        if missing:
            raise ContractError(f"objective '{component}' is missing part '{missing[0]}'")
        use_penalty = weights.regularizer != "weight_clip"
        if component == "element_critic":
            obj = parts["critic_loss"]
            if use_penalty and weights.lambda1:
                obj = add(obj, scalar_multiply(parts["critic_penalty"], weights.lambda1))
        elif component == "imputation_generator":
            obj = add(parts["generator_loss"],
                      scalar_multiply(parts["reconstruction"], weights.alpha1))
        elif component == "hidden_critic":
            obj = parts["hidden_critic_loss"]
            if use_penalty and weights.lambda2:
                obj = add(obj, scalar_multiply(parts["hidden_penalty"], weights.lambda2))
        elif component == "cond_generator":
            obj = add(parts["hidden_generator_loss"],
                      add(scalar_multiply(parts["cond_generator_loss"], weights.alpha2),
                          scalar_multiply(parts["cond_cross_entropy"], weights.alpha3)))
        else:
            obj = add(parts["classifier_cross_entropy"],
                      scalar_multiply(parts["pseudo_label"], weights.alpha4))
        out[component] = obj
    return out
