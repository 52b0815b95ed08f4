"""Teacher-guided adaptation of the aggregated target model.

A frozen linear "vision" encoder embeds target inputs into a joint space
where learnable class prompts live; cosine logits scaled by ``tau`` give the
teacher distribution ``P_FM``. Each batch first tunes the prompts (and the
learnable rescale ``g``) on the external loss, then trains the student on
the internal self-supervision loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .data import LabeledDomain
from .errors import DegenerateClusterError, NumericError, ShapeError
from .nn import (PROB_FLOOR, Hyperparams, Model, TrainState, forward, iterate_minibatches,
                 loss_and_grads, mean_cross_entropy, sgd_step, train_step)

G_FLOOR = 1e-6


def _unit(x: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateClusterError(f"zero {what} embedding")
    return x / norms, norms


def _log(p):
    return np.log(np.maximum(p, PROB_FLOOR))


@dataclass
class Teacher:
    vis_encoder: np.ndarray  # (joint, d_in), frozen
    prompts: np.ndarray  # (C, joint), learnable
    tau: float = 10.0

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.prompts.shape[1] != self.vis_encoder.shape[0]:
            raise ShapeError("prompt width differs from joint embedding width")

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Unit-normalized joint embeddings of raw inputs."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.vis_encoder.shape[1]:
            raise ShapeError(f"input of shape {x.shape} does not match encoder width {self.vis_encoder.shape[1]}")
        return _unit(x @ self.vis_encoder.T, "visual")[0]


def make_teacher(pretrain: LabeledDomain, joint_dim: int, tau: float, rng: np.random.Generator) -> Teacher:
    """Random orthogonal encoder; prompts start at per-class mean embeddings of ``pretrain``."""
    d = pretrain.dim
    q, _ = np.linalg.qr(rng.normal(size=(max(d, joint_dim), max(d, joint_dim))))
    enc = q[:joint_dim, :d]
    t = Teacher(enc, np.zeros((pretrain.class_count, joint_dim)), tau)
    emb = t.embed(pretrain.features)
    prompts = np.stack([emb[pretrain.labels == c].mean(axis=0) if np.any(pretrain.labels == c)
                        else rng.normal(size=joint_dim) for c in range(pretrain.class_count)])
    t.prompts = prompts
    return t


def _teacher_logits(vis_emb: np.ndarray, prompts: np.ndarray, tau: float):
    unit_p, norms = _unit(prompts, "prompt")
    return tau * vis_emb @ unit_p.T, unit_p, norms


def teacher_predict(teacher: Teacher, x_t: np.ndarray) -> np.ndarray:
    z, _, _ = _teacher_logits(teacher.embed(x_t), teacher.prompts, teacher.tau)
    return softmax(z, axis=1)


def g_transform(p_v_prime: np.ndarray, g_scale: np.ndarray) -> np.ndarray:
    """Positive per-class rescale followed by row renormalization."""
    g_scale = np.asarray(g_scale, dtype=np.float64)
    if np.any(g_scale <= 0):
        raise ValueError("g_scale must be positive")
    u = p_v_prime * g_scale
    return u / u.sum(axis=1, keepdims=True)


def kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL(p || q) per row, with both sides clamped away from zero."""
    return np.sum(p * (_log(p) - _log(q)), axis=1)


def external_loss_value(p_fm, p_t, p_v, p_v_prime, g_scale, beta, gamma, variance="teacher") -> float:
    q = np.maximum(p_fm, PROB_FLOOR)
    var = q if variance == "teacher" else np.maximum(p_t, PROB_FLOOR)
    gauss = np.sum((q - p_t) ** 2 / var + np.log(var), axis=1)
    kl = kl_rows(g_transform(p_v_prime, g_scale), p_v)
    return float(beta * np.mean(gauss + gamma * kl))


def external_loss(prompts: np.ndarray, g_scale: np.ndarray, vis_emb: np.ndarray, tau: float,
                  p_t: np.ndarray, beta: float, gamma: float, p_v: np.ndarray | None = None,
                  variance: str = "teacher") -> tuple[float, np.ndarray, np.ndarray]:
    """Prompt-tuning loss and its gradients w.r.t. prompts and g_scale.

    ``p_v`` is the teacher prediction held constant; by default it is the
    current prediction with gradients blocked. ``variance`` picks the
    diagonal of the Gaussian term: "teacher" (P_FM) or "student" (P_t).
    """
    if variance not in ("teacher", "student"):
        raise ValueError(f"unknown variance variant {variance!r}")
    n = vis_emb.shape[0]
    z, unit_p, norms = _teacher_logits(vis_emb, prompts, tau)
    q = softmax(z, axis=1)
    p_v = q.copy() if p_v is None else p_v
    loss = external_loss_value(q, p_t, p_v, q, g_scale, beta, gamma, variance)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite external loss {loss}")

    qc = np.maximum(q, PROB_FLOOR)
    if variance == "teacher":
        dq = 1.0 - p_t ** 2 / qc ** 2 + 1.0 / qc
    else:
        dq = 2.0 * (qc - p_t) / np.maximum(p_t, PROB_FLOOR)
    dq *= beta / n
    # KL(g(q') || p_v) through the rescale-and-renormalize map
    u = q * g_scale
    s = u.sum(axis=1, keepdims=True)
    r = u / s
    G = _log(r) - _log(p_v) + 1.0
    du = (beta * gamma / n) * (G - np.sum(G * r, axis=1, keepdims=True)) / s
    dq += du * g_scale
    dg = np.sum(du * q, axis=0)

    dz = q * (dq - np.sum(dq * q, axis=1, keepdims=True))
    d_unit = tau * dz.T @ vis_emb
    d_prompts = (d_unit - unit_p * np.sum(d_unit * unit_p, axis=1, keepdims=True)) / norms
    return loss, d_prompts, dg


def internal_loss_value(p_fm: np.ndarray, p_t: np.ndarray, theta: float, delta: float) -> float:
    """theta * CE(P_FM, P_t) + delta * sum(pbar log pbar) + sum_c KL(pbar_c || 1/C)."""
    C = p_t.shape[1]
    pbar = p_t.mean(axis=0)
    ce = -np.mean(np.sum(p_fm * _log(p_t), axis=1))
    return float(theta * ce + delta * np.sum(pbar * _log(pbar)) + np.sum(pbar * _log(C * pbar)))


def internal_loss_head(p_fm: np.ndarray, theta: float, delta: float):
    def head(z):
        n, C = z.shape
        p = softmax(z, axis=1)
        loss = internal_loss_value(p_fm, p, theta, delta)
        pbar = np.maximum(p.mean(axis=0), PROB_FLOOR)
        dp = (-theta * p_fm / np.maximum(p, PROB_FLOOR)
              + delta * (np.log(pbar) + 1.0) + (np.log(C * pbar) + 1.0)) / n
        return loss, p * (dp - np.sum(dp * p, axis=1, keepdims=True))
    return head


def internal_loss(model: Model, x_t: np.ndarray, p_fm: np.ndarray, theta: float, delta: float):
    """Self-supervision loss of the target model; the teacher side is constant."""
    return loss_and_grads(model, x_t, internal_loss_head(p_fm, theta, delta))


def final_labels(model: Model, x_t: np.ndarray) -> np.ndarray:
    """Argmax of the target model's softmax; ties go to the lowest class."""
    return np.argmax(forward(model, x_t)[1], axis=1)


@dataclass
class AdaptState:
    """Optimizer buffers for the prompt side; the student gets fresh buffers per epoch."""

    g_scale: np.ndarray
    prompt_state: TrainState

    @classmethod
    def initial(cls, teacher: Teacher) -> "AdaptState":
        g = np.ones(teacher.prompts.shape[0])
        return cls(g, TrainState.for_params([teacher.prompts, g]))


def teacher_student_ce(model: Model, teacher: Teacher, x_t: np.ndarray) -> float:
    """Mean over target samples of CE(P_FM, P_t)."""
    return mean_cross_entropy(teacher_predict(teacher, x_t), forward(model, x_t)[1])


def adapt_epoch(model: Model, teacher: Teacher, state: AdaptState, x_t: np.ndarray, hp: Hyperparams,
                eta: float, rng: np.random.Generator, use_external: bool = True,
                use_internal: bool = True, variance: str = "teacher") -> tuple[Model, dict]:
    """One pass over target batches: prompt step on the external loss, then student step.

    Mutates ``teacher.prompts`` and ``state``; the encoder is never written.
    Returns the updated student and mean batch losses.
    """
    model_state = TrainState.for_params(model.params())
    ex_losses, in_losses = [], []
    for idx in iterate_minibatches(x_t.shape[0], hp.batch_size, rng):
        xb = x_t[idx]
        emb = teacher.embed(xb)
        p_t = forward(model, xb)[1]
        if use_external:
            loss, d_prompts, d_g = external_loss(teacher.prompts, state.g_scale, emb, teacher.tau, p_t,
                                                 hp.beta, hp.gamma, variance=variance)
            teacher.prompts, g = sgd_step([teacher.prompts, state.g_scale], [d_prompts, d_g],
                                          state.prompt_state, eta, hp.momentum)
            state.g_scale = np.maximum(g, G_FLOOR)
            ex_losses.append(loss)
        if use_internal:
            p_fm = softmax(_teacher_logits(emb, teacher.prompts, teacher.tau)[0], axis=1)
            loss, grads = internal_loss(model, xb, p_fm, hp.theta, hp.delta)
            model = train_step(model, grads, model_state, eta, hp.momentum)
            in_losses.append(loss)
    return model, {
        "L_ex": float(np.mean(ex_losses)) if ex_losses else 0.0,
        "L_in": float(np.mean(in_losses)) if in_losses else 0.0,
    }
