"""Finite-difference checks of the three trained objectives on tiny random instances."""
from __future__ import annotations

import numpy as np
from scipy.special import softmax

from .adapt import _teacher_logits, external_loss, external_loss_value, internal_loss, internal_loss_value
from .nn import (Model, finite_diff_grad, forward, init_model, label_smooth, max_relative_error, one_hot,
                 smoothed_ce_loss)

EPS = 1e-5


def _tiny(rng: np.random.Generator) -> tuple[Model, np.ndarray]:
    d, h, C = rng.integers(2, 6), rng.integers(2, 7), rng.integers(2, 5)
    model = init_model(int(d), int(h), int(C), rng, n_hidden=int(rng.integers(1, 3)))
    # larger weights than the init so tanh leaves its linear regime
    model = Model.from_params([p * 3.0 for p in model.params()])
    return model, rng.normal(size=(int(rng.integers(3, 9)), int(d)))


def check_cross_entropy(rng: np.random.Generator) -> float:
    model, x = _tiny(rng)
    C = model.dims[2]
    y = rng.integers(0, C, size=x.shape[0])
    mu = float(rng.uniform(0, 0.3))
    _, grads = smoothed_ce_loss(model, x, y, mu)
    target = label_smooth(one_hot(y, C), mu)

    def f(params):
        p = forward(Model.from_params(params), x)[1]
        return float(-np.mean(np.sum(target * np.log(p), axis=1)))
    return max_relative_error(grads, finite_diff_grad(f, model.params(), EPS))


def check_internal(rng: np.random.Generator) -> float:
    model, x = _tiny(rng)
    C = model.dims[2]
    p_fm = softmax(rng.normal(size=(x.shape[0], C)), axis=1)
    theta, delta = float(rng.uniform(0.1, 1)), float(rng.uniform(0.1, 2))
    _, grads = internal_loss(model, x, p_fm, theta, delta)

    def f(params):
        return internal_loss_value(p_fm, forward(Model.from_params(params), x)[1], theta, delta)
    return max_relative_error(grads, finite_diff_grad(f, model.params(), EPS))


def check_external(rng: np.random.Generator, variance: str = "teacher") -> float:
    n, C, J = int(rng.integers(3, 9)), int(rng.integers(2, 5)), int(rng.integers(2, 6))
    emb = rng.normal(size=(n, J))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    prompts = rng.normal(size=(C, J))
    g = rng.uniform(0.5, 1.5, size=C)
    p_t = softmax(rng.normal(size=(n, C)), axis=1)
    tau, beta, gamma = float(rng.uniform(1, 5)), float(rng.uniform(0.1, 1)), float(rng.uniform(0.1, 1))
    # the KL reference is held constant, as in training
    p_v = softmax(_teacher_logits(emb, prompts, tau)[0], axis=1)
    _, d_prompts, d_g = external_loss(prompts, g, emb, tau, p_t, beta, gamma, p_v=p_v, variance=variance)

    def f(params):
        q = softmax(_teacher_logits(emb, params[0], tau)[0], axis=1)
        return external_loss_value(q, p_t, p_v, q, params[1], beta, gamma, variance)
    return max_relative_error([d_prompts, d_g], finite_diff_grad(f, [prompts, g], EPS))


CHECKS = {
    "cross_entropy": check_cross_entropy,
    "internal": check_internal,
    "external": check_external,
    "external_student_variance": lambda rng: check_external(rng, "student"),
}


def gradient_suite(seed: int = 0, instances: int = 20) -> dict[str, list[float]]:
    """Relative errors per objective, ``instances`` random problems each."""
    return {name: [fn(np.random.default_rng([seed, i, k])) for i in range(instances)]
            for k, (name, fn) in enumerate(CHECKS.items())}
