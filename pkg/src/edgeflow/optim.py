"""Adam with decoupled weight decay, plus step-wise LR halving at milestones."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    weight_decay: float = 1e-6


@dataclass
class OptimState:
    """Per-parameter moment accumulators keyed like the parameter dict."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: OptimState, hyper: AdamHyper):
    """One decoupled-weight-decay Adam update; functional, returns new params/state.

    Moments for unseen parameters start at zero. Raises on non-finite
    gradients, naming the parameter.
    """
    t = state.t + 1
    new_params = {}
    new_m = {}
    new_v = {}
    b1, b2 = hyper.beta1, hyper.beta2
    for name, p in params.items():
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"adam_step: grad shape {g.shape} vs param '{name}' {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for '{name}'")
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        step = hyper.lr * (mhat / (np.sqrt(vhat) + hyper.eps_adam) + hyper.weight_decay * p.data)
        new_params[name] = Tensor(p.data - step, requires_grad=p.requires_grad)
        new_m[name] = np.asarray(m, dtype=np.float64) + np.zeros(p.shape)
        new_v[name] = np.asarray(v, dtype=np.float64) + np.zeros(p.shape)
    return new_params, OptimState(m=new_m, v=new_v, t=t)


def lr_at_epoch(base_lr: float, epoch: int, milestones) -> float:
    """0.5x decay applied from each milestone epoch onward (epochs 0-based)."""
    halvings = sum(1 for m in milestones if epoch >= m)
    return base_lr * (0.5 ** halvings)
