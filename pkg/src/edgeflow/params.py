"""Parameter registration helpers: uniform(-a, a) with a = sqrt(1/fan_in),
zero biases, all draws from the shared LCG stream in registration order."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor
from .rng import Rng


def uniform_init(rng: Rng, shape, fan_in: int) -> Tensor:
    a = math.sqrt(1.0 / fan_in)
    size = 1
    for s in shape:
        size *= s
    data = np.array(rng.uniforms(size, -a, a)).reshape(shape)
    return Tensor(data, requires_grad=True)


def add_linear(params: dict, rng: Rng, name: str, cin: int, cout: int) -> None:
    params[f"{name}.w"] = uniform_init(rng, (cin, cout), cin)
    params[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)


def add_conv2d(params: dict, rng: Rng, name: str, cout: int, cin_per_group: int,
               k: int, groups: int = 1) -> None:
    fan_in = cin_per_group * k * k
    params[f"{name}.w"] = uniform_init(rng, (cout, cin_per_group, k, k), fan_in)
    params[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)


def add_conv3d(params: dict, rng: Rng, name: str, cout: int, cin: int, k: int) -> None:
    fan_in = cin * k * k * k
    params[f"{name}.w"] = uniform_init(rng, (cout, cin, k, k, k), fan_in)
    params[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)


def trainable(params: dict) -> dict:
    return {k: v for k, v in params.items() if v.requires_grad}
