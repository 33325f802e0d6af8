"""Elementwise, reduction and shape ops with analytic gradients."""
from __future__ import annotations

import math

import numpy as np
from scipy import special

from .tensor import Tensor, as_tensor, make_op

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def back(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return make_op(out, (a, b), back, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** exponent
    return make_op(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), "pow")


def square(a) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return make_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return make_op(out, (a,), lambda g: (g * special.expit(a.data),), "softplus")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    """max(x, slope*x); the gradient at exactly 0 is taken as 1."""
    a = as_tensor(a)
    pos = a.data >= 0
    out = np.where(pos, a.data, slope * a.data)
    return make_op(out, (a,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def lower_bound(a, bound: float) -> Tensor:
    """max(x, bound) whose gradient still flows when it would raise x."""
    a = as_tensor(a)
    out = np.maximum(a.data, bound)

    def back(g):
        passthrough = (a.data >= bound) | (g < 0)
        return (np.where(passthrough, g, 0.0),)

    return make_op(out, (a,), back, "lower_bound")


def normal_cdf(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * special.erfc(-a.data * _INV_SQRT2)
    return make_op(
        out, (a,), lambda g: (g * _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data),), "normal_cdf"
    )


def laplace_cdf(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(-np.abs(a.data))
    out = np.where(a.data < 0, 0.5 * e, 1.0 - 0.5 * e)
    return make_op(out, (a,), lambda g: (g * 0.5 * e,), "laplace_cdf")


def logistic_cdf(a) -> Tensor:
    return sigmoid(a)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(out, (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)  # repeated indices accumulate
        return (full,)

    return make_op(a.data[index], (a,), back, "getitem")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return make_op(
        np.concatenate([t.data for t in tensors], axis=axis), tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)), "concat",
    )


def split(a, sections: int, axis: int = 1) -> list[Tensor]:
    a = as_tensor(a)
    n = a.shape[axis] // sections
    out = []
    for i in range(sections):
        index = [slice(None)] * a.ndim
        index[axis] = slice(i * n, (i + 1) * n)
        out.append(getitem(a, tuple(index)))
    return out


def where_const(mask: np.ndarray, a, fill: float) -> Tensor:
    """Elementwise ``a`` where mask else the constant ``fill``."""
    a = as_tensor(a)
    return make_op(np.where(mask, a.data, fill), (a,), lambda g: (np.where(mask, g, 0.0),), "where")


def matmul(a, b) -> Tensor:
    """Batched matrix product over the trailing two axes (no broadcasting of batch axes)."""
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)
    return make_op(
        out, (a, b),
        lambda g: (np.matmul(g, np.swapaxes(b.data, -1, -2)), np.matmul(np.swapaxes(a.data, -1, -2), g)),
        "matmul",
    )


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return make_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")
