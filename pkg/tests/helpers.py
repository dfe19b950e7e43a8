"""Finite-difference gradient checking shared by the test modules."""

import numpy as np

from hybridseg import autodiff as ad


def gradcheck(fn, arrays, seed=0, h=1e-5, wrt=None):
    """Relative error between tape gradients and central differences of a random projection of fn.

    ``fn`` maps Tensors to a Tensor.  Returns the worst relative error over
    the arrays listed in ``wrt`` (default: all).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        out = fn(*tensors)
    proj = np.random.default_rng(seed).normal(size=out.shape)
    tape.backward(out, proj)

    def value(args):
        return float(np.sum(fn(*[ad.Tensor(a) for a in args]).data * proj))

    worst = 0.0
    for i in wrt:
        num = np.zeros_like(arrays[i])
        for idx in np.ndindex(arrays[i].shape):
            up = [a.copy() for a in arrays]
            dn = [a.copy() for a in arrays]
            up[i][idx] += h
            dn[i][idx] -= h
            num[idx] = (value(up) - value(dn)) / (2 * h)
        ana = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(num)
        denom = max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-12)
        worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst
