"""Reverse-mode differentiation and the network primitives used by every model.

Gradients come from torch autograd in float64; this module pins the dtype,
validates inputs, and provides the specific layers the models are built
from (linear/MLP, multi-head attention over a key/value matrix, a GRU cell
with a fixed gate convention, categorical and diagonal-Gaussian log-densities).
"""

from __future__ import annotations

import io
import math
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64
CHECKPOINT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


class ContractError(ValueError):
    """Raised when an operation's preconditions are violated."""


def tensor(data, shape: Sequence[int] | None = None) -> torch.Tensor:
    """Build a float64 tensor, rejecting NaN/Inf."""
    t = torch.as_tensor(np.asarray(data, dtype=np.float64), dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ContractError(f"dimension sizes must be positive, got {shape}")
        if t.numel() != math.prod(shape):
            raise ContractError(f"{t.numel()} values do not fill shape {shape}")
        t = t.reshape(shape)
    if not torch.isfinite(t).all():
        raise ContractError("tensor data must be finite")
    return t


class ParamSet(Mapping[str, torch.Tensor]):
    """Named parameters with a stable iteration order.

    Wraps either a module (names from ``named_parameters``) or an explicit
    mapping. The per-tensor gradient accumulator is the tensor's ``.grad``.
    """

    def __init__(self, params: nn.Module | Mapping[str, torch.Tensor] | Iterable[tuple[str, torch.Tensor]]):
        if isinstance(params, nn.Module):
            items = list(params.named_parameters())
        elif isinstance(params, Mapping):
            items = list(params.items())
        else:
            items = list(params)
        self._params: OrderedDict[str, torch.Tensor] = OrderedDict()
        for name, p in items:
            if name in self._params:
                raise ContractError(f"duplicate parameter name {name!r}")
            self._params[name] = p

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def numel(self) -> int:
        return sum(p.numel() for p in self._params.values())

    def flat(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self._params.values()])

    def state(self) -> "OrderedDict[str, torch.Tensor]":
        return OrderedDict((k, v.detach().clone()) for k, v in self._params.items())

    def load(self, values: Mapping[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name, p in self._params.items():
                v = values[name]
                if tuple(v.shape) != tuple(p.shape):
                    raise ContractError(f"{name}: shape {tuple(v.shape)} != {tuple(p.shape)}")
                p.copy_(v)


def reverse_grad(output: torch.Tensor, params: ParamSet, *, accumulate: bool = False) -> "OrderedDict[str, torch.Tensor]":
    """d(output)/d(param) for every parameter in ``params``.

    Parameters that the output does not depend on get zero gradients. With
    ``accumulate`` the results are also written into each ``.grad`` (after
    zeroing), which is what optimizers read.
    """
    if output.numel() != 1:
        raise ContractError(f"gradient output must be scalar, got shape {tuple(output.shape)}")
    if not torch.isfinite(output).all():
        raise FloatingPointError("non-finite output value")
    names = list(params)
    tensors = [params[n] for n in names]
    grads = torch.autograd.grad(output.reshape(()), tensors, allow_unused=True)
    out: OrderedDict[str, torch.Tensor] = OrderedDict()
    for name, p, g in zip(names, tensors, grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        out[name] = g
    if accumulate:
        params.zero_grad()
        for name, p in zip(names, tensors):
            p.grad = out[name].clone()
    return out


def flatten_grads(grads: Mapping[str, torch.Tensor]) -> torch.Tensor:
    return torch.cat([g.reshape(-1) for g in grads.values()])


# --- initialization -------------------------------------------------------

def uniform_init_(weight: torch.Tensor, fan_in: int, generator: torch.Generator | None = None) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        u = torch.rand(weight.shape, dtype=DTYPE, generator=generator)
        weight.copy_((2.0 * u - 1.0) * bound)
    return weight


class Linear(nn.Module):
    def __init__(self, n_in: int, n_out: int, generator: torch.Generator | None = None, zero: bool = False):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(n_in, n_out, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(n_out, dtype=DTYPE))
        if not zero:
            uniform_init_(self.weight, n_in, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.weight + self.bias


class MLP(nn.Module):
    """tanh MLP; ``zero_last`` zero-initializes the output layer."""

    def __init__(self, n_in: int, hidden: Sequence[int], n_out: int,
                 generator: torch.Generator | None = None, zero_last: bool = False):
        super().__init__()
        sizes = [n_in, *hidden]
        self.hidden = nn.ModuleList(Linear(a, b, generator) for a, b in zip(sizes[:-1], sizes[1:]))
        self.out = Linear(sizes[-1], n_out, generator, zero=zero_last)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.hidden:
            x = torch.tanh(layer(x))
        return self.out(x)


# --- attention ------------------------------------------------------------

def attention_weights(q: torch.Tensor, K: torch.Tensor) -> torch.Tensor:
    # dot-product compatibility, no temperature scaling
    return torch.softmax(q @ K.transpose(-1, -2), dim=-1)


def mha_forward(q: torch.Tensor, K: torch.Tensor, V: torch.Tensor, heads: int,
                weights: Mapping[str, torch.Tensor], return_attention: bool = False):
    """Multi-head attention of query rows ``q`` (..., d_k) over keys K (n, d_k) and values V (n, d_v).

    ``weights`` holds ``Wq`` (h, d_k, d_k/h), ``Wk`` (h, d_k, d_k/h), ``Wv`` (h, d_v, d_v/h)
    and ``Wo`` (d_v, d_v). Output has shape (..., d_v).
    """
    Wq, Wk, Wv, Wo = weights["Wq"], weights["Wk"], weights["Wv"], weights["Wo"]
    if K.dim() != 2 or V.dim() != 2 or K.shape[0] != V.shape[0]:
        raise ContractError(f"K {tuple(K.shape)} and V {tuple(V.shape)} must be n x d matrices with equal n")
    d_k, d_v = K.shape[1], V.shape[1]
    if q.shape[-1] != d_k:
        raise ContractError(f"query width {q.shape[-1]} != key width {d_k}")
    if heads < 1 or d_k % heads or d_v % heads:
        raise ContractError(f"{heads} heads do not divide d_k={d_k}, d_v={d_v}")
    expect = {"Wq": (heads, d_k, d_k // heads), "Wk": (heads, d_k, d_k // heads),
              "Wv": (heads, d_v, d_v // heads), "Wo": (d_v, d_v)}
    for name, shape in expect.items():
        if tuple(weights[name].shape) != shape:
            raise ContractError(f"{name} has shape {tuple(weights[name].shape)}, expected {shape}")
    outs, atts = [], []
    for i in range(heads):
        w = attention_weights(q @ Wq[i], K @ Wk[i])
        outs.append(w @ (V @ Wv[i]))
        atts.append(w)
    out = torch.cat(outs, dim=-1) @ Wo
    if return_attention:
        return out, torch.stack(atts, dim=0)
    return out


class MultiHeadAttention(nn.Module):
    def __init__(self, d_k: int, d_v: int, heads: int, generator: torch.Generator | None = None):
        super().__init__()
        if d_k % heads or d_v % heads:
            raise ContractError(f"{heads} heads do not divide d_k={d_k}, d_v={d_v}")
        self.heads = heads
        self.Wq = nn.Parameter(uniform_init_(torch.zeros(heads, d_k, d_k // heads, dtype=DTYPE), d_k, generator))
        self.Wk = nn.Parameter(uniform_init_(torch.zeros(heads, d_k, d_k // heads, dtype=DTYPE), d_k, generator))
        self.Wv = nn.Parameter(uniform_init_(torch.zeros(heads, d_v, d_v // heads, dtype=DTYPE), d_v, generator))
        self.Wo = nn.Parameter(uniform_init_(torch.zeros(d_v, d_v, dtype=DTYPE), d_v, generator))

    def forward(self, q, K, V, return_attention=False):
        w = {"Wq": self.Wq, "Wk": self.Wk, "Wv": self.Wv, "Wo": self.Wo}
        return mha_forward(q, K, V, self.heads, w, return_attention)


# --- recurrent cell -------------------------------------------------------

def gru_step(x: torch.Tensor, h: torch.Tensor, weights: Mapping[str, torch.Tensor]) -> torch.Tensor:
    """One GRU update: h' = (1-z)*h + z*h~ with z, r gates on [x; h].

    ``weights``: ``Wz``, ``Wr``, ``Wh`` of shape (d_x + d_h, d_h) and biases ``bz``, ``br``, ``bh``.
    """
    Wz, Wr, Wh = weights["Wz"], weights["Wr"], weights["Wh"]
    d_in = x.shape[-1] + h.shape[-1]
    for name in ("Wz", "Wr", "Wh"):
        if tuple(weights[name].shape) != (d_in, h.shape[-1]):
            raise ContractError(f"{name} has shape {tuple(weights[name].shape)}, expected {(d_in, h.shape[-1])}")
    xh = torch.cat([x, h], dim=-1)
    z = torch.sigmoid(xh @ Wz + weights["bz"])
    r = torch.sigmoid(xh @ Wr + weights["br"])
    h_tilde = torch.tanh(torch.cat([x, r * h], dim=-1) @ Wh + weights["bh"])
    return (1.0 - z) * h + z * h_tilde


class GRUCell(nn.Module):
    def __init__(self, d_x: int, d_h: int, generator: torch.Generator | None = None):
        super().__init__()
        self.d_h = d_h
        for gate in "zrh":
            W = uniform_init_(torch.zeros(d_x + d_h, d_h, dtype=DTYPE), d_x + d_h, generator)
            setattr(self, f"W{gate}", nn.Parameter(W))
            setattr(self, f"b{gate}", nn.Parameter(torch.zeros(d_h, dtype=DTYPE)))

    def weights(self) -> dict[str, torch.Tensor]:
        return {k: getattr(self, k) for k in ("Wz", "Wr", "Wh", "bz", "br", "bh")}

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        return gru_step(x, h, self.weights())

    def run(self, x: torch.Tensor, h0: torch.Tensor, reverse: bool = False) -> torch.Tensor:
        """Hidden states after each step of a (B, L, d_x) sequence, shape (B, L, d_h).

        Same update as ``gru_step``; the input halves of the gate pre-activations
        are computed for the whole sequence up front.
        """
        d_x, H = x.shape[-1], self.d_h
        if self.Wz.shape[0] != d_x + H:
            raise ContractError(f"input width {d_x} does not match the cell")
        px = x @ torch.cat([self.Wz[:d_x], self.Wr[:d_x], self.Wh[:d_x]], dim=1) \
            + torch.cat([self.bz, self.br, self.bh])
        W_zr = torch.cat([self.Wz[d_x:], self.Wr[d_x:]], dim=1)
        W_h = self.Wh[d_x:]
        L = x.shape[1]
        order = range(L - 1, -1, -1) if reverse else range(L)
        h, out = h0, [None] * L
        for t in order:
            p = px[:, t]
            zr = torch.sigmoid(p[:, : 2 * H] + h @ W_zr)
            z, r = zr[:, :H], zr[:, H:]
            h_tilde = torch.tanh(p[:, 2 * H:] + (r * h) @ W_h)
            h = h + z * (h_tilde - h)
            out[t] = h
        return torch.stack(out, dim=1)


# --- log-densities --------------------------------------------------------

def log_softmax(logits: torch.Tensor) -> torch.Tensor:
    m = logits.max(dim=-1, keepdim=True).values.detach()
    shifted = logits - m
    return shifted - torch.log(torch.exp(shifted).sum(dim=-1, keepdim=True))


def logprob_categorical(logits: torch.Tensor, index) -> torch.Tensor:
    """log softmax(logits)[index], batched over leading dims."""
    index = torch.as_tensor(index, dtype=torch.long)
    n = logits.shape[-1]
    if index.numel() and (int(index.min()) < 0 or int(index.max()) >= n):
        raise ContractError(f"index out of range for {n} categories")
    lp = log_softmax(logits)
    if index.dim() == 0 and lp.dim() == 1:
        return lp[index]
    return lp.gather(-1, index.unsqueeze(-1)).squeeze(-1)


def logprob_gaussian(mean: torch.Tensor, log_std: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Diagonal Gaussian log-density summed over the last dimension."""
    if mean.shape != log_std.shape or mean.shape != x.shape:
        raise ContractError(f"shapes differ: {tuple(mean.shape)}, {tuple(log_std.shape)}, {tuple(x.shape)}")
    z = (x - mean) * torch.exp(-log_std)
    return (-0.5 * z * z - log_std - 0.5 * LOG_2PI).sum(dim=-1)


def entropy_categorical(logits: torch.Tensor) -> torch.Tensor:
    lp = log_softmax(logits)
    return -(lp.exp() * lp).sum(dim=-1)


# --- checkpoints ----------------------------------------------------------

def save_params(params: Mapping[str, torch.Tensor], path: str | Path) -> None:
    """Write a versioned .npz checkpoint (name -> float64 array, bit-exact)."""
    arrays = {f"p:{name}": t.detach().cpu().numpy().astype(np.float64) for name, t in params.items()}
    arrays["__version__"] = np.array(CHECKPOINT_VERSION, dtype=np.int64)
    arrays["__names__"] = np.array(list(params.keys()))
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_params(path: str | Path) -> "OrderedDict[str, torch.Tensor]":
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        names = [str(n) for n in data["__names__"]]
        return OrderedDict((n, torch.from_numpy(data[f"p:{n}"].copy())) for n in names)
