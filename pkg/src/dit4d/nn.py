"""Parameters, module tree, layers, Adam, and the checkpoint format.

Parameters carry a dotted path name (assigned from the module tree) and a
group label in {spatial, view, temporal, conditioning} used for
modality-gated training. A frozen parameter still receives gradients but
is never updated by the optimizer.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from typing import Callable, Iterator, Optional

import numpy as np

from .tensor import ContractError, ShapeError, Tensor, conv2d, gelu, layer_norm, linear

GROUPS = ("spatial", "view", "temporal", "conditioning")


class Parameter:
    def __init__(self, data: np.ndarray, group: str, frozen: bool = False):
        if group not in GROUPS:
            raise ContractError(f"unknown parameter group {group!r}")
        self.tensor = Tensor(data, requires_grad=True)
        self.group = group
        self.frozen = frozen
        self.name = ""  # assigned once the owning model finalizes

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def assign(self, data: np.ndarray) -> None:
        if data.shape != self.tensor.shape:
            raise ShapeError(f"assign shape {data.shape} != {self.tensor.shape}")
        self.tensor = Tensor(data, requires_grad=True)

    def __repr__(self):
        return f"Parameter({self.name or '?'}, shape={self.tensor.shape}, group={self.group})"


class Module:
    """Minimal module tree; submodules/parameters register via attributes."""

    def __setattr__(self, key, value):
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}{i}")
                    elif isinstance(item, Parameter):
                        yield f"{path}{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def finalize_names(self) -> None:
        seen = {}
        for name, p in self.named_parameters():
            if name in seen:
                raise ContractError(f"duplicate parameter name {name}")
            seen[name] = p
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.tensor.grad = None


def param_groups(model: Module) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {g: [] for g in GROUPS}
    for name, p in model.named_parameters():
        out[p.group].append(name)
    return out


# -- layers ---------------------------------------------------------------------


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, group: str, rng: np.random.Generator,
                 zero_init: bool = False, init_scale: Optional[float] = None,
                 frozen: bool = False):
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            std = init_scale if init_scale is not None else 1.0 / np.sqrt(d_in)
            w = rng.normal(0.0, std, size=(d_in, d_out))
        self.w = Parameter(w, group, frozen=frozen)
        self.b = Parameter(np.zeros(d_out), group, frozen=frozen)

    def __call__(self, x) -> Tensor:
        return linear(x, self.w.tensor, self.b.tensor)


class LayerNorm(Module):
    def __init__(self, dim: int, group: str, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim), group)
        self.beta = Parameter(np.zeros(dim), group)
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gamma.tensor, self.beta.tensor, self.eps)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, group: str,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 zero_init: bool = False, frozen: bool = False):
        fan_in = c_in * kernel * kernel
        if zero_init:
            w = np.zeros((c_out, c_in, kernel, kernel))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, kernel, kernel))
        self.w = Parameter(w, group, frozen=frozen)
        self.b = Parameter(np.zeros(c_out), group, frozen=frozen)
        self.stride = stride
        self.padding = padding

    def __call__(self, x) -> Tensor:
        return conv2d(x, self.w.tensor, self.b.tensor, stride=self.stride, padding=self.padding)


class MLP(Module):
    """Two-layer feed-forward with GELU."""

    def __init__(self, dim: int, hidden: int, group: str, rng: np.random.Generator,
                 zero_init_out: bool = False, out_init_scale: Optional[float] = None,
                 d_out: Optional[int] = None):
        self.fc1 = Linear(dim, hidden, group, rng)
        self.fc2 = Linear(hidden, d_out or dim, group, rng, zero_init=zero_init_out,
                          init_scale=out_init_scale)

    def __call__(self, x) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


# -- optimizer -------------------------------------------------------------------


class Adam:
    """Adam with element-wise gradient clipping and group gating.

    ``step(allowed_groups)`` updates only unfrozen parameters whose group is
    allowed; everything else (values and moments) stays bit-identical.
    """

    def __init__(self, params: list[Parameter], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 clip: float = 1.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip = clip
        self.m = [np.zeros(p.tensor.shape) for p in self.params]
        self.v = [np.zeros(p.tensor.shape) for p in self.params]
        self.t = [0] * len(self.params)

    def step(self, allowed_groups=None) -> None:
        for i, p in enumerate(self.params):
            if p.frozen or p.tensor.grad is None:
                continue
            if allowed_groups is not None and p.group not in allowed_groups:
                continue
            g = p.tensor.grad
            if self.clip is not None:
                g = np.clip(g, -self.clip, self.clip)
            self.t[i] += 1
            t = self.t[i]
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1 ** t)
            vhat = self.v[i] / (1 - self.b2 ** t)
            p.assign(p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps))

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.grad = None


# -- checkpoint format ------------------------------------------------------------

_MAGIC = b"D4CK"


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def save_checkpoint(path: str, model: Module, config: dict) -> None:
    """Single file: magic, uint64 header length, JSON header, float64 LE payload.

    A copy of the architecture config is written next to it as
    ``<path>.config.json``; its hash is embedded in the header.
    """
    entries = {}
    payload = bytearray()
    for name, p in model.named_parameters():
        if not name:
            raise ContractError("model has unnamed parameters; call finalize_names()")
        arr = np.ascontiguousarray(p.data, dtype="<f8")
        entries[name] = {"shape": list(p.tensor.shape), "group": p.group,
                         "offset": len(payload)}
        payload.extend(arr.tobytes())
    header = json.dumps({"format": "dit4d-checkpoint-v1",
                         "config_hash": config_hash(config),
                         "params": entries}).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(bytes(payload))
    os.replace(tmp, path)
    cfg_tmp = path + ".config.json.tmp"
    with open(cfg_tmp, "w") as f:
        json.dump(config, f, indent=2)
    os.replace(cfg_tmp, path + ".config.json")


def load_checkpoint(path: str, model: Module, config: dict) -> None:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ContractError(f"{path} is not a dit4d checkpoint")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        payload = f.read()
    if header.get("config_hash") != config_hash(config):
        raise ContractError("checkpoint config hash does not match the constructed model")
    entries = header["params"]
    for name, p in model.named_parameters():
        if name not in entries:
            raise ContractError(f"checkpoint missing parameter {name}")
        meta = entries[name]
        shape = tuple(meta["shape"])
        if shape != p.tensor.shape:
            raise ShapeError(f"checkpoint shape {shape} != model shape {p.tensor.shape} for {name}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=meta["offset"])
        p.assign(arr.reshape(shape).astype(np.float64))


# -- finite-difference gradient checking -------------------------------------------


def finite_diff_check(loss_fn: Callable[[], Tensor], params: list[Parameter],
                      h: float = 1e-5, entries_per_param: Optional[int] = 3,
                      rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between analytic grads and central differences.

    ``entries_per_param=None`` sweeps every entry (use on small tensors only).
    Relative error uses max(|analytic|, |numeric|, 1e-4) as the scale so
    roundoff-dominated near-zero derivatives are judged absolutely.
    """
    from .tensor import backward

    rng = rng or np.random.default_rng(0)
    for p in params:
        p.tensor.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = [None if p.tensor.grad is None else p.tensor.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        n = p.tensor.size
        if entries_per_param is None or entries_per_param >= n:
            idxs = np.arange(n)
        else:
            idxs = rng.choice(n, size=entries_per_param, replace=False)
        base = p.data.copy()
        for idx in idxs:
            flat = base.ravel().copy()
            flat[idx] = base.ravel()[idx] + h
            p.assign(flat.reshape(base.shape))
            up = loss_fn().item()
            flat[idx] = base.ravel()[idx] - h
            p.assign(flat.reshape(base.shape))
            down = loss_fn().item()
            numeric = (up - down) / (2 * h)
            a = 0.0 if ga is None else float(ga.ravel()[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            worst = max(worst, err)
        p.assign(base)
    return worst
