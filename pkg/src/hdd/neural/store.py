"""Named parameter storage, Adam updates, and the HDDW1 checkpoint format."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"HDDW1\n"


class ParamStore:
    """Parameters with matching gradient and Adam moment buffers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def accumulate(self, name: str, grad):
        self.grads[name] += grad

    def check_grads(self):
        for name, g in self.grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def restore(self, values: dict[str, np.ndarray]):
        for k, v in values.items():
            self.params[k][...] = v


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(store: ParamStore, hyper: AdamConfig = AdamConfig()) -> ParamStore:
    """Bias-corrected adaptive-moment update, in place."""
    store.step += 1
    t = store.step
    b1, b2 = hyper.beta1, hyper.beta2
    for name, p in store.params.items():
        g = store.grads[name]
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p -= hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return store


def save_checkpoint(store: ParamStore, path) -> None:
    """Magic, manifest length, manifest (name, shape, byte offset), float64 payload."""
    lines, chunks, offset = [], [], 0
    for name in store.names():
        arr = np.array(store.params[name], dtype="<f8", order="C")  # keeps 0-d shape
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"{name}\t{shape}\t{offset}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not an HDDW1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    (mlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    manifest = raw[pos:pos + mlen].decode("utf-8")
    payload = pos + mlen
    out = {}
    for line in manifest.splitlines():
        name, shape, offset = line.split("\t")
        dims = tuple(int(s) for s in shape.split(",")) if shape else ()
        count = int(np.prod(dims)) if dims else 1
        out[name] = np.frombuffer(raw, dtype="<f8", count=count,
                                  offset=payload + int(offset)).reshape(dims).copy()
    return out


def gradient_check(loss_fn, store: ParamStore, eps: float = 1e-5, names=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` must return the loss and leave analytic gradients in
    ``store.grads``; it is re-run with each coordinate nudged by +-eps.
    """
    store.zero_grad()
    loss_fn()
    analytic = {k: g.copy() for k, g in store.grads.items()}
    worst = 0.0
    for name in names or store.names():
        p = store.params[name]
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_fn()
            flat[j] = orig - eps
            down = loss_fn()
            flat[j] = orig
            num = (up - down) / (2 * eps)
            ana = analytic[name].reshape(-1)[j]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    store.zero_grad()
    return worst
