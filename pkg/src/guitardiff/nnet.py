"""Tiny conditional denoiser network with hand-written reverse-mode
gradients and an Adam training loop.

The network maps (scaled noisy mel, noise-level embedding, roll condition)
to the residual target of the diffusion objective: token embeddings feed a
condition projection, a sinusoidal noise-level projection feeds every block,
and a fixed stack of kernel-3 convolutions over frames does the work. The
output projection starts at zero so early training is stable.
"""

from __future__ import annotations

import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import TrainSigmaSampler, precondition
from .dsp import NormStats
from .rolls import N_TOKENS

MEL_ROWS = 128
NOISE_FREQS = 64
KERNEL = 3

CHECKPOINT_MAGIC = b"GDNC"
CHECKPOINT_VERSION = 1

_NOISE_OMEGA = np.geomspace(1.0, 1000.0, NOISE_FREQS)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def silu(z: np.ndarray) -> np.ndarray:
    return z * _sigmoid(z)


def silu_grad(z: np.ndarray) -> np.ndarray:
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def noise_features(c_noise: np.ndarray) -> np.ndarray:
    """Sinusoidal features of the noise-level input, shape (..., 2*NOISE_FREQS)."""
    phase = np.asarray(c_noise)[..., None] * _NOISE_OMEGA
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


class DenoiserNet:
    """Parameters plus forward/backward for the conditional denoiser."""

    def __init__(self, embed_dim: int = 32, hidden: int = 128, depth: int = 4,
                 seed: int = 0, dtype=np.float32):
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.depth = depth
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)

        def he_uniform(*shape):
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            limit = np.sqrt(6.0 / fan_in)
            return rng.uniform(-limit, limit, shape).astype(self.dtype)

        p: dict[str, np.ndarray] = {}
        p["embed"] = he_uniform(N_TOKENS, embed_dim)
        p["cond_w"] = he_uniform(hidden, 6 * embed_dim)
        p["cond_b"] = np.zeros(hidden, self.dtype)
        p["noise_w"] = he_uniform(hidden, 2 * NOISE_FREQS)
        p["noise_b"] = np.zeros(hidden, self.dtype)
        for k in range(depth):
            in_ch = MEL_ROWS if k == 0 else hidden
            p[f"conv{k}_w"] = he_uniform(hidden, in_ch, KERNEL)
            p[f"conv{k}_b"] = np.zeros(hidden, self.dtype)
        p["out_w"] = np.zeros((MEL_ROWS, hidden), self.dtype)
        p["out_b"] = np.zeros(MEL_ROWS, self.dtype)
        self.params = p
        self._cache = None

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    @staticmethod
    def _batched(x: np.ndarray, c_noise, roll: np.ndarray):
        """Promote single-example inputs to batch form; remember if we did."""
        single = x.ndim == 2
        if single:
            x = x[None]
            roll = roll[None]
        c_noise = np.atleast_1d(np.asarray(c_noise, dtype=np.float64))
        if c_noise.shape == (1,) and x.shape[0] > 1:
            c_noise = np.repeat(c_noise, x.shape[0])
        return x, c_noise, roll, single

    def forward(self, x_in: np.ndarray, c_noise, roll: np.ndarray) -> np.ndarray:
        """Run the network; activations are kept for a following backward().

        x_in: (128, L) or (B, 128, L); c_noise: scalar or (B,);
        roll: (6, L) or (B, 6, L) integer tokens in [0, 85].
        """
        x, c_noise, roll, single = self._batched(x_in, c_noise, roll)
        if not np.isfinite(x).all():
            raise ValueError("non-finite network input")
        roll = np.asarray(roll)
        if roll.min() < 0 or roll.max() >= N_TOKENS:
            raise ValueError(f"condition tokens outside [0, {N_TOKENS - 1}]")
        p = self.params
        x = x.astype(self.dtype, copy=False)
        batch, _, length = x.shape

        emb = p["embed"][roll]                                   # (B, 6, L, D)
        cond6d = emb.transpose(0, 1, 3, 2).reshape(batch, 6 * self.embed_dim, length)
        u_cond = np.matmul(p["cond_w"], cond6d) + p["cond_b"][:, None]
        feats = noise_features(c_noise).astype(self.dtype)       # (B, 2F)
        u_noise = feats @ p["noise_w"].T + p["noise_b"]          # (B, H)
        inject = u_cond + u_noise[:, :, None]

        h = x
        pads, zs = [], []
        for k in range(self.depth):
            h_pad = np.pad(h, ((0, 0), (0, 0), (1, 1)))
            z = inject + p[f"conv{k}_b"][:, None]
            w = p[f"conv{k}_w"]
            for j in range(KERNEL):
                z = z + np.matmul(w[:, :, j], h_pad[:, :, j:j + length])
            pads.append(h_pad)
            zs.append(z)
            h = silu(z)
        y = np.matmul(p["out_w"], h) + p["out_b"][:, None]

        self._cache = dict(roll=roll, cond6d=cond6d, feats=feats,
                           pads=pads, zs=zs, h_last=h, length=length)
        return y[0] if single else y

    def backward(self, dy: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of sum(dy * output) with respect to every parameter."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        cache, p = self._cache, self.params
        if dy.ndim == 2:
            dy = dy[None]
        dy = dy.astype(self.dtype, copy=False)
        length = cache["length"]
        g = {}

        g["out_w"] = np.tensordot(dy, cache["h_last"], axes=([0, 2], [0, 2]))
        g["out_b"] = dy.sum(axis=(0, 2))
        dh = np.matmul(p["out_w"].T, dy)

        d_inject = np.zeros_like(dh)
        for k in range(self.depth - 1, -1, -1):
            dz = dh * silu_grad(cache["zs"][k])
            g[f"conv{k}_b"] = dz.sum(axis=(0, 2))
            d_inject += dz
            w = p[f"conv{k}_w"]
            h_pad = cache["pads"][k]
            gw = np.empty_like(w)
            dh_pad = np.zeros_like(h_pad)
            for j in range(KERNEL):
                gw[:, :, j] = np.tensordot(dz, h_pad[:, :, j:j + length],
                                           axes=([0, 2], [0, 2]))
                dh_pad[:, :, j:j + length] += np.matmul(w[:, :, j].T, dz)
            g[f"conv{k}_w"] = gw
            dh = dh_pad[:, :, 1:1 + length]

        g["cond_w"] = np.tensordot(d_inject, cache["cond6d"], axes=([0, 2], [0, 2]))
        g["cond_b"] = d_inject.sum(axis=(0, 2))
        du_noise = d_inject.sum(axis=2)                          # (B, H)
        g["noise_w"] = du_noise.T @ cache["feats"]
        g["noise_b"] = du_noise.sum(axis=0)

        d_cond6d = np.matmul(p["cond_w"].T, d_inject)            # (B, 6D, L)
        batch = d_cond6d.shape[0]
        d_emb = d_cond6d.reshape(batch, 6, self.embed_dim, length)
        d_emb = d_emb.transpose(0, 1, 3, 2).reshape(-1, self.embed_dim)
        g["embed"] = np.zeros_like(p["embed"])
        np.add.at(g["embed"], cache["roll"].ravel(), d_emb)
        return g

    def as_net_fn(self):
        """Adapter matching the diffusion NetFn signature (cond = roll tokens)."""
        def net(x_in: np.ndarray, c_noise: float, cond) -> np.ndarray:
            return self.forward(np.asarray(x_in), c_noise, cond)
        return net


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, np.ndarray]:
    """Standard bias-corrected Adam update, in place."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for key, p in params.items():
        gr = grads[key]
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        state.m[key] = state.beta1 * state.m[key] + (1.0 - state.beta1) * gr
        state.v[key] = state.beta2 * state.v[key] + (1.0 - state.beta2) * (gr * gr)
        m_hat = state.m[key] / bc1
        v_hat = state.v[key] / bc2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
    return params


def batched_loss_and_grad(net: DenoiserNet, mels: np.ndarray, rolls: np.ndarray,
                          rng: np.random.Generator, sigma_data: float,
                          sigma_sampler: TrainSigmaSampler = TrainSigmaSampler(),
                          ) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """One training objective evaluation over a batch, with gradients.

    Matches diffusion.training_loss draw-for-draw (sigmas first, then the
    noise field) so the two stay interchangeable.
    """
    batch = mels.shape[0]
    sigmas = sigma_sampler.draw(rng, batch)
    eps = rng.standard_normal(mels.shape)
    coeffs = [precondition(float(s), sigma_data) for s in sigmas]
    c_in = np.array([c.c_in for c in coeffs])[:, None, None]
    c_skip = np.array([c.c_skip for c in coeffs])[:, None, None]
    c_out = np.array([c.c_out for c in coeffs])[:, None, None]
    c_noise = np.array([c.c_noise for c in coeffs])

    x = mels + sigmas[:, None, None] * eps
    pred = net.forward((c_in * x).astype(net.dtype), c_noise, rolls)
    target = ((mels - c_skip * x) / c_out).astype(net.dtype)
    resid = pred - target
    loss = float((resid.astype(np.float64) ** 2).mean())
    grads = net.backward(2.0 * resid / resid.size)
    return loss, grads, sigmas


@dataclass
class TrainConfig:
    steps: int = 20000
    batch: int = 16
    lr: float = 1e-4
    cond_dropout: float = 0.1
    sigma_data: float = 0.1
    p_mean: float = -3.0
    p_std: float = 1.0
    seed: int = 0
    log_every: int = 10


def train(dataset: list[tuple[np.ndarray, np.ndarray]], net: DenoiserNet,
          cfg: TrainConfig, loss_log: list[tuple[int, float, float]] | None = None,
          quiet: bool = False) -> DenoiserNet:
    """Adam-train the denoiser on (normalized mel, roll) pairs.

    Conditions are dropped (zeroed) with probability cond_dropout per example
    so the same network serves classifier-free guidance. Appends
    (step, loss, sigma_mean) rows to loss_log every log_every steps.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    sampler = TrainSigmaSampler(cfg.p_mean, cfg.p_std)
    mels = np.stack([m for m, _ in dataset]).astype(net.dtype)
    rolls = np.stack([r for _, r in dataset])
    if not quiet:
        print(f"training denoiser: {net.param_count()} parameters, "
              f"{len(dataset)} examples, {cfg.steps} steps", file=sys.stderr)
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, len(dataset), cfg.batch)
        batch_rolls = rolls[idx].copy()
        drop = rng.random(cfg.batch) < cfg.cond_dropout
        batch_rolls[drop] = 0
        loss, grads, sigmas = batched_loss_and_grad(
            net, mels[idx], batch_rolls, rng, cfg.sigma_data, sampler)
        adam_step(net.params, grads, state)
        if loss_log is not None and (step % cfg.log_every == 0 or step == 1):
            loss_log.append((step, loss, float(sigmas.mean())))
        if not quiet and step % 1000 == 0:
            print(f"  step {step}: loss {loss:.5f}", file=sys.stderr)
    return net


def save_checkpoint(net: DenoiserNet, path, norm: NormStats = NormStats()) -> None:
    """Versioned binary checkpoint with named float32 parameter blocks."""
    blocks = dict(net.params)
    blocks["norm_mean"] = np.array([norm.mean], dtype=np.float32)
    blocks["norm_scale"] = np.array([norm.scale], dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIIIQ", CHECKPOINT_VERSION, net.embed_dim,
                             net.hidden, net.depth, net.param_count()))
        for name, arr in blocks.items():
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes(order="C"))


def load_checkpoint(path) -> tuple[DenoiserNet, NormStats]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a denoiser checkpoint (bad magic)")
    version, embed_dim, hidden, depth, count = struct.unpack("<IIIIQ", data[4:28])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 28
    blocks: dict[str, np.ndarray] = {}
    while pos < len(data):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        blocks[name] = np.frombuffer(data, dtype="<f4", count=size,
                                     offset=pos).reshape(shape).copy()
        pos += 4 * size
    norm = NormStats(float(blocks.pop("norm_mean")[0]),
                     float(blocks.pop("norm_scale")[0]))
    net = DenoiserNet(embed_dim=embed_dim, hidden=hidden, depth=depth)
    for name in net.params:
        if name not in blocks:
            raise ValueError(f"{path}: missing parameter block {name!r}")
        if blocks[name].shape != net.params[name].shape:
            raise ValueError(f"{path}: shape mismatch for {name!r}")
        net.params[name] = blocks[name]
    if net.param_count() != count:
        raise ValueError(f"{path}: parameter count mismatch")
    return net, norm
