"""Concrete-autoencoder mask learning.

A concrete selector layer of ``k`` neurons picks channel positions through a
Gumbel-softmax relaxation whose temperature is annealed towards zero; a small
dense decoder reconstructs the full tensor from the selected entries. After
training, each neuron's most likely position becomes one entry of the mask.

Selection works on the Na*Nc complex positions: a neuron that selects a
position passes on both its real and imaginary part.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizationError
from .masking import Mask, mask_from_positions
from .nn import AdamState, adam_step
from .numerics import complex_to_real

log = logging.getLogger(__name__)


def gumbel_sample(u):
    """Inverse-CDF Gumbel draw ``-log(-log u)`` for u in (0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0) or np.any(u >= 1):
        raise ValueError("u must lie strictly inside (0, 1)")
    g = -np.log(-np.log(u))
    return float(g) if g.ndim == 0 else g


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class AnnealSchedule:
    t_start: float = 10.0
    t_end: float = 0.01
    epochs: int = 100

    def temperature(self, progress: float) -> float:
        """Exponential interpolation, progress in [0, 1]."""
        progress = min(max(progress, 0.0), 1.0)
        return self.t_start * (self.t_end / self.t_start) ** progress


@dataclass
class ConcreteSelectorParams:
    logits: np.ndarray  # (k, positions) = log alpha
    temperature: float = 10.0

    def __post_init__(self):
        if self.logits.ndim != 2:
            raise ValueError("logits must be (k, positions)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.logits.shape[0] > self.logits.shape[1]:
            raise ValueError("cannot select more neurons than positions")

    @classmethod
    def from_alphas(cls, alphas, temperature: float = 10.0):
        a = np.asarray(alphas, dtype=np.float64)
        if np.any(a <= 0):
            raise ValueError("alphas must be positive")
        return cls(np.log(np.atleast_2d(a)), temperature)

    @property
    def alphas(self) -> np.ndarray:
        return np.exp(self.logits)

    @property
    def k(self) -> int:
        return self.logits.shape[0]


def relaxation_weights(params: ConcreteSelectorParams, gumbel: np.ndarray | None = None) -> np.ndarray:
    """``m^(i) = softmax((log alpha^(i) + g) / T)`` for every neuron, shape (k, positions)."""
    g = 0.0 if gumbel is None else gumbel
    return softmax((params.logits + g) / params.temperature, axis=-1)


def selector_forward(params: ConcreteSelectorParams, x: np.ndarray, mode: str = "train",
                     gumbel: np.ndarray | None = None):
    """Selected features and the relaxation weights.

    ``x`` is (positions,), (positions, c) or (batch, positions, c). In train
    mode neuron i outputs ``<m^(i), x>`` per channel; in infer mode it outputs
    ``x[argmax alpha^(i)]`` and the weights are one-hot.
    """
    x = np.asarray(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.shape[-2] != params.logits.shape[1]:
        raise ValueError(f"input has {x.shape[-2]} positions, selector expects {params.logits.shape[1]}")
    if mode == "train":
        m = relaxation_weights(params, gumbel)
    elif mode == "infer":
        m = np.zeros_like(params.logits)
        m[np.arange(params.k), np.argmax(params.logits, axis=1)] = 1.0
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    z = m @ x
    return (z[..., 0] if squeeze else z), m


def selector_backward(grad_z: np.ndarray, x: np.ndarray, m: np.ndarray, temperature: float):
    """Gradients ``(grad_logits, grad_x)`` of the train-mode selector."""
    x = np.asarray(x)
    gz = np.asarray(grad_z)
    if x.ndim == 1:
        x = x[:, None]
        gz = gz[:, None]
    grad_x = m.T @ gz
    grad_m = np.tensordot(gz.reshape(-1, *gz.shape[-2:]), x.reshape(-1, *x.shape[-2:]), axes=([0, 2], [0, 2]))
    inner = (grad_m * m).sum(axis=1, keepdims=True)
    grad_logits = m * (grad_m - inner) / temperature
    if np.asarray(grad_z).ndim == 1:
        grad_x = grad_x[..., 0]
    return grad_logits, grad_x


def export_positions(logits: np.ndarray) -> np.ndarray:
    """One distinct position per neuron.

    Neurons are visited in order of their confidence; a neuron whose best
    position is already taken falls back to its next most likely free position.
    """
    k, p = logits.shape
    if k > p:
        raise OptimizationError("more neurons than positions; cannot export distinct selections")
    ranked = np.argsort(-logits, axis=1, kind="stable")
    conf = logits.max(axis=1)
    taken: set[int] = set()
    chosen = np.empty(k, dtype=int)
    for i in np.argsort(-conf, kind="stable"):
        for pos in ranked[i]:
            if pos not in taken:
                taken.add(int(pos))
                chosen[i] = pos
                break
        else:  # pragma: no cover - unreachable while k <= p
            raise OptimizationError("duplicate resolution failed")
    return chosen


@dataclass
class CaeResult:
    mask: Mask
    selector: ConcreteSelectorParams
    decoder: dict
    loss: list[float] = field(default_factory=list)
    sharpness: list[float] = field(default_factory=list)
    temperatures: list[float] = field(default_factory=list)
    attempts: int = 1

    def curve_rows(self):
        return [(e + 1, l, s, t) for e, (l, s, t) in enumerate(zip(self.loss, self.sharpness, self.temperatures))]


def _decoder_forward(dec: dict, z: np.ndarray):
    h_pre = z @ dec["w1"] + dec["b1"]
    h = np.maximum(h_pre, 0.0)
    return h @ dec["w2"] + dec["b2"], h_pre, h


def _fit(x_all: np.ndarray, k: int, hidden: int, schedule: AnnealSchedule, batch_size: int, lr: float,
         rng: np.random.Generator, init_scale: float) -> CaeResult:
    n, p, c = x_all.shape

    def glorot(fi, fo):
        lim = math.sqrt(6.0 / (fi + fo))
        return rng.uniform(-lim, lim, size=(fi, fo))

    selector = ConcreteSelectorParams(init_scale * rng.standard_normal((k, p)), schedule.t_start)
    dec = {"w1": glorot(k * c, hidden), "b1": np.zeros(hidden),
           "w2": glorot(hidden, p * c), "b2": np.zeros(p * c)}
    state = AdamState(lr=lr)
    steps_per_epoch = max(1, -(-n // batch_size))
    total_steps = schedule.epochs * steps_per_epoch
    result = CaeResult(mask=None, selector=selector, decoder=dec)
    step = 0
    for epoch in range(schedule.epochs):
        order = rng.permutation(n)
        losses, sharp = [], []
        for s in range(steps_per_epoch):
            xb = x_all[order[s * batch_size:(s + 1) * batch_size]]
            selector.temperature = schedule.temperature(step / max(total_steps - 1, 1))
            # one Gumbel draw per neuron and position, shared by the batch
            g = gumbel_sample(rng.uniform(0.0, 1.0, size=selector.logits.shape).clip(1e-300, 1 - 1e-16))
            z, m = selector_forward(selector, xb, "train", g)
            bsz = len(xb)
            out, h_pre, h = _decoder_forward(dec, z.reshape(bsz, -1))
            diff = out - xb.reshape(bsz, -1)
            losses.append(float(np.mean(diff ** 2)))
            sharp.append(float(m.max(axis=1).mean()))
            gout = 2.0 * diff / diff.size
            grads = {"w2": h.T @ gout, "b2": gout.sum(0)}
            gh = (gout @ dec["w2"].T) * (h_pre > 0)
            grads["w1"] = z.reshape(bsz, -1).T @ gh
            grads["b1"] = gh.sum(0)
            gz = (gh @ dec["w1"].T).reshape(z.shape)
            grads["logits"], _ = selector_backward(gz, xb, m, selector.temperature)
            params = dict(dec, logits=selector.logits)
            adam_step(params, grads, state)
            selector.logits = params.pop("logits")
            dec.update(params)
            step += 1
        result.loss.append(float(np.mean(losses)))
        result.sharpness.append(float(np.mean(sharp)))
        result.temperatures.append(selector.temperature)
    return result


def train_cae(data: np.ndarray, k: int, hidden: int | None = None, schedule: AnnealSchedule | None = None,
              batch_size: int = 32, lr: float = 1e-2, seed: int = 0, shape: tuple[int, int] | None = None,
              init_scale: float = 0.01, retries: int = 2) -> CaeResult:
    """Train selector and decoder end-to-end on reconstruction of ``data``.

    ``data`` is a complex (N, Na, Nc) stack or a real (N, positions, c) array.
    A neuron that has not settled often shares its argmax with another one; when
    that happens training restarts with twice the epochs, up to ``retries``
    times. Collisions left after the last attempt are resolved at export, so the
    mask always keeps exactly ``k`` distinct positions.
    """
    data = np.asarray(data)
    if np.iscomplexobj(data):
        if data.ndim != 3:
            raise ValueError("complex data must be (N, Na, Nc)")
        shape = data.shape[1:]
        x_all = complex_to_real(data).reshape(len(data), -1, 2)
    else:
        x_all = data if data.ndim == 3 else data[..., None]
        if shape is None:
            raise ValueError("real input needs the (Na, Nc) shape for mask export")
    n, p, c = x_all.shape
    if n == 0:
        raise ValueError("empty dataset")
    if not 1 <= k <= p:
        raise ValueError(f"k must be in [1, {p}]")
    if retries < 0:
        raise ValueError("retries must be nonnegative")
    schedule = schedule or AnnealSchedule()
    hidden = hidden or 4 * k
    x_all = x_all.astype(np.float64)
    scale = float(np.sqrt(np.mean(x_all ** 2))) or 1.0
    x_all = x_all / scale
    for attempt in range(retries + 1):
        sched = AnnealSchedule(schedule.t_start, schedule.t_end, schedule.epochs * 2 ** attempt)
        result = _fit(x_all, k, hidden, sched, batch_size, lr, np.random.default_rng([seed, attempt]), init_scale)
        result.attempts = attempt + 1
        if len(set(np.argmax(result.selector.logits, axis=1).tolist())) == k:
            break
        log.info("CAE attempt %d ended with colliding selections", attempt + 1)
    positions = export_positions(result.selector.logits)
    result.mask = mask_from_positions(shape[0], shape[1], positions)
    return result
