"""Reduced-observation walking policy.

A small MLP maps (desired speed, windowed average speed, windowed average
speed error) to the 20 free Bezier coefficients and, in the 21-output
variant, the PD derivative gain.  Hidden layers use tanh; the final layer is
a logistic sigmoid rescaled into each output's bound interval, so outputs are
strictly inside bounds for any parameters.

The MLP carries its own reverse-mode machinery (forward caches plus a
vector-Jacobian product on the pre-sigmoid output) so the PPO trainer needs
no external autodiff framework.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

OBS_DIM = 3
HIDDEN = (12, 12, 12)


@dataclass(frozen=True)
class Observation:
    v_d: float
    v_bar: float
    e_bar: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_d, self.v_bar, self.e_bar])


class ObsWindow:
    """Ring buffer of recent instantaneous hip velocities plus the current
    desired speed.  Averages run over min(filled, capacity) entries."""

    def __init__(self, capacity: int = 200, v_d: float = 1.0):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self.v_d = v_d
        self._buf = np.zeros(capacity)
        self._n = 0
        self._idx = 0

    def reset(self) -> None:
        self._n = 0
        self._idx = 0

    def push(self, v: float) -> None:
        self._buf[self._idx] = v
        self._idx = (self._idx + 1) % self.capacity
        self._n = min(self._n + 1, self.capacity)

    def __len__(self) -> int:
        return self._n

    @property
    def v_bar(self) -> float:
        if self._n == 0:
            raise ValueError("observation window is empty")
        return float(np.mean(self._buf[: self._n]))


def observe(window: ObsWindow) -> Observation:
    v_bar = window.v_bar
    return Observation(v_d=window.v_d, v_bar=v_bar, e_bar=window.v_d - v_bar)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Mlp:
    """Dense tanh network with a linear head and manual reverse mode."""

    def __init__(self, sizes, weights=None, biases=None):
        self.sizes = tuple(int(s) for s in sizes)
        if weights is None:
            self.weights = [np.zeros((o, i)) for i, o in zip(self.sizes, self.sizes[1:])]
            self.biases = [np.zeros(o) for o in self.sizes[1:]]
        else:
            self.weights = [np.asarray(w, float) for w in weights]
            self.biases = [np.asarray(b, float) for b in biases]
            for w, b, i, o in zip(self.weights, self.biases, self.sizes, self.sizes[1:]):
                if w.shape != (o, i) or b.shape != (o,):
                    raise ValueError("parameter shapes inconsistent with layer sizes")

    @staticmethod
    def random(sizes, rng: np.random.Generator, scale: float = 0.5) -> "Mlp":
        net = Mlp(sizes)
        for k, w in enumerate(net.weights):
            net.weights[k] = rng.normal(0.0, scale / np.sqrt(w.shape[1]), w.shape)
            net.biases[k] = np.zeros(w.shape[0])
        return net

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def unflatten(self, vec: np.ndarray) -> "Mlp":
        vec = np.asarray(vec, float)
        if vec.shape != (self.param_count(),):
            raise ValueError(f"expected {self.param_count()} parameters, got {vec.shape}")
        weights, biases, k = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[k:k + w.size].reshape(w.shape))
            k += w.size
            biases.append(vec[k:k + b.size])
            k += b.size
        return Mlp(self.sizes, weights, biases)

    def forward(self, x: np.ndarray):
        """Pre-activation output of the last layer plus caches for vjp."""
        h = np.asarray(x, float)
        acts = [h]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(w @ h + b)
            acts.append(h)
        z = self.weights[-1] @ h + self.biases[-1]
        return z, acts

    def vjp(self, acts, dz: np.ndarray) -> np.ndarray:
        """Flat gradient of dz . z(x) with respect to all parameters."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        g = np.asarray(dz, float)
        for k in range(len(self.weights) - 1, -1, -1):
            grads_w[k] = np.outer(g, acts[k])
            grads_b[k] = g.copy()
            if k > 0:
                g = (self.weights[k].T @ g) * (1.0 - acts[k] ** 2)
        parts = []
        for w, b in zip(grads_w, grads_b):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)


class PolicyParams:
    """Bounded-output MLP policy over the reduced observation.

    ``n_out = 21`` emits the 20 free coefficients plus the derivative gain;
    ``n_out = 20`` emits coefficients only and holds the gain at ``kd_fixed``.
    """

    def __init__(self, out_lo: np.ndarray, out_hi: np.ndarray,
                 kd_fixed: float = 10.0, mlp: Mlp | None = None):
        out_lo = np.asarray(out_lo, float)
        out_hi = np.asarray(out_hi, float)
        if out_lo.shape != out_hi.shape or out_lo.shape[0] not in (20, 21):
            raise ValueError("bounds must have 20 or 21 entries")
        if np.any(out_hi <= out_lo):
            raise ValueError("upper bounds must exceed lower bounds")
        self.out_lo = out_lo
        self.out_hi = out_hi
        self.n_out = out_lo.shape[0]
        self.kd_fixed = float(kd_fixed)
        sizes = (OBS_DIM, *HIDDEN, self.n_out)
        self.mlp = mlp if mlp is not None else Mlp(sizes)
        if self.mlp.sizes != sizes:
            raise ValueError(f"MLP sizes {self.mlp.sizes} do not match {sizes}")

    @staticmethod
    def create(out_lo, out_hi, kd_fixed: float = 10.0,
               rng: np.random.Generator | None = None,
               scale: float = 0.5) -> "PolicyParams":
        p = PolicyParams(out_lo, out_hi, kd_fixed)
        if rng is not None:
            p.mlp = Mlp.random(p.mlp.sizes, rng, scale)
        return p

    def param_count(self) -> int:
        return self.mlp.param_count()

    def flatten(self) -> np.ndarray:
        return self.mlp.flatten()

    def with_flat(self, vec: np.ndarray) -> "PolicyParams":
        return PolicyParams(self.out_lo, self.out_hi, self.kd_fixed,
                            self.mlp.unflatten(vec))

    def bound(self, z: np.ndarray) -> np.ndarray:
        """Map pre-sigmoid values into the output intervals."""
        return self.out_lo + (self.out_hi - self.out_lo) * sigmoid(z)

    def forward(self, obs: Observation) -> np.ndarray:
        z, _ = self.mlp.forward(obs.as_array())
        return self.bound(z)

    def act(self, obs: Observation) -> tuple[np.ndarray, float]:
        """(20 free Bezier coefficients, derivative gain)."""
        out = self.forward(obs)
        if self.n_out == 21:
            return out[:20], float(out[20])
        return out, self.kd_fixed

    def save(self, path) -> None:
        doc = {
            "sizes": list(self.mlp.sizes),
            "n_out": self.n_out,
            "kd_fixed": self.kd_fixed,
            "out_lo": self.out_lo.tolist(),
            "out_hi": self.out_hi.tolist(),
            "params": self.flatten().tolist(),
        }
        with open(path, "w") as f:
            json.dump(doc, f)
            f.write("\n")

    @staticmethod
    def load(path) -> "PolicyParams":
        with open(path) as f:
            doc = json.load(f)
        p = PolicyParams(np.asarray(doc["out_lo"]), np.asarray(doc["out_hi"]),
                         doc.get("kd_fixed", 10.0))
        if tuple(doc["sizes"]) != p.mlp.sizes:
            raise ValueError(f"checkpoint layer sizes {doc['sizes']} do not match {p.mlp.sizes}")
        p.mlp = p.mlp.unflatten(np.asarray(doc["params"], float))
        return p


class ConstantGaitPolicy:
    """Fixed free-coefficient vector and derivative gain; ignores the
    observation.  Stands in for a traditional fixed-gait controller."""

    def __init__(self, free: np.ndarray, kd: float):
        free = np.asarray(free, float)
        if free.shape != (20,):
            raise ValueError("expected 20 free coefficients")
        self.free = free
        self.kd = float(kd)

    def act(self, obs: Observation) -> tuple[np.ndarray, float]:
        return self.free, self.kd


def policy_output_bounds(joint_bounds, kd_range=None):
    """Assemble output bound vectors from the gait's joint bounds, appending
    the kd interval for the 21-output variant."""
    lo, hi = joint_bounds.free_bounds()
    if kd_range is not None:
        lo = np.concatenate([lo, [kd_range[0]]])
        hi = np.concatenate([hi, [kd_range[1]]])
    return lo, hi


def warm_start_policy(out_lo, out_hi, targets, kd_fixed: float = 10.0,
                      rng: np.random.Generator | None = None,
                      hidden_scale: float = 0.5) -> PolicyParams:
    """Policy whose initial output equals ``targets`` for every observation.

    Hidden layers are randomly initialized (they feed gradients once
    training grows the output weights), the output weights start at zero,
    and the output biases are set to the pre-sigmoid values that map onto
    ``targets``.  Useful for seeding training from a known-stable gait.
    """
    p = PolicyParams(out_lo, out_hi, kd_fixed)
    targets = np.asarray(targets, float)
    if targets.shape != p.out_lo.shape:
        raise ValueError(f"expected {p.out_lo.shape[0]} targets")
    frac = (targets - p.out_lo) / (p.out_hi - p.out_lo)
    if np.any(frac <= 0.0) or np.any(frac >= 1.0):
        raise ValueError("targets must lie strictly inside the output bounds")
    if rng is not None:
        p.mlp = Mlp.random(p.mlp.sizes, rng, hidden_scale)
    p.mlp.weights[-1][:] = 0.0
    p.mlp.biases[-1][:] = np.log(frac / (1.0 - frac))
    return p
