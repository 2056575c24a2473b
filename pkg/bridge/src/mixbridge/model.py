"""Deterministic tiny causal language model with a strength-scaled adapter.

One attention block plus an MLP over a 13-token vocabulary, all weights
drawn from a seeded generator, so every instantiation of the same
(model id, adapter id) pair is bit-identical.  The low-rank adapter's
contribution is multiplied by the request-time strength alpha at forward
time; weights are never merged, so switching strengths between requests
costs nothing.

Adapter placement decides cache behavior: with targets="mlp" the adapter
never touches the attention projections, so cached K/V rows are valid
under every alpha.  With targets="all" the K/V rows depend on alpha and
must be recomputed when it changes.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

VOCAB_SIZE = 13
D_MODEL = 16
D_FF = 32
RANK = 2
EOS_TOKEN = 0

_WEIGHT_SCALE = 0.3
_ADAPTER_SCALE = 0.6

TARGET_CHOICES = ("all", "mlp")


def _adapter_seed(adapter_id: str) -> int:
    digest = hashlib.md5(adapter_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def positional_encoding(pos: int) -> np.ndarray:
    angles = pos / (10000 ** (np.arange(D_MODEL // 2) * 2.0 / D_MODEL))
    return np.concatenate([np.sin(angles), np.cos(angles)])


class StubModel:
    """The 'stub:tiny' model: deterministic weights, adapter on demand."""

    def __init__(self, targets: str = "all", adapter_id: str = "builtin"):
        if targets not in TARGET_CHOICES:
            raise ValueError(f"targets must be one of {TARGET_CHOICES}, got {targets!r}")
        self.targets = targets
        self.adapter_id = adapter_id
        self.vocab_size = VOCAB_SIZE
        self.eos_token = EOS_TOKEN

        rng = np.random.default_rng(0xB5)
        self.E = rng.normal(0.0, _WEIGHT_SCALE, (VOCAB_SIZE, D_MODEL))
        self.Wq = rng.normal(0.0, _WEIGHT_SCALE, (D_MODEL, D_MODEL))
        self.Wk = rng.normal(0.0, _WEIGHT_SCALE, (D_MODEL, D_MODEL))
        self.Wv = rng.normal(0.0, _WEIGHT_SCALE, (D_MODEL, D_MODEL))
        self.W1 = rng.normal(0.0, _WEIGHT_SCALE, (D_MODEL, D_FF))
        self.W2 = rng.normal(0.0, _WEIGHT_SCALE, (D_FF, D_MODEL))

        arng = np.random.default_rng(_adapter_seed(adapter_id))
        self.L1 = self._low_rank(arng, D_MODEL, D_FF)
        self.L2 = self._low_rank(arng, D_FF, D_MODEL)
        self.Lq = self._low_rank(arng, D_MODEL, D_MODEL)
        self.Lk = self._low_rank(arng, D_MODEL, D_MODEL)
        self.Lv = self._low_rank(arng, D_MODEL, D_MODEL)

    @staticmethod
    def _low_rank(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
        a = rng.normal(0.0, 1.0, (n_in, RANK))
        b = rng.normal(0.0, 1.0, (RANK, n_out))
        return _ADAPTER_SCALE * (a @ b) / RANK

    @property
    def kv_invariant(self) -> bool:
        return self.targets == "mlp"

    # -- forward pieces --------------------------------------------------

    def embed(self, token: int, pos: int) -> np.ndarray:
        return self.E[token] + positional_encoding(pos)

    def _attn_weights(self, alpha: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.targets == "all":
            return (
                self.Wq + alpha * self.Lq,
                self.Wk + alpha * self.Lk,
                self.Wv + alpha * self.Lv,
            )
        return self.Wq, self.Wk, self.Wv

    def kv_row(self, x: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
        """K and V projections of one embedded position under alpha."""
        _, wk, wv = self._attn_weights(alpha)
        return x @ wk, x @ wv

    def logits(self, x_last: np.ndarray, keys: np.ndarray, values: np.ndarray, alpha: float) -> np.ndarray:
        """Next-token logits given the cached K/V rows of the whole prefix."""
        wq, _, _ = self._attn_weights(alpha)
        q = x_last @ wq
        scores = keys @ q / math.sqrt(D_MODEL)
        scores -= scores.max()
        att = np.exp(scores)
        att /= att.sum()
        h = x_last + att @ values
        hidden = np.tanh(h @ (self.W1 + alpha * self.L1))
        out = hidden @ (self.W2 + alpha * self.L2)
        return (h + out) @ self.E.T

    # -- distribution utilities -------------------------------------------

    @staticmethod
    def dist(logits: np.ndarray) -> np.ndarray:
        z = logits - logits.max()
        p = np.exp(z)
        return p / p.sum()

    @staticmethod
    def normalized_entropy(probs: np.ndarray) -> float:
        nz = probs[probs > 0.0]
        h = float(-(nz * np.log(nz)).sum() / math.log(len(probs)))
        return min(1.0, max(0.0, h))

    @staticmethod
    def sample(probs: np.ndarray, temperature: float, seed_draw: int) -> int:
        if temperature < 0.0:
            raise ValueError("temperature must be >= 0")
        if temperature == 0.0:
            return int(np.argmax(probs))
        if temperature != 1.0:
            logp = np.log(probs) / temperature
            logp -= logp.max()
            probs = np.exp(logp)
            probs /= probs.sum()
        rng = np.random.default_rng(seed_draw)
        return int(rng.choice(len(probs), p=probs))


def load_model(model_id: str, adapter_id: str, targets: str) -> StubModel:
    """Instantiate the model named by model_id with its adapter placement."""
    if model_id == "stub:tiny":
        return StubModel(targets=targets, adapter_id=adapter_id)
    raise ValueError(f"unknown model {model_id!r}; available: stub:tiny")
