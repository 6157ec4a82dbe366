"""Seeded token-batch generation: Poisson arrivals and synthetic gating scores.

Scores stand in for a trained feedforward gating network. Tokens draw a
feature vector from a random cluster (plus noise) and are scored against
fixed per-server prototypes through a temperature softmax, which gives each
cluster a persistent server affinity: the skewed score distribution is what
makes plain top-k routing create hotspots.

Randomness is Philox (counter-based, platform-independent). Every stream is
keyed by (seed, purpose) with the slot index in the counter, so the batch
and scores for slot t depend only on (seed, t), replays are bit-identical,
and distinct slots can be generated in parallel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import ParameterError, TokenBatch

__all__ = [
    "PURPOSE_ARRIVALS",
    "PURPOSE_SCORES",
    "PURPOSE_ROUTE",
    "slot_stream",
    "GatingConfig",
    "GatingModel",
    "sample_batch_size",
    "gate_scores",
    "load_score_table",
]

_MASK64 = (1 << 64) - 1

# Stream purposes. Keeping arrivals, scores and the random baseline's picks
# on separate keys makes every strategy observe identical workloads.
PURPOSE_ARRIVALS = 1
PURPOSE_SCORES = 2
PURPOSE_ROUTE = 3
PURPOSE_MODEL = 5


def slot_stream(seed: int, purpose: int, slot: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, purpose, slot) triple."""
    key = np.array([seed & _MASK64, purpose & _MASK64], dtype=np.uint64)
    counter = np.array([slot & _MASK64, 0, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def sample_batch_size(arrival_rate: float, rng: np.random.Generator) -> int:
    """One Poisson(arrival_rate) draw; deterministic per generator state."""
    if arrival_rate < 0:
        raise ParameterError(f"arrival_rate must be >= 0, got {arrival_rate}")
    if arrival_rate == 0:
        return 0
    return int(rng.poisson(arrival_rate))


@dataclass(frozen=True)
class GatingConfig:
    """Shape of the synthetic gating model.

    The defaults give 8 persistent token clusters in a 16-d feature space.
    ``prototype_scale`` sets how strongly a cluster prefers its specialist
    servers; ``popularity_spread`` tilts every prototype along the shared
    mean-feature direction so per-server average scores are clearly
    non-uniform (some servers are popular with most tokens).
    """

    num_clusters: int = 8
    feature_dim: int = 16
    temperature: float = 0.5
    noise_scale: float = 0.25
    prototype_scale: float = 0.35
    popularity_spread: float = 1.2

    def __post_init__(self):
        if self.num_clusters < 1 or self.feature_dim < 1:
            raise ParameterError("num_clusters and feature_dim must be >= 1")
        if not self.temperature > 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")


class GatingModel:
    """Immutable synthetic gating model.

    Holds unit-norm cluster centers, server prototypes and the base seed
    from which per-slot score streams are derived. A prototype is a scaled
    random direction (cluster affinity) plus a per-server popularity bias
    along the normalized mean of the cluster centers.
    """

    def __init__(self, seed: int, num_servers: int, config: GatingConfig | None = None):
        self.config = config or GatingConfig()
        self.seed = int(seed)
        self.num_servers = int(num_servers)
        rng = slot_stream(self.seed, PURPOSE_MODEL)
        cfg = self.config
        centers = rng.standard_normal((cfg.num_clusters, cfg.feature_dim))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        prototypes = rng.standard_normal((num_servers, cfg.feature_dim))
        prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
        prototypes *= cfg.prototype_scale
        mean_dir = centers.mean(axis=0)
        mean_dir /= np.linalg.norm(mean_dir)
        popularity = rng.permutation(
            np.linspace(-0.5, 0.5, num_servers) * cfg.popularity_spread
        )
        prototypes += popularity[:, None] * mean_dir[None, :]
        self.cluster_centers = centers
        self.server_prototypes = prototypes
        self.popularity = popularity
        self.cluster_centers.flags.writeable = False
        self.server_prototypes.flags.writeable = False


def gate_scores(model: GatingModel, batch_size: int, slot: int) -> TokenBatch:
    """Score ``batch_size`` tokens for one slot.

    Each token's feature is a noisy copy of a uniformly chosen cluster
    center; scores are a row softmax of feature/prototype inner products
    over temperature, so rows are in [0, 1] and sum to 1.
    """
    if batch_size < 0:
        raise ParameterError(f"batch_size must be >= 0, got {batch_size}")
    if batch_size == 0:
        return TokenBatch(slot, np.zeros((0, model.num_servers)))
    cfg = model.config
    rng = slot_stream(model.seed, PURPOSE_SCORES, slot)
    clusters = rng.integers(cfg.num_clusters, size=batch_size)
    features = model.cluster_centers[clusters]
    features = features + cfg.noise_scale * rng.standard_normal((batch_size, cfg.feature_dim))
    logits = features @ model.server_prototypes.T / cfg.temperature
    logits -= logits.max(axis=1, keepdims=True)
    scores = np.exp(logits)
    scores /= scores.sum(axis=1, keepdims=True)
    return TokenBatch(slot, scores)


def load_score_table(path: str, num_servers: int) -> dict[int, np.ndarray]:
    """Read externally produced gating scores from a CSV with columns
    slot, token, j, g. Returns a dense (tokens x servers) matrix per slot.
    """
    cells: dict[int, dict[tuple[int, int], float]] = {}
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        required = {"slot", "token", "j", "g"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ParameterError(f"score file must have columns {sorted(required)}")
        for row in reader:
            slot = int(row["slot"])
            token = int(row["token"])
            server = int(row["j"])
            if not 0 <= server < num_servers:
                raise ParameterError(f"score file server index {server} out of range")
            cells.setdefault(slot, {})[(token, server)] = float(row["g"])
    table: dict[int, np.ndarray] = {}
    for slot, entries in cells.items():
        num_tokens = max(token for token, _ in entries) + 1
        scores = np.zeros((num_tokens, num_servers))
        for (token, server), value in entries.items():
            scores[token, server] = value
        table[slot] = scores
    return table
