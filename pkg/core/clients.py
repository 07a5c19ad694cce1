"""Simulated cross-domain clients.

Each client owns one synthetic domain. Inputs pass through a frozen random
feature backbone shared by all clients; only the linear decoder head on top
of the features is trained, exchanged and aggregated.
"""
import csv
import hashlib
import logging
import math
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np

from core.errors import EmptyInput, InvalidSpec, ManifestMismatch, NonFiniteLoss
from core.params import AggregationWeights, LayerManifest, ParamVector
from core.seeding import SeedPurpose, derive_seed

logger = logging.getLogger(__name__)

GLOBAL = "global"


class Task(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str
    sample_count: int
    input_dim: int
    shift: tuple
    concept_shift: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        shift = tuple(float(s) for s in self.shift)
        object.__setattr__(self, "shift", shift)
        if int(self.sample_count) < 1:
            raise InvalidSpec(f"domain {self.domain_id}: sample_count must be >= 1")
        if int(self.input_dim) < 1:
            raise InvalidSpec(f"domain {self.domain_id}: input_dim must be >= 1")
        if len(shift) != int(self.input_dim):
            raise InvalidSpec(f"domain {self.domain_id}: shift has {len(shift)} entries, input_dim is {self.input_dim}")
        if not all(math.isfinite(s) for s in shift):
            raise InvalidSpec(f"domain {self.domain_id}: shift must be finite")
        if self.concept_shift < 0 or self.noise_std < 0:
            raise InvalidSpec(f"domain {self.domain_id}: concept_shift and noise_std must be >= 0")


@dataclass(frozen=True)
class LocalConfig:
    """Local optimizer settings. steps_per_round=None means local_epochs passes over the train split."""

    steps_per_round: int = None
    local_epochs: float = 5.0
    learning_rate: float = 0.05
    batch_size: int = 32
    fedprox_mu: float = 0.01

    def __post_init__(self):
        if self.steps_per_round is not None and self.steps_per_round < 0:
            raise InvalidSpec("steps_per_round must be >= 0")
        if self.local_epochs < 0 or self.learning_rate <= 0 or self.batch_size < 1 or self.fedprox_mu < 0:
            raise InvalidSpec(f"invalid local config: {self}")

    def steps_for(self, n_train):
        if self.steps_per_round is not None:
            return int(self.steps_per_round)
        return int(math.ceil(self.local_epochs * n_train / self.batch_size))


class FrozenBackbone:
    """Fixed random affine map followed by tanh. Its arrays are read-only."""

    def __init__(self, input_dim, feature_dim, seed, bias_scale=0.5):
        if input_dim < 1 or feature_dim < 1:
            raise InvalidSpec("backbone dims must be >= 1")
        rng = np.random.default_rng(seed)
        self.input_dim = int(input_dim)
        self.feature_dim = int(feature_dim)
        self.seed = seed
        self._matrix = rng.normal(0.0, 1.0 / math.sqrt(input_dim), size=(feature_dim, input_dim))
        self._bias = rng.uniform(-bias_scale, bias_scale, size=feature_dim)
        self._matrix.setflags(write=False)
        self._bias.setflags(write=False)

    def features(self, inputs):
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != self.input_dim:
            raise InvalidSpec(f"backbone expects inputs of width {self.input_dim}, got shape {inputs.shape}")
        return np.tanh(inputs @ self._matrix.T + self._bias)

    def fingerprint(self):
        digest = hashlib.sha256()
        digest.update(self._matrix.tobytes())
        digest.update(self._bias.tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class DomainDataset:
    domain_id: str
    train_inputs: np.ndarray
    train_features: np.ndarray
    train_labels: np.ndarray
    test_inputs: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray

    @property
    def n_train(self):
        return int(self.train_labels.shape[0])

    @property
    def n_test(self):
        return int(self.test_labels.shape[0])


def _labels(scores, task):
    if task == Task.CLASSIFICATION:
        return (scores > 0.0).astype(np.float64)
    return scores


def generate_domain_dataset(spec, backbone, shared_concept_seed, domain_seed,
                            task=Task.REGRESSION, test_count=500, fraction=1.0):
    """Draw x ~ N(shift, I) and y = w_d . phi(x) + noise with w_d = w_shared + delta * u_d.

    The full sample_count is always drawn so the test split and the leading
    train samples are identical across fractions; the train split keeps the
    first round(fraction * n_i) samples.
    """
    task = Task(task)
    if spec.input_dim != backbone.input_dim:
        raise InvalidSpec(f"domain {spec.domain_id}: input_dim {spec.input_dim} does not match backbone {backbone.input_dim}")
    if not 0.0 < fraction <= 1.0:
        raise InvalidSpec(f"data fraction must be in (0, 1], got {fraction}")
    if test_count < 1:
        raise InvalidSpec("test_count must be >= 1")

    concept_rng = np.random.default_rng(shared_concept_seed)
    w_shared = concept_rng.normal(0.0, 1.0 / math.sqrt(backbone.feature_dim), size=backbone.feature_dim)

    rng = np.random.default_rng(domain_seed)
    direction = rng.normal(size=backbone.feature_dim)
    direction /= np.linalg.norm(direction)
    w_domain = w_shared + spec.concept_shift * direction
    shift = np.asarray(spec.shift, dtype=np.float64)

    def draw(count):
        inputs = shift + rng.normal(size=(count, spec.input_dim))
        features = backbone.features(inputs)
        noise = rng.normal(0.0, spec.noise_std, size=count) if spec.noise_std > 0 else np.zeros(count)
        return inputs, features, _labels(features @ w_domain + noise, task)

    train_x, train_f, train_y = draw(spec.sample_count)
    test_x, test_f, test_y = draw(test_count)
    keep = max(1, int(round(fraction * spec.sample_count)))
    return DomainDataset(spec.domain_id, train_x[:keep], train_f[:keep], train_y[:keep], test_x, test_f, test_y)


@dataclass
class ClientState:
    index: int
    domain: DomainSpec
    dataset: DomainDataset
    manifest: LayerManifest
    local_config: LocalConfig
    task: Task = Task.REGRESSION
    decoder: ParamVector = None
    received_from: object = GLOBAL

    def __post_init__(self):
        feature_dim = self.dataset.train_features.shape[1]
        if self.manifest != LayerManifest.linear_head(feature_dim):
            raise ManifestMismatch(f"client {self.index}: manifest does not describe a linear head over {feature_dim} features")
        if self.decoder is not None:
            self.manifest.check(self.decoder)

    @property
    def n_train(self):
        return self.dataset.n_train


def loss_and_gradient(values, features, labels, task=Task.REGRESSION, anchor=None, mu=0.0):
    """Objective and exact gradient for a linear head laid out as [weight..., bias].

    Regression uses the mean squared error, classification the mean logistic
    loss. With mu > 0 the proximal term mu/2 * ||v - anchor||^2 is added.
    """
    values = np.asarray(values, dtype=np.float64)
    weight, bias = values[:-1], values[-1]
    m = labels.shape[0]
    scores = features @ weight + bias
    if task == Task.CLASSIFICATION:
        loss = float(np.mean(np.logaddexp(0.0, scores) - labels * scores))
        residual = 0.5 * (1.0 + np.tanh(0.5 * scores)) - labels
        scale = 1.0 / m
    else:
        residual = scores - labels
        loss = float(np.mean(residual ** 2))
        scale = 2.0 / m
    grad = np.empty_like(values)
    grad[:-1] = scale * (features.T @ residual)
    grad[-1] = scale * float(np.sum(residual))
    if mu > 0.0:
        diff = values - anchor
        loss += 0.5 * mu * float(diff @ diff)
        grad += mu * diff
    return loss, grad


def _train(decoder, client, derived_seed, anchor=None, mu=0.0):
    client.manifest.check(decoder)
    features = client.dataset.train_features
    labels = client.dataset.train_labels
    m = labels.shape[0]
    if m == 0:
        raise EmptyInput(f"client {client.index} has an empty train split")
    cfg = client.local_config
    steps = cfg.steps_for(m)
    if steps == 0:
        return decoder

    anchor_values = anchor.values if anchor is not None else None
    batch = min(cfg.batch_size, m)
    rng = np.random.default_rng(derived_seed)
    order = rng.permutation(m)
    cursor = 0
    values = decoder.values.copy()
    for step in range(steps):
        if batch == m:
            batch_f, batch_y = features, labels
        else:
            if cursor + batch > m:
                order = rng.permutation(m)
                cursor = 0
            idx = order[cursor:cursor + batch]
            cursor += batch
            batch_f, batch_y = features[idx], labels[idx]
        loss, grad = loss_and_gradient(values, batch_f, batch_y, client.task, anchor_values, mu)
        values = values - cfg.learning_rate * grad
        if not math.isfinite(loss) or not np.all(np.isfinite(values)):
            raise NonFiniteLoss(f"client {client.index} diverged at local step {step} "
                                f"(learning rate {cfg.learning_rate} too large?)")
    return ParamVector(values)


def local_train(decoder, client, derived_seed):
    return _train(decoder, client, derived_seed)


def local_train_fedprox(decoder, client, global_anchor, mu, derived_seed):
    if mu < 0:
        raise InvalidSpec(f"proximal mu must be >= 0, got {mu}")
    if global_anchor.dim != decoder.dim:
        raise ManifestMismatch("proximal anchor and decoder differ in dim")
    return _train(decoder, client, derived_seed, anchor=global_anchor, mu=mu)


@dataclass(frozen=True)
class EvalResult:
    loss: float
    accuracy: float = None


def evaluate(decoder, client):
    """Loss (and accuracy for classification) of a decoder on the client's test split."""
    client.manifest.check(decoder)
    features = client.dataset.test_features
    labels = client.dataset.test_labels
    loss, _ = loss_and_gradient(decoder.values, features, labels, client.task)
    accuracy = None
    if client.task == Task.CLASSIFICATION:
        scores = features @ decoder.values[:-1] + decoder.values[-1]
        accuracy = float(np.mean((scores > 0.0).astype(np.float64) == labels))
    return EvalResult(loss, accuracy)


def aggregation_weights(clients):
    return AggregationWeights.from_counts([c.n_train for c in clients])


def build_clients(cfg, seed, fraction=1.0):
    """Backbone and clients of one experiment cell, all seeded from the cell seed."""
    backbone = FrozenBackbone(cfg.backbone.input_dim, cfg.backbone.feature_dim,
                              derive_seed(seed, SeedPurpose.DATA, 0, 0), cfg.backbone.bias_scale)
    shared_concept_seed = derive_seed(seed, SeedPurpose.DATA, 0, 1)
    manifest = LayerManifest.linear_head(backbone.feature_dim)
    clients = []
    for i, spec in enumerate(cfg.domains):
        dataset = generate_domain_dataset(spec, backbone, shared_concept_seed,
                                          derive_seed(seed, SeedPurpose.DATA, 1, i),
                                          cfg.task, cfg.test_count, fraction)
        clients.append(ClientState(i, spec, dataset, manifest, cfg.local, cfg.task))
    logger.debug("built %d clients for seed %s (fraction %s): train sizes %s",
                 len(clients), seed, fraction, [c.n_train for c in clients])
    return backbone, clients


def export_dataset_csv(clients, path):
    """Write every client's train and test inputs to one CSV file."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    input_dim = clients[0].dataset.train_inputs.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["domain_id", "split"] + [f"x_{k}" for k in range(input_dim)] + ["label"])
        for client in clients:
            ds = client.dataset
            for split, inputs, labels in (("train", ds.train_inputs, ds.train_labels),
                                          ("test", ds.test_inputs, ds.test_labels)):
                for x, y in zip(inputs, labels):
                    writer.writerow([ds.domain_id, split] + [repr(float(v)) for v in x] + [repr(float(y))])
    logger.info("wrote dataset snapshot for %d clients to %s", len(clients), path)
    return path
