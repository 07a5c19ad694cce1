"""Round loop of the exchange protocol: schedule, aggregate or cluster-and-exchange, redistribute."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from core.clients import GLOBAL, Task, aggregation_weights, evaluate, local_train, local_train_fedprox
from core.clustering import build_distance_matrix, cluster_to_two
from core.errors import ConfigInvalid, DimensionMismatch, FedExchangeError, ManifestMismatch
from core.exchange import ExchangeHistory, build_clustered_plan, build_random_plan, build_round_robin_plan
from core.metrics import Decision, DomainMetrics, Phase, RoundRecord
from core.params import ParamVector, weighted_average
from core.seeding import SeedPurpose, derive_seed

logger = logging.getLogger(__name__)

INIT_SCALE = 0.01


class Strategy(str, Enum):
    CLUSTERED = "clustered"
    ROUND_ROBIN = "round_robin"
    RANDOM = "random"
    FEDAVG_ONLY = "fedavg_only"
    FEDPROX = "fedprox"


AGGREGATE_ONLY = (Strategy.FEDAVG_ONLY, Strategy.FEDPROX)


@dataclass(frozen=True)
class ServerConfig:
    rounds: int
    aggregation_frequency: int = 2
    strategy: Strategy = Strategy.CLUSTERED
    warmup_rounds: int = 0
    master_seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "strategy", Strategy(self.strategy))
        except ValueError:
            raise ConfigInvalid(f"unknown strategy {self.strategy!r}; choose from {[s.value for s in Strategy]}")
        if self.rounds < 1:
            raise ConfigInvalid(f"rounds must be >= 1, got {self.rounds}")
        if self.aggregation_frequency < 1:
            raise ConfigInvalid(f"aggregation frequency must be >= 1, got {self.aggregation_frequency}")
        if self.rounds % self.aggregation_frequency != 0:
            raise ConfigInvalid(f"rounds ({self.rounds}) must be divisible by the aggregation frequency "
                                f"({self.aggregation_frequency}) so the final round aggregates")
        if self.warmup_rounds < 0:
            raise ConfigInvalid(f"warmup_rounds must be >= 0, got {self.warmup_rounds}")
        if self.master_seed < 0:
            raise ConfigInvalid(f"master seed must be non-negative, got {self.master_seed}")

    @property
    def effective_frequency(self):
        """FedAvg and FedProx aggregate every round."""
        return 1 if self.strategy in AGGREGATE_ONLY else self.aggregation_frequency


@dataclass
class ServerState:
    current_round: int = 0
    latest_global_decoder: ParamVector = None
    exchange_history: ExchangeHistory = field(default_factory=ExchangeHistory)
    exchange_count: int = 0
    trace: list = field(default_factory=list)


def schedule_decision(r, T):
    return Decision.AGGREGATE if r % T == 0 else Decision.EXCHANGE


def _build_plan(cfg, ca, state, r):
    n = ca.n
    seed = derive_seed(cfg.master_seed, SeedPurpose.EXCHANGE, r)
    if cfg.strategy == Strategy.CLUSTERED:
        return build_clustered_plan(ca, state.exchange_history, seed)
    if cfg.strategy == Strategy.ROUND_ROBIN:
        return build_round_robin_plan(n, state.exchange_count)
    if cfg.strategy == Strategy.RANDOM:
        return build_random_plan(n, seed)
    raise ConfigInvalid(f"strategy {cfg.strategy.value} never exchanges")


def run_round(state, uploads, weights, cfg, evaluate_fn=None, cluster_hook=None):
    """Advance the server by one round and return the decoder delivered to each client.

    evaluate_fn(decision, uploads, global_decoder) -> DomainMetrics fills the
    round's record; global_decoder is None on exchange rounds.
    cluster_hook(dm, assignment, round_index) sees every exchange-round clustering.
    """
    r = state.current_round + 1
    try:
        uploads = list(uploads)
        if len(uploads) != len(weights):
            raise DimensionMismatch(f"{len(uploads)} uploads but {len(weights)} aggregation weights")
        decision = schedule_decision(r, cfg.effective_frequency)
        if decision == Decision.AGGREGATE:
            global_decoder = weighted_average(uploads, weights)
            deliveries = [global_decoder] * len(uploads)
            metrics = evaluate_fn(decision, uploads, global_decoder) if evaluate_fn else None
            record = RoundRecord(r, decision, metrics, global_eval=True)
        else:
            dm = build_distance_matrix(uploads)
            ca = cluster_to_two(dm)
            if cluster_hook:
                cluster_hook(dm, ca, r)
            plan = _build_plan(cfg, ca, state, r)
            deliveries = [uploads[a] for a in plan.assignment]
            metrics = evaluate_fn(decision, uploads, None) if evaluate_fn else None
            record = RoundRecord(r, decision, metrics, global_eval=False,
                                 cluster_index_list=ca.index_list,
                                 plan_assignment=plan.assignment,
                                 plan_strategy=plan.strategy_tag.value)
            logger.debug("round %d: clusters %s, plan %s", r, ca.index_list, plan.assignment)
    except FedExchangeError as e:
        e.round_index = r
        raise

    # commit only after evaluation succeeds
    if decision == Decision.AGGREGATE:
        state.latest_global_decoder = global_decoder
        state.exchange_history = ExchangeHistory()
    else:
        state.exchange_history = ExchangeHistory(plan.assignment)
        state.exchange_count += 1
    state.current_round = r
    state.trace.append(record)
    return deliveries


@dataclass
class SimulationResult:
    trace: list
    warmup_trace: list
    state: ServerState
    final_decoders: list


def _train_all(clients, train_one, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(train_one, clients))
    return [train_one(c) for c in clients]


def _domain_metrics(clients, decoders):
    results = [evaluate(d, c) for d, c in zip(decoders, clients)]
    accuracies = None
    if clients[0].task == Task.CLASSIFICATION:
        accuracies = tuple(res.accuracy for res in results)
    return DomainMetrics(tuple(c.domain.domain_id for c in clients), tuple(res.loss for res in results), accuracies)


def initial_decoder(manifest, master_seed):
    rng = np.random.default_rng(derive_seed(master_seed, SeedPurpose.INIT))
    return ParamVector(rng.normal(0.0, INIT_SCALE, size=manifest.dim))


def run_simulation(cfg, clients, workers=1, cluster_hook=None):
    """Warm-up with aggregation, then R protocol rounds of train, upload, run_round, redistribute."""
    clients = list(clients)
    if len(clients) < 2:
        raise ConfigInvalid(f"a simulation needs at least 2 clients, got {len(clients)}")
    manifest = clients[0].manifest
    if any(c.manifest != manifest for c in clients):
        raise ManifestMismatch("clients disagree on the decoder manifest")

    init = initial_decoder(manifest, cfg.master_seed)
    for c in clients:
        c.decoder = init
        c.received_from = GLOBAL
    weights = aggregation_weights(clients)

    def evaluate_fn(decision, uploads, global_decoder):
        if global_decoder is not None:
            return _domain_metrics(clients, [global_decoder] * len(clients))
        return _domain_metrics(clients, uploads)

    warmup_trace = []
    global_decoder = None
    for w in range(1, cfg.warmup_rounds + 1):
        try:
            uploads = _train_all(clients, lambda c: local_train(
                c.decoder, c, derive_seed(cfg.master_seed, SeedPurpose.WARMUP, w, c.index)), workers)
        except FedExchangeError as e:
            e.message = f"warm-up {w}: {e.message}"
            raise
        global_decoder = weighted_average(uploads, weights)
        for c in clients:
            c.decoder = global_decoder
        warmup_trace.append(RoundRecord(w, Decision.AGGREGATE, evaluate_fn(Decision.AGGREGATE, uploads, global_decoder),
                                        phase=Phase.WARMUP))
    logger.debug("warm-up finished after %d rounds", cfg.warmup_rounds)

    state = ServerState(latest_global_decoder=global_decoder)
    for r in range(1, cfg.rounds + 1):
        def train_one(c):
            seed = derive_seed(cfg.master_seed, SeedPurpose.LOCAL, r, c.index)
            if cfg.strategy == Strategy.FEDPROX:
                anchor = state.latest_global_decoder if state.latest_global_decoder is not None else init
                return local_train_fedprox(c.decoder, c, anchor, c.local_config.fedprox_mu, seed)
            return local_train(c.decoder, c, seed)

        try:
            uploads = _train_all(clients, train_one, workers)
        except FedExchangeError as e:
            e.round_index = r
            raise
        deliveries = run_round(state, uploads, weights, cfg, evaluate_fn, cluster_hook)
        plan = state.trace[-1].plan_assignment
        for i, c in enumerate(clients):
            c.decoder = deliveries[i]
            c.received_from = GLOBAL if plan is None else plan[i]
        last = state.trace[-1]
        if last.metrics is not None:
            logger.debug("round %d (%s): avg loss %.6f, worst %.6f", r, last.decision.value,
                         last.metrics.avg_loss, last.metrics.worst_loss)

    return SimulationResult(state.trace, warmup_trace, state, [c.decoder for c in clients])
