"""Decoder-to-client delivery plans for exchange rounds."""
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from core.clustering import ClusterAssignment
from core.errors import InvalidAssignment, TooFewDecoders

logger = logging.getLogger(__name__)

MAX_SHUFFLE_ATTEMPTS = 32


class PlanStrategy(str, Enum):
    CLUSTERED = "clustered"
    ROUND_ROBIN = "round_robin"
    RANDOM = "random"


@dataclass(frozen=True)
class ExchangePlan:
    """assignment[i] is the decoder index delivered to client i."""

    assignment: tuple
    strategy_tag: PlanStrategy

    def __post_init__(self):
        assignment = tuple(int(a) for a in self.assignment)
        if sorted(assignment) != list(range(len(assignment))):
            raise InvalidAssignment(f"plan is not a permutation: {assignment}")
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "strategy_tag", PlanStrategy(self.strategy_tag))

    @property
    def n(self):
        return len(self.assignment)

    def fixed_points(self):
        return [i for i, a in enumerate(self.assignment) if a == i]

    def cross_deliveries(self, ca):
        return sum(1 for i, a in enumerate(self.assignment) if ca.index_list[i] != ca.index_list[a])


@dataclass(frozen=True)
class ExchangeHistory:
    last_assignment: tuple = None

    def __post_init__(self):
        if self.last_assignment is not None:
            object.__setattr__(self, "last_assignment", tuple(int(a) for a in self.last_assignment))

    def check(self, n):
        if self.last_assignment is not None and len(self.last_assignment) != n:
            raise InvalidAssignment(
                f"history covers {len(self.last_assignment)} clients but the plan has {n}")


def _check_client_count(n):
    if n < 2:
        raise TooFewDecoders(f"exchange needs at least 2 clients, got {n}")


def _walk_takers(index_list, sizes):
    """Clients in the order they consume each cluster's shuffled decoder list.

    Clients are walked in index order with one cursor per cluster. A client
    takes the next decoder of the other cluster while any remain, then falls
    back to the next decoder of its own cluster. The order depends only on
    the labels, never on the shuffle.
    """
    cursors = [0, 0]
    takers = ([], [])
    for client, label in enumerate(index_list):
        other = 1 - label
        source = other if cursors[other] < sizes[other] else label
        takers[source].append(client)
        cursors[source] += 1
    return takers


def _fits(order, takers, last_assignment):
    for decoder, client in zip(order, takers):
        if decoder == client:
            return False
        if last_assignment is not None and last_assignment[client] == decoder:
            return False
    return True


def _shuffle_cluster(rng, label, group, takers, last_assignment):
    constraints = [last_assignment, None] if last_assignment is not None else [None]
    order = None
    for last in constraints:
        for _ in range(MAX_SHUFFLE_ATTEMPTS):
            order = [int(m) for m in rng.permutation(group)]
            if _fits(order, takers, last):
                if last is None and last_assignment is not None:
                    logger.info("cluster C_%d (size %d): relaxed the previous-round constraint", label, len(group))
                return order
    logger.warning("cluster C_%d (size %d): no shuffle avoids handing a client its own decoder", label, len(group))
    return order


def build_clustered_plan(ca, history, rng_seed):
    """In-cluster shuffle followed by cross-cluster exchange."""
    if not isinstance(ca, ClusterAssignment):
        raise InvalidAssignment(f"expected a ClusterAssignment, got {type(ca).__name__}")
    ca.validate()
    n = ca.n
    history = history or ExchangeHistory()
    history.check(n)

    rng = np.random.default_rng(rng_seed)
    members = (ca.members_0, ca.members_1)
    takers = _walk_takers(ca.index_list, (len(members[0]), len(members[1])))
    assignment = [None] * n
    for label in (0, 1):
        order = _shuffle_cluster(rng, label, members[label], takers[label], history.last_assignment)
        for decoder, client in zip(order, takers[label]):
            assignment[client] = decoder

    plan = ExchangePlan(assignment, PlanStrategy.CLUSTERED)
    if plan.fixed_points():
        logger.warning("clients %s keep their own decoder (cluster sizes %d/%d)",
                       plan.fixed_points(), len(members[0]), len(members[1]))
    return plan


def build_round_robin_plan(n, round_index):
    """Shift every client by k = 1 + (round mod (n - 1)) positions."""
    _check_client_count(n)
    k = 1 + (round_index % (n - 1))
    return ExchangePlan(tuple((i + k) % n for i in range(n)), PlanStrategy.ROUND_ROBIN)


def build_random_plan(n, rng_seed):
    _check_client_count(n)
    rng = np.random.default_rng(rng_seed)
    return ExchangePlan(tuple(int(a) for a in rng.permutation(n)), PlanStrategy.RANDOM)
