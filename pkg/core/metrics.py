"""Per-round evaluation records and the cross-domain statistics reported for them."""
from dataclasses import dataclass
from enum import Enum

import numpy as np


class Decision(str, Enum):
    AGGREGATE = "aggregate"
    EXCHANGE = "exchange"


class Phase(str, Enum):
    WARMUP = "warmup"
    PROTOCOL = "protocol"


@dataclass(frozen=True)
class DomainMetrics:
    """Test metrics of one evaluation pass, one entry per domain."""

    domain_ids: tuple
    losses: tuple
    accuracies: tuple = None

    @property
    def avg_loss(self):
        return float(np.mean(self.losses))

    @property
    def std_loss(self):
        return float(np.std(self.losses))

    @property
    def worst_loss(self):
        return float(np.max(self.losses))

    @property
    def worst_domain(self):
        return self.domain_ids[int(np.argmax(self.losses))]

    @property
    def avg_accuracy(self):
        return None if self.accuracies is None else float(np.mean(self.accuracies))

    @property
    def std_accuracy(self):
        return None if self.accuracies is None else float(np.std(self.accuracies))

    @property
    def worst_accuracy(self):
        return None if self.accuracies is None else float(np.min(self.accuracies))


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    decision: Decision
    metrics: DomainMetrics = None
    phase: Phase = Phase.PROTOCOL
    global_eval: bool = True
    cluster_index_list: tuple = None
    plan_assignment: tuple = None
    plan_strategy: str = None

    def snapshot(self):
        """JSON-ready view of the decision, cluster and plan of this round."""
        return {
            "round": self.round_index,
            "phase": self.phase.value,
            "decision": self.decision.value,
            "global_eval": self.global_eval,
            "cluster_index_list": list(self.cluster_index_list) if self.cluster_index_list is not None else None,
            "plan": list(self.plan_assignment) if self.plan_assignment is not None else None,
            "plan_strategy": self.plan_strategy,
        }
