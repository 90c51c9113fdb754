"""Client-side runtime: plan execution, metric reporting, and delegation.

The metric pair attached to every update drives the server-side
negative-transfer guard:

* ``pre_metrics``  - the client's own previous local model evaluated on its
  holdout; the first round a task runs in a cohort falls back to the weights
  received in the request, so the delta starts at zero;
* ``post_metrics`` - the incoming aggregated global weights evaluated on the
  same holdout.

``post.loss - pre.loss > epsilon`` therefore means "the shared model made
things worse for me", which is exactly the degradation signal the guard
inspects. Raw features and labels never leave the client; only weights,
counts, and metric scalars are serialized.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import netproto
from .community import ParticipantMetadata
from .errors import DelegationError, DeliveryError, ProtocolError, ShapeError
from .flcore import FlPlan, FlTask, ModelUpdate
from .hashing import stable_u64
from .netproto import Envelope, MsgType
from .tinylearn import Dataset, HyperParams, WeightVector, evaluate, train_local

logger = logging.getLogger(__name__)

REPORT_ATTEMPTS = 3
LOW_BATTERY_THRESHOLD = 0.2


class RequestChannel(Protocol):
    """One request/response exchange with the coordinator."""

    def request(self, frame: bytes) -> bytes: ...


@dataclass(frozen=True)
class ResourceProfile:
    cpu_score: float = 1.0
    battery: float = 1.0


@dataclass(frozen=True)
class TrainRequest:
    task_id: str
    cohort_id: str
    round: int
    plan: FlPlan
    weights: WeightVector


def train_request_to_env(req: TrainRequest, correlation_id: int) -> Envelope:
    return Envelope(
        msg_type=MsgType.TRAIN_REQUEST,
        correlation_id=correlation_id,
        payload={
            "task_id": req.task_id,
            "cohort_id": req.cohort_id,
            "round": req.round,
            "plan": netproto.plan_to_doc(req.plan),
            "weights": netproto.weights_to_wire(req.weights),
        },
    )


def train_request_from_env(env: Envelope) -> TrainRequest:
    p = env.payload
    return TrainRequest(
        task_id=p["task_id"],
        cohort_id=p["cohort_id"],
        round=p["round"],
        plan=netproto.plan_from_doc(p["plan"]),
        weights=netproto.wire_to_weights(p["weights"]),
    )


@dataclass(eq=False)
class ClientState:
    client_id: str
    metadata: ParticipantMetadata
    local_data: Dataset
    resource_profile: ResourceProfile = field(default_factory=ResourceProfile)
    neighbors: list[str] = field(default_factory=list)
    trusted_neighbors: frozenset[str] = frozenset()
    registered: bool = False
    current_tasks: dict[str, FlTask] = field(default_factory=dict)


class FlClient:
    """A simulated or socket-attached federated client."""

    def __init__(
        self,
        client_id: str,
        dataset: Dataset,
        metadata: ParticipantMetadata,
        resource_profile: ResourceProfile | None = None,
        neighbors: list[str] | None = None,
        trusted_neighbors: frozenset[str] | None = None,
    ):
        self.state = ClientState(
            client_id=client_id,
            metadata=metadata,
            local_data=dataset,
            resource_profile=resource_profile or ResourceProfile(),
            neighbors=list(neighbors or []),
            trusted_neighbors=frozenset(trusted_neighbors or ()),
        )
        self.session_token: str | None = None
        self._correlation = 0
        self._split_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
        # task_id -> (cohort_id, last locally trained weights); the pre/post
        # degradation baseline only makes sense within one cohort's trajectory
        self._prev_local: dict[str, tuple[str, WeightVector]] = {}
        self._update_cache: dict[tuple[str, str, int], ModelUpdate] = {}

    # -- properties ---------------------------------------------------------

    @property
    def client_id(self) -> str:
        return self.state.client_id

    def set_dataset(self, dataset: Dataset):
        """Replace local data (drift); invalidates the cached holdout split."""
        self.state.local_data = dataset
        self._split_cache.clear()

    def split(self, holdout_fraction: float) -> tuple[Dataset, Dataset]:
        """Deterministic train/holdout split, stable for a fixed client seed."""
        key = float(holdout_fraction)
        if key not in self._split_cache:
            n = self.state.local_data.n_samples
            rng = np.random.default_rng(stable_u64("split", self.client_id))
            perm = rng.permutation(n)
            n_holdout = min(n - 1, max(1, int(round(key * n))))
            self._split_cache[key] = (np.sort(perm[n_holdout:]), np.sort(perm[:n_holdout]))
        train_idx, holdout_idx = self._split_cache[key]
        data = self.state.local_data
        train = Dataset(
            features=data.features[train_idx],
            labels=data.labels[train_idx],
            n_classes=data.n_classes,
        )
        holdout = Dataset(
            features=data.features[holdout_idx],
            labels=data.labels[holdout_idx],
            n_classes=data.n_classes,
        )
        return train, holdout

    # -- coordinator dialogue -----------------------------------------------

    def _next_correlation(self) -> int:
        self._correlation += 1
        return stable_u64(self.client_id, self._correlation) % 2**64

    def _exchange(self, channel: RequestChannel, env: Envelope) -> Envelope:
        response = netproto.decode(channel.request(netproto.encode(env)))
        if response.correlation_id != env.correlation_id:
            raise ProtocolError("correlation_mismatch", "response does not echo request id")
        if response.msg_type == MsgType.ERROR:
            raise ProtocolError(response.payload["code"], response.payload["message"])
        expected = netproto.RESPONSE_OF.get(env.msg_type)
        if response.msg_type != expected:
            raise ProtocolError(
                "protocol_state", f"expected {expected}, got {response.msg_type}"
            )
        return response

    def register(self, channel: RequestChannel) -> str:
        """Send metadata to the coordinator; idempotent re-register replaces it."""
        env = Envelope(
            msg_type=MsgType.REGISTER,
            correlation_id=self._next_correlation(),
            payload={"metadata": netproto.metadata_to_doc(self.state.metadata)},
        )
        ack = self._exchange(channel, env)
        self.session_token = ack.payload["session_token"]
        self.state.registered = True
        return self.session_token

    def list_communities(self, channel: RequestChannel):
        env = Envelope(
            msg_type=MsgType.LIST_COMMUNITIES,
            correlation_id=self._next_correlation(),
            payload={"participant_id": self.client_id},
        )
        response = self._exchange(channel, env)
        return [netproto.community_from_doc(doc) for doc in response.payload["communities"]]

    def submit_task(self, channel: RequestChannel, task: FlTask) -> str:
        if not self.state.registered or self.session_token is None:
            raise ProtocolError("unregistered_client", "register before submitting tasks")
        env = Envelope(
            msg_type=MsgType.SUBMIT_TASK,
            correlation_id=self._next_correlation(),
            payload={
                "task": netproto.task_to_doc(task),
                "session_token": self.session_token,
            },
        )
        ack = self._exchange(channel, env)
        self.state.current_tasks[task.task_id] = task
        return ack.payload["population_id"]

    # -- plan execution -------------------------------------------------------

    def execute_train_request(self, req: TrainRequest, executor_id: str | None = None) -> ModelUpdate:
        """Run one local round; deterministic and idempotent per (task, round)."""
        cache_key = (req.task_id, req.cohort_id, req.round)
        cached = self._update_cache.get(cache_key)
        if cached is not None:
            return cached
        data = self.state.local_data
        if req.weights.arch.n_features != data.n_features or (
            req.weights.arch.n_classes != data.n_classes
        ):
            raise ShapeError(
                f"request weights {req.weights.arch_id} do not match local data of "
                f"{data.n_features} features / {data.n_classes} classes"
            )
        train, holdout = self.split(req.plan.eval_holdout_fraction)
        post_metrics = evaluate(req.weights, holdout)
        stored = self._prev_local.get(req.task_id)
        if stored is not None and stored[0] == req.cohort_id:
            prev = stored[1]
        else:
            # first round for this task in this cohort: the incoming model is
            # the baseline, so the guard sees a zero delta
            prev = req.weights
        pre_metrics = evaluate(prev, holdout)
        hp = HyperParams(
            epochs=req.plan.epochs,
            batch_size=req.plan.batch_size,
            learning_rate=req.plan.learning_rate,
            shuffle_seed=stable_u64(req.plan.shuffle_seed, req.task_id, req.round) % 2**63,
        )
        trained, _stats = train_local(req.weights, train, hp)
        self._prev_local[req.task_id] = (req.cohort_id, trained)
        update = ModelUpdate(
            task_id=req.task_id,
            cohort_id=req.cohort_id,
            round=req.round,
            weights=trained,
            n_samples=train.n_samples,
            pre_metrics=pre_metrics,
            post_metrics=post_metrics,
            executor_id=executor_id or self.client_id,
        )
        self._update_cache[cache_key] = update
        return update

    def delegate(self, req: TrainRequest, neighbor: "FlClient") -> ModelUpdate:
        """Offload a training request to a trusted nearby device.

        The neighbor computes on this client's data shard with the task's own
        seeds, so the result is bit-identical to local execution; only the
        recorded executor changes.
        """
        if (
            neighbor.client_id not in self.state.neighbors
            or neighbor.client_id not in self.state.trusted_neighbors
        ):
            raise DelegationError(
                f"{neighbor.client_id!r} is not a trusted neighbor of {self.client_id!r}"
            )
        return neighbor.execute_for(self, req)

    def execute_for(self, owner: "FlClient", req: TrainRequest) -> ModelUpdate:
        """Run a delegated request against the owner's data and task state."""
        return owner.execute_train_request(req, executor_id=self.client_id)

    def handle_train_request(
        self,
        req: TrainRequest,
        resolve_neighbor: Callable[[str], "FlClient"] | None = None,
    ) -> ModelUpdate:
        """Execute a request, auto-delegating when the battery is low and a
        trusted neighbor is reachable."""
        if (
            self.state.resource_profile.battery < LOW_BATTERY_THRESHOLD
            and resolve_neighbor is not None
        ):
            for neighbor_id in sorted(self.state.trusted_neighbors):
                if neighbor_id not in self.state.neighbors:
                    continue
                neighbor = resolve_neighbor(neighbor_id)
                if neighbor is not None:
                    logger.debug(
                        "client %s delegating round %s to %s", self.client_id, req.round, neighbor_id
                    )
                    return self.delegate(req, neighbor)
        return self.execute_train_request(req)

    # -- metric reporting -----------------------------------------------------

    def update_to_env(self, update: ModelUpdate, correlation_id: int) -> Envelope:
        return Envelope(
            msg_type=MsgType.MODEL_UPDATE,
            correlation_id=correlation_id,
            payload={
                "update": netproto.update_to_doc(update),
                "session_token": self.session_token or "",
            },
        )

    def report_metrics(
        self, update: ModelUpdate, channel: RequestChannel
    ) -> tuple[Envelope | None, int]:
        """Deliver one update with bounded retry.

        Returns (ack envelope, attempts). ``None`` after ``REPORT_ATTEMPTS``
        failures means the client drops out of this round.
        """
        env = self.update_to_env(update, self._next_correlation())
        frame = netproto.encode(env)
        attempts = 0
        while attempts < REPORT_ATTEMPTS:
            attempts += 1
            try:
                response = netproto.decode(channel.request(frame))
            except DeliveryError:
                logger.debug(
                    "client %s delivery attempt %d/%d failed",
                    self.client_id,
                    attempts,
                    REPORT_ATTEMPTS,
                )
                continue
            if response.msg_type == MsgType.ERROR:
                raise ProtocolError(response.payload["code"], response.payload["message"])
            return response, attempts
        return None, attempts
