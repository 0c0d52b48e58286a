"""Agent tuple (beliefs, goals, policy, intentions) and the perceive-decide-act cycle.

The three phase functions are pure: they take an :class:`AgentCore` and
return a new one. Role behaviour is injected through three callables:

``interpret(beliefs, message) -> list[Belief]``
    belief update for one incoming message
``policy(beliefs, goal) -> Action | None``
    deterministic action selection
``effector(action) -> list``
    executes an action in the world and returns emitted messages/events;
    raises :class:`ActionFailed` when a precondition no longer holds.
"""

from __future__ import annotations

import dataclasses
import logging
import queue
import threading
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from auditmas.beliefs import Atom, Belief, BeliefBase, entails, revise
from auditmas.domain import Message, Performative

logger = logging.getLogger(__name__)


class Role(str, Enum):
    PLANNER = "Planner"
    EXECUTOR = "Executor"
    REPAIRER = "Repairer"
    COMMAND_EXECUTOR = "CommandExecutor"
    COORDINATOR = "Coordinator"


@dataclass(frozen=True, order=True)
class Goal:
    priority: float
    goal_id: str
    formula: Atom = field(compare=False)


@dataclass(frozen=True)
class Action:
    name: str
    goal: Goal
    params: dict = field(default_factory=dict, hash=False, compare=False)
    precondition: Callable[[BeliefBase], bool] | None = field(default=None, compare=False)

    def executable(self, beliefs: BeliefBase) -> bool:
        return self.precondition is None or self.precondition(beliefs)


class ActionFailed(RuntimeError):
    """Raised by an effector when the world no longer admits the action."""


class MalformedMessage(ValueError):
    pass


Interpreter = Callable[[BeliefBase, Message], Sequence[Belief]]
Policy = Callable[[BeliefBase, Goal], "Action | None"]


def _no_interpret(beliefs: BeliefBase, message: Message) -> Sequence[Belief]:
    return ()


def _idle_policy(beliefs: BeliefBase, goal: Goal) -> Action | None:
    return None


@dataclass(frozen=True)
class AgentCore:
    id: str
    role: Role
    beliefs: BeliefBase = field(default_factory=BeliefBase)
    goals: tuple[Goal, ...] = ()
    intentions: frozenset[str] = frozenset()
    inbox: tuple[Message, ...] = ()
    policy: Policy = field(default=_idle_policy, compare=False)
    interpret: Interpreter = field(default=_no_interpret, compare=False)
    errors: tuple[str, ...] = ()

    def __post_init__(self):
        ids = {g.goal_id for g in self.goals}
        if not self.intentions <= ids:
            raise ValueError(f"intentions {sorted(self.intentions - ids)} not among goals")

    def goal(self, goal_id: str) -> Goal | None:
        for g in self.goals:
            if g.goal_id == goal_id:
                return g
        return None

    def with_goals(self, goals: Iterable[Goal]) -> AgentCore:
        """Replace the goal set, keeping intentions for goals that survive."""
        goals = tuple(sorted(set(goals)))
        keep = self.intentions & {g.goal_id for g in goals}
        return dataclasses.replace(self, goals=goals, intentions=frozenset(keep))

    def post(self, *messages: Message) -> AgentCore:
        return dataclasses.replace(self, inbox=self.inbox + tuple(messages))


def _best(goals: Iterable[Goal]) -> Goal | None:
    # highest priority, ties broken by the smaller goal id
    best = None
    for g in goals:
        if best is None or g.priority > best.priority or (
            g.priority == best.priority and g.goal_id < best.goal_id
        ):
            best = g
    return best


def perceive(agent: AgentCore, incoming: Iterable[Message] = ()) -> AgentCore:
    """Drain the inbox (plus ``incoming``) in arrival order, revising beliefs per message."""
    beliefs = agent.beliefs
    errors = list(agent.errors)
    for m in (*agent.inbox, *incoming):
        try:
            if not isinstance(m, Message) or not isinstance(m.performative, Performative):
                raise MalformedMessage(repr(m))
            for b in agent.interpret(beliefs, m):
                beliefs = revise(beliefs, b)
        except (MalformedMessage, ValueError, KeyError, TypeError) as exc:
            logger.warning("%s skipped malformed message: %s", agent.id, exc)
            errors.append(f"malformed message: {exc}")
    return dataclasses.replace(agent, beliefs=beliefs, inbox=(), errors=tuple(errors))


def active_goal(agent: AgentCore) -> Goal | None:
    """Intention persistence: committed goals come before uncommitted ones."""
    if agent.intentions:
        return _best(g for g in agent.goals if g.goal_id in agent.intentions)
    return _best(g for g in agent.goals if not entails(agent.beliefs, g.formula))


def decide(agent: AgentCore) -> tuple[AgentCore, Action | None]:
    goal = active_goal(agent)
    if goal is None:
        return agent, None
    action = agent.policy(agent.beliefs, goal)
    if action is None and goal.goal_id in agent.intentions and entails(agent.beliefs, goal.formula):
        # achieved while we were away: act() will drop it
        return agent, Action("noop", goal)
    if action is None or not action.executable(agent.beliefs):
        return agent, None
    return dataclasses.replace(agent, intentions=agent.intentions | {goal.goal_id}), action


def act(agent: AgentCore, action: Action | None,
        effector: Callable[[Action], Sequence[Any]]) -> tuple[AgentCore, list]:
    """Execute ``action``; drop its goal from the intentions once it is entailed.

    A precondition failure inside the effector emits a FAILURE message to the
    agent itself and keeps the intention for a later retry.
    """
    if action is None:
        return agent, []
    goal = action.goal
    if entails(agent.beliefs, goal.formula):
        return _drop_intention(agent, goal), []
    if action.name == "noop":
        return agent, []
    try:
        result = effector(action)
    except ActionFailed as exc:
        failure = Message(Performative.FAILURE, agent.id, agent.id,
                          {"action": action.name, "goal": goal.goal_id, "error": str(exc)})
        return agent, [failure]
    emitted: list = []
    beliefs = agent.beliefs
    for item in result or ():
        if isinstance(item, Belief):
            beliefs = revise(beliefs, item)
        else:
            emitted.append(item)
    agent = dataclasses.replace(agent, beliefs=beliefs)
    if entails(agent.beliefs, goal.formula):
        agent = _drop_intention(agent, goal)
    return agent, emitted


def _drop_intention(agent: AgentCore, goal: Goal) -> AgentCore:
    return dataclasses.replace(agent, intentions=agent.intentions - {goal.goal_id})


def cycle(agent: AgentCore, incoming: Iterable[Message],
          effector: Callable[[Action], Sequence[Any]]) -> tuple[AgentCore, Action | None, list]:
    """One perceive-decide-act round: drain inbox, one decision, one action."""
    agent = perceive(agent, incoming)
    agent, action = decide(agent)
    agent, emitted = act(agent, action, effector)
    return agent, action, emitted


class ThreadSafeBroker:
    """Minimal broker for free-running agents: one FIFO queue per receiver.

    The broker is the only shared object; every queue operation goes through
    its lock, so per-pair send order is preserved at the receiver.
    """

    def __init__(self, agent_ids: Iterable[str]):
        self._lock = threading.Lock()
        self._queues: dict[str, queue.SimpleQueue] = {a: queue.SimpleQueue() for a in agent_ids}
        self.dead_letters: list[Message] = []
        self.sent = 0

    def send(self, message: Message) -> None:
        with self._lock:
            self.sent += 1
            receivers = (sorted(r for r in self._queues if r != message.sender)
                         if message.receiver == "*" else [message.receiver])
            for r in receivers:
                q = self._queues.get(r)
                if q is None:
                    self.dead_letters.append(message)
                else:
                    q.put(dataclasses.replace(message, receiver=r))

    def drain(self, agent_id: str) -> list[Message]:
        out = []
        q = self._queues[agent_id]
        while True:
            try:
                out.append(q.get_nowait())
            except queue.Empty:
                return out


class FreeRunner:
    """Runs agents concurrently, one thread each, against a shared broker.

    Each thread owns its agent's state exclusively; agents interact only
    through ``broker.send``/``broker.drain``. Wall-clock driven, so it is kept
    out of every deterministic path.
    """

    def __init__(self, agents: Iterable[AgentCore], effectors: dict[str, Callable],
                 broker: ThreadSafeBroker, idle_sleep: float = 0.001):
        self.agents = {a.id: a for a in agents}
        self.effectors = effectors
        self.broker = broker
        self.idle_sleep = idle_sleep
        self._stop = threading.Event()

    def _loop(self, agent_id: str, max_cycles: int) -> None:
        agent = self.agents[agent_id]
        for _ in range(max_cycles):
            if self._stop.is_set():
                break
            agent, action, emitted = cycle(agent, self.broker.drain(agent_id), self.effectors[agent_id])
            for m in emitted:
                if isinstance(m, Message):
                    self.broker.send(m)
            if action is None:
                self._stop.wait(self.idle_sleep)
        self.agents[agent_id] = agent

    def run(self, max_cycles: int = 1000, timeout: float = 10.0) -> dict[str, AgentCore]:
        threads = [threading.Thread(target=self._loop, args=(a, max_cycles), daemon=True)
                   for a in sorted(self.agents)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout)
        self._stop.set()
        return dict(self.agents)
