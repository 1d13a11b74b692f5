"""Event-sourced execution of pipeline instances.

The append-only event log is the source of truth; element states are a fold
over it. Replaying a stored log reconstructs the exact runtime state, which
is what makes multi-day annotation campaigns survive restarts.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Any, Iterable, Sequence

from .clock import Clock, SystemClock, parse_rfc3339, rfc3339
from .errors import LogCorruptionError, StateError, UnknownEntityError
from .model import ElementKind, PipelineInstance, scope_of_elements, topological_order


class EventKind(str, Enum):
    ACTIVATED = "activated"
    STARTED = "started"
    FINISHED = "finished"
    ERRORED = "errored"
    LOOP_ITERATED = "loop_iterated"
    BREAK_REQUESTED = "break_requested"


class ElementState(str, Enum):
    PENDING = "pending"
    IN_PROGRESS = "in_progress"
    FINISHED = "finished"
    ERROR = "error"


# element kinds whose work is implicit: they finish in the same tick that
# activates them
AUTO_FINISH_KINDS = frozenset(
    {ElementKind.DATASOURCE, ElementKind.DATA_EXPORT, ElementKind.VISUALIZATION}
)


@dataclass(frozen=True)
class EngineEvent:
    instance_id: str
    element_id: str
    kind: EventKind
    iteration: int
    timestamp: datetime
    payload: str = ""


def event_to_obj(e: EngineEvent) -> dict[str, Any]:
    return {
        "instance_id": e.instance_id,
        "element_id": e.element_id,
        "kind": e.kind.value,
        "iteration": e.iteration,
        "timestamp": rfc3339(e.timestamp),
        "payload": e.payload,
    }


def event_from_obj(obj: dict[str, Any]) -> EngineEvent:
    return EngineEvent(
        instance_id=obj["instance_id"],
        element_id=obj["element_id"],
        kind=EventKind(obj["kind"]),
        iteration=int(obj["iteration"]),
        timestamp=parse_rfc3339(obj["timestamp"]),
        payload=obj.get("payload", ""),
    )


@dataclass
class LoopState:
    loop_element_id: str
    current_iteration: int = 0
    max_iteration: int | None = None
    break_flag: bool = False


@dataclass
class RuntimeState:
    """The fold of an event log: mutable, engine-internal."""

    states: dict[str, ElementState] = field(default_factory=dict)
    iterations: dict[str, int] = field(default_factory=dict)
    loops: dict[str, LoopState] = field(default_factory=dict)
    activated: set[tuple[str, int]] = field(default_factory=set)
    started: set[tuple[str, int]] = field(default_factory=set)

    def snapshot(self) -> dict[str, dict[str, Any]]:
        out: dict[str, dict[str, Any]] = {}
        for el_id, state in self.states.items():
            out[el_id] = {"state": state.value, "iteration": self.iterations[el_id]}
            if el_id in self.loops:
                ls = self.loops[el_id]
                out[el_id]["loop"] = {
                    "current_iteration": ls.current_iteration,
                    "max_iteration": ls.max_iteration,
                    "break_flag": ls.break_flag,
                }
        return out


def initial_state(instance: PipelineInstance) -> RuntimeState:
    state = RuntimeState()
    for el in instance.template.elements:
        state.states[el.id] = ElementState.PENDING
        state.iterations[el.id] = 0
        if el.kind is ElementKind.LOOP and el.loop:
            state.loops[el.id] = LoopState(el.id, 0, el.loop.max_iteration, False)
    return state


def _apply(state: RuntimeState, event: EngineEvent, scope_of: dict[str, str | None]) -> None:
    """Apply one event, raising StateError when it is not legal here."""
    el = event.element_id
    if el not in state.states:
        raise StateError(f"event names unknown element {el!r}")
    cur = state.states[el]
    it = event.iteration

    if event.kind is EventKind.ACTIVATED:
        if cur not in (ElementState.PENDING, ElementState.ERROR):
            raise StateError(f"cannot activate {el!r} in state {cur.value}")
        if it != state.iterations[el]:
            raise StateError(f"activation of {el!r} at iteration {it}, element is at {state.iterations[el]}")
        if cur is ElementState.ERROR:
            state.started.discard((el, it))  # retry path: allow a fresh start
        state.states[el] = ElementState.IN_PROGRESS
        state.activated.add((el, it))
    elif event.kind is EventKind.STARTED:
        if cur is not ElementState.IN_PROGRESS or (el, it) not in state.activated:
            raise StateError(f"start of {el!r} at iteration {it} without activation")
        if (el, it) in state.started:
            raise StateError(f"duplicate start of {el!r} at iteration {it}")
        state.started.add((el, it))
    elif event.kind is EventKind.FINISHED:
        if cur is not ElementState.IN_PROGRESS or (el, it) not in state.started:
            raise StateError(f"finish of {el!r} at iteration {it} without a start")
        state.states[el] = ElementState.FINISHED
    elif event.kind is EventKind.ERRORED:
        if cur is not ElementState.IN_PROGRESS or (el, it) not in state.activated:
            raise StateError(f"error report for {el!r} at iteration {it} while not in progress")
        state.states[el] = ElementState.ERROR
    elif event.kind is EventKind.LOOP_ITERATED:
        ls = state.loops.get(el)
        if ls is None:
            raise StateError(f"loop iteration event for non-loop element {el!r}")
        if state.states[el] is not ElementState.IN_PROGRESS:
            raise StateError(f"loop {el!r} iterated while not in progress")
        if it != ls.current_iteration + 1:
            raise StateError(
                f"loop {el!r} iterated to {it}, expected {ls.current_iteration + 1}"
            )
        if ls.max_iteration is not None and it >= ls.max_iteration:
            raise StateError(f"loop {el!r} iterated past max_iteration {ls.max_iteration}")
        ls.current_iteration = it
        for member, owner in scope_of.items():
            if owner == el:
                state.states[member] = ElementState.PENDING
                state.iterations[member] = it
    elif event.kind is EventKind.BREAK_REQUESTED:
        ls = state.loops.get(el)
        if ls is None:
            raise StateError(f"break requested for non-loop element {el!r}")
        ls.break_flag = True  # sticky for the rest of the instance
    else:  # pragma: no cover - enum is closed
        raise StateError(f"unknown event kind {event.kind!r}")


def fold_state(instance: PipelineInstance, events: Sequence[EngineEvent]) -> RuntimeState:
    """Replay a log; raises LogCorruptionError naming the first bad event."""
    scope_of = scope_of_elements(instance.template)
    state = initial_state(instance)
    for index, event in enumerate(events):
        if event.instance_id != instance.instance_id:
            raise LogCorruptionError(
                f"event {index} belongs to instance {event.instance_id!r}", event_index=index
            )
        try:
            _apply(state, event, scope_of)
        except StateError as exc:
            raise LogCorruptionError(f"event {index}: {exc}", event_index=index) from exc
    return state


@dataclass(frozen=True)
class LoopOutcome:
    loop_id: str
    action: str  # "iterate" | "exit"
    iteration: int  # new iteration when iterating, last iteration when exiting


class Engine:
    """Single scheduler for one pipeline instance.

    All mutations serialize through one lock and land in the event log in a
    deterministic order: ready elements are considered in topological order
    with lexicographic tie-breaking, so identical completion histories give
    identical logs.
    """

    def __init__(
        self,
        instance: PipelineInstance,
        events: Sequence[EngineEvent] = (),
        clock: Clock | None = None,
    ) -> None:
        self.instance = instance
        self.clock = clock or SystemClock()
        self._lock = threading.RLock()
        self._order = topological_order(instance.template)
        self._preds = instance.template.predecessors()
        self._scope_of = scope_of_elements(instance.template)
        self._kinds = {el.id: el.kind for el in instance.template.elements}
        self.events: list[EngineEvent] = list(events)
        self._state = fold_state(instance, self.events)

    # -- reads ------------------------------------------------------------

    def state_of(self, element_id: str) -> ElementState:
        with self._lock:
            try:
                return self._state.states[element_id]
            except KeyError:
                raise UnknownEntityError(f"no element {element_id!r} in instance") from None

    def iteration_of(self, element_id: str) -> int:
        with self._lock:
            return self._state.iterations[element_id]

    def loop_state(self, loop_id: str) -> LoopState:
        with self._lock:
            ls = self._state.loops.get(loop_id)
            if ls is None:
                raise UnknownEntityError(f"element {loop_id!r} is not a loop")
            return replace_loop(ls)

    def enclosing_loop(self, element_id: str) -> str | None:
        return self._scope_of.get(element_id)

    def snapshot(self) -> dict[str, dict[str, Any]]:
        with self._lock:
            return self._state.snapshot()

    def all_finished(self) -> bool:
        with self._lock:
            return all(s is ElementState.FINISHED for s in self._state.states.values())

    def any_error(self) -> bool:
        with self._lock:
            return any(s is ElementState.ERROR for s in self._state.states.values())

    # -- writes -----------------------------------------------------------

    def _append(self, element_id: str, kind: EventKind, iteration: int, payload: str = "") -> EngineEvent:
        event = EngineEvent(
            instance_id=self.instance.instance_id,
            element_id=element_id,
            kind=kind,
            iteration=iteration,
            timestamp=self.clock.now(),
            payload=payload,
        )
        _apply(self._state, event, self._scope_of)
        self.events.append(event)
        return event

    def tick(self) -> list[str]:
        """Activate every element whose predecessors are satisfied.

        Runs to a fixpoint so chains of auto-finishing elements (datasource,
        export, visualization) and loop decisions resolve in one call.
        Idempotent when nothing is ready.

        Each loop takes at most one iterate decision per call.  Without that
        cap a loop whose whole scope auto-finishes would spin forever inside
        this method and the owner would never get a chance to request a break.

        A resumed log can end between an activation and the implicit
        completion that normally follows it in the same call.  Implicit work
        and loop decisions depend on nothing outside the fold, so the first
        tick after a resume finishes them.
        """
        with self._lock:
            newly: list[str] = []
            iterated: set[str] = set()
            progress = True
            while progress:
                progress = False
                for el_id in self._order:
                    kind = self._kinds[el_id]
                    state = self._state.states[el_id]
                    if state is ElementState.IN_PROGRESS:
                        iteration = self._state.iterations[el_id]
                        if kind in AUTO_FINISH_KINDS:
                            if (el_id, iteration) not in self._state.started:
                                self._append(el_id, EventKind.STARTED, iteration)
                            self._append(el_id, EventKind.FINISHED, iteration)
                            progress = True
                        elif kind is ElementKind.LOOP and el_id not in iterated:
                            if self._complete_loop_locked(el_id).action == "iterate":
                                iterated.add(el_id)
                            progress = True
                        continue
                    if state is not ElementState.PENDING:
                        continue
                    if not self._ready(el_id):
                        continue
                    if kind is ElementKind.LOOP and el_id in iterated:
                        continue
                    iteration = self._state.iterations[el_id]
                    self._append(el_id, EventKind.ACTIVATED, iteration)
                    newly.append(el_id)
                    progress = True
                    if kind in AUTO_FINISH_KINDS:
                        self._append(el_id, EventKind.STARTED, iteration)
                        self._append(el_id, EventKind.FINISHED, iteration)
                    elif kind is ElementKind.LOOP:
                        if self._complete_loop_locked(el_id).action == "iterate":
                            iterated.add(el_id)
            return newly

    def _ready(self, el_id: str) -> bool:
        my_scope = self._scope_of.get(el_id)
        my_iteration = self._state.iterations[el_id]
        for pred in self._preds[el_id]:
            if self._state.states[pred] is not ElementState.FINISHED:
                return False
            if self._scope_of.get(pred) is not None and self._scope_of.get(pred) == my_scope:
                if self._state.iterations[pred] != my_iteration:
                    return False
        return True

    def _complete_loop_locked(self, loop_id: str) -> LoopOutcome:
        ls = self._state.loops.get(loop_id)
        if ls is None:
            self._append(loop_id, EventKind.ERRORED, self._state.iterations[loop_id], "loop state missing")
            raise StateError(f"loop state missing for {loop_id!r}")
        current = ls.current_iteration
        bounded_done = ls.max_iteration is not None and current + 1 >= ls.max_iteration
        if ls.break_flag or bounded_done:
            reason = "break requested" if ls.break_flag else f"max_iteration {ls.max_iteration} reached"
            if (loop_id, current) not in self._state.started:
                self._append(loop_id, EventKind.STARTED, current)
            self._append(loop_id, EventKind.FINISHED, current, reason)
            return LoopOutcome(loop_id, "exit", current)
        self._append(loop_id, EventKind.LOOP_ITERATED, current + 1)
        return LoopOutcome(loop_id, "iterate", current + 1)

    def complete_loop_body(self, loop_id: str) -> LoopOutcome:
        """Decide iterate-vs-exit for a loop whose body has finished."""
        with self._lock:
            if self._state.loops.get(loop_id) is None:
                raise UnknownEntityError(f"element {loop_id!r} is not a loop")
            if self._state.states[loop_id] is not ElementState.IN_PROGRESS:
                raise StateError(
                    f"loop {loop_id!r} body is not complete; loop is {self._state.states[loop_id].value}"
                )
            return self._complete_loop_locked(loop_id)

    def mark_started(self, element_id: str) -> EngineEvent:
        with self._lock:
            return self._append(element_id, EventKind.STARTED, self._state.iterations[element_id])

    def report_element_result(self, element_id: str, success: bool, diagnostics: str = "") -> EngineEvent:
        """Record completion of a script or annotation task element."""
        with self._lock:
            if element_id not in self._state.states:
                raise UnknownEntityError(f"no element {element_id!r} in instance")
            current = self._state.states[element_id]
            if current is not ElementState.IN_PROGRESS:
                raise StateError(
                    f"cannot report a result for {element_id!r}: state is {current.value}, not in progress"
                )
            iteration = self._state.iterations[element_id]
            if success and (element_id, iteration) not in self._state.started:
                self._append(element_id, EventKind.STARTED, iteration)
            kind = EventKind.FINISHED if success else EventKind.ERRORED
            return self._append(element_id, kind, iteration, diagnostics)

    def retry_element(self, element_id: str) -> EngineEvent:
        """Manually re-activate an errored element at its current iteration."""
        with self._lock:
            if self._state.states.get(element_id) is not ElementState.ERROR:
                raise StateError(f"retry applies to errored elements; {element_id!r} is not errored")
            return self._append(element_id, EventKind.ACTIVATED, self._state.iterations[element_id], "retry")

    def request_break(self, loop_id: str) -> EngineEvent:
        with self._lock:
            if loop_id not in self._state.loops:
                raise UnknownEntityError(f"element {loop_id!r} is not a loop; cannot set its break flag")
            return self._append(
                loop_id, EventKind.BREAK_REQUESTED, self._state.loops[loop_id].current_iteration
            )


def replace_loop(ls: LoopState) -> LoopState:
    return LoopState(ls.loop_element_id, ls.current_iteration, ls.max_iteration, ls.break_flag)


def resume(instance: PipelineInstance, events: Iterable[EngineEvent], clock: Clock | None = None) -> Engine:
    """Rebuild an engine from a persisted log, verifying it on the way in."""
    return Engine(instance, list(events), clock=clock)
