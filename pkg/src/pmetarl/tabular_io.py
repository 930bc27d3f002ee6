"""Plain-text tabular serialisation of tasks, families, Q-tables and checkpoints.

Every block is line oriented and whitespace separated.  State keys are
written as comma-joined integers (``3,4``); floats use ``repr`` so reading a
file back is exact.  A task block::

    task id=0 gamma=0.99 r_max=1.0 states=16 actions=4 branches=1 name=grid4x4@3,2
    state 0,0 0.06666666666666667
    sa 0,0 0 -0.5 0,1:1.0
    end

``state`` rows give a key and its initial probability; ``sa`` rows give key,
action, reward and one ``next-key:prob`` pair per branch.  Lines starting
with ``#`` are ignored.

A Q-table block lists ``q <key> <action> <value>`` rows between
``qtable task=<id> [role=<role>]`` and ``end``; the meta table uses ``meta``
as its opening line.  A checkpoint is a ``checkpoint`` line followed by the
meta block and the personalised and auxiliary blocks of every task.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .envs import TabularTask, TaskFamily
from .errors import PMetaError
from .pmeta import TrainingState
from .qcore import MetaQTable, QTable


class TabularFormatError(PMetaError, ValueError):
    """A tabular text block could not be parsed."""


def _key(k) -> str:
    return ",".join(str(int(c)) for c in k)


def _parse_key(tok: str) -> tuple[int, ...]:
    try:
        return tuple(int(c) for c in tok.split(","))
    except ValueError:
        raise TabularFormatError(f"bad state key {tok!r}") from None


def _fields(line: str, head: str) -> dict[str, str]:
    rest = line[len(head):].strip()
    out: dict[str, str] = {}
    while rest:
        name, _, rest = rest.partition("=")
        if name == "name":  # always last, may contain spaces
            out[name] = rest
            break
        value, _, rest = rest.partition(" ")
        out[name.strip()] = value
        rest = rest.strip()
    return out


# --------------------------------------------------------------------------- tasks


def task_lines(task: TabularTask) -> Iterator[str]:
    S, A, B = task.next_states.shape
    yield (f"task id={task.id} gamma={task.gamma!r} r_max={task.r_max!r} states={S} actions={A} "
           f"branches={B} name={task.name}")
    for s in range(S):
        yield f"state {_key(task.state_keys[s])} {float(task.rho0[s])!r}"
    for s in range(S):
        for a in range(A):
            branches = " ".join(f"{_key(task.state_keys[j])}:{float(p)!r}"
                                for j, p in zip(task.next_states[s, a], task.next_probs[s, a]))
            yield f"sa {_key(task.state_keys[s])} {a} {float(task.rewards[s, a])!r} {branches}"
    yield "end"


def _read_task(head: str, lines: Iterator[str]) -> TabularTask:
    f = _fields(head, "task")
    try:
        S, A, B = int(f["states"]), int(f["actions"]), int(f["branches"])
        keys, rho0 = [], []
        for _ in range(S):
            tag, k, p = next(lines).split()
            if tag != "state":
                raise TabularFormatError(f"expected a state row, got {tag!r}")
            keys.append(_parse_key(k))
            rho0.append(float(p))
        lookup = {k: i for i, k in enumerate(keys)}
        ns = np.zeros((S, A, B), dtype=np.int64)
        npr = np.zeros((S, A, B))
        rew = np.zeros((S, A))
        for _ in range(S * A):
            tag, k, a, r, *branches = next(lines).split()
            if tag != "sa" or len(branches) != B:
                raise TabularFormatError(f"malformed transition row for state {k}")
            s, a = lookup[_parse_key(k)], int(a)
            rew[s, a] = float(r)
            for b, tok in enumerate(branches):
                nk, _, p = tok.rpartition(":")
                ns[s, a, b] = lookup[_parse_key(nk)]
                npr[s, a, b] = float(p)
        if next(lines).strip() != "end":
            raise TabularFormatError("task block not closed by 'end'")
        return TabularTask(int(f["id"]), tuple(keys), ns, npr, rew, float(f["gamma"]), np.array(rho0),
                           float(f["r_max"]), f.get("name", ""))
    except (KeyError, StopIteration, ValueError) as exc:
        if isinstance(exc, TabularFormatError):
            raise
        raise TabularFormatError(f"malformed task block: {exc!r}") from exc


def _blocks(text: str) -> Iterator[str]:
    for line in text.splitlines():
        line = line.rstrip()
        if line and not line.lstrip().startswith("#"):
            yield line


def dumps_family(family: TaskFamily | Sequence[TabularTask]) -> str:
    tasks = family.tasks if isinstance(family, TaskFamily) else tuple(family)
    return "\n".join(line for t in tasks for line in task_lines(t)) + "\n"


def loads_family(text: str) -> TaskFamily:
    lines = _blocks(text)
    tasks = []
    for head in lines:
        if not head.startswith("task "):
            raise TabularFormatError(f"expected 'task', got {head[:30]!r}")
        tasks.append(_read_task(head, lines))
    return TaskFamily(tuple(tasks))


def dumps_task(task: TabularTask) -> str:
    return "\n".join(task_lines(task)) + "\n"


def loads_task(text: str) -> TabularTask:
    family = loads_family(text)
    if len(family) != 1:
        raise TabularFormatError(f"expected one task, found {len(family)}")
    return family[0]


# --------------------------------------------------------------------------- tables


def qtable_lines(q: QTable, task: TabularTask, role: str | None = None) -> Iterator[str]:
    q.check(task)
    yield f"qtable task={q.task_id}" + (f" role={role}" if role else "")
    for s, k in enumerate(task.state_keys):
        for a in range(task.n_actions):
            yield f"q {_key(k)} {a} {float(q.values[s, a])!r}"
    yield "end"


def meta_lines(meta: MetaQTable, family: TaskFamily) -> Iterator[str]:
    meta.check(family)
    yield f"meta keys={family.n_keys}"
    for (k, a), v in zip(family.union_keys, meta.values):
        yield f"q {_key(k)} {a} {float(v)!r}"
    yield "end"


def _read_rows(lines: Iterator[str]) -> Iterator[tuple[tuple[int, ...], int, float]]:
    for line in lines:
        if line.strip() == "end":
            return
        tag, k, a, v = line.split()
        if tag != "q":
            raise TabularFormatError(f"expected a q row, got {tag!r}")
        yield _parse_key(k), int(a), float(v)
    raise TabularFormatError("table block not closed by 'end'")


def _read_qtable(head: str, lines: Iterator[str], task: TabularTask) -> tuple[QTable, str | None]:
    f = _fields(head, "qtable")
    values = np.full(task.shape, np.nan)
    for k, a, v in _read_rows(lines):
        values[task.state_index(k), a] = v
    if np.isnan(values).any():
        raise TabularFormatError(f"Q-table for task {task.id} is missing entries")
    return QTable(int(f["task"]), values), f.get("role")


def _read_meta(lines: Iterator[str], family: TaskFamily) -> MetaQTable:
    lookup = {k: i for i, k in enumerate(family.union_keys)}
    values = np.full(family.n_keys, np.nan)
    for k, a, v in _read_rows(lines):
        try:
            values[lookup[(k, a)]] = v
        except KeyError:
            raise TabularFormatError(f"key {k}/{a} is not in the family") from None
    if np.isnan(values).any():
        raise TabularFormatError("meta table is missing entries")
    return MetaQTable(values)


def dumps_qtable(q: QTable, task: TabularTask) -> str:
    return "\n".join(qtable_lines(q, task)) + "\n"


def loads_qtable(text: str, task: TabularTask) -> QTable:
    lines = _blocks(text)
    head = next(lines, "")
    if not head.startswith("qtable"):
        raise TabularFormatError("expected a qtable block")
    return _read_qtable(head, lines, task)[0]


def dumps_meta(meta: MetaQTable, family: TaskFamily) -> str:
    return "\n".join(meta_lines(meta, family)) + "\n"


def loads_meta(text: str, family: TaskFamily) -> MetaQTable:
    lines = _blocks(text)
    if not next(lines, "").startswith("meta"):
        raise TabularFormatError("expected a meta block")
    return _read_meta(lines, family)


# --------------------------------------------------------------------------- checkpoints


def dumps_state(state: TrainingState, family: TaskFamily) -> str:
    state.check(family)
    out = [f"checkpoint round={state.round} tasks={len(family)} updates={','.join(map(str, state.updates))}"]
    out.extend(meta_lines(state.meta, family))
    for task, p, x in zip(family, state.personalized, state.auxiliary):
        out.extend(qtable_lines(p, task, "personalized"))
        out.extend(qtable_lines(x, task, "auxiliary"))
    return "\n".join(out) + "\n"


def loads_state(text: str, family: TaskFamily) -> TrainingState:
    lines = _blocks(text)
    head = next(lines, "")
    if not head.startswith("checkpoint"):
        raise TabularFormatError("expected a checkpoint header")
    f = _fields(head, "checkpoint")
    if int(f["tasks"]) != len(family):
        raise TabularFormatError(f"checkpoint has {f['tasks']} tasks, family has {len(family)}")
    if not next(lines, "").startswith("meta"):
        raise TabularFormatError("expected the meta block")
    meta = _read_meta(lines, family)
    pers, aux = [], []
    for task in family:
        for bucket, role in ((pers, "personalized"), (aux, "auxiliary")):
            q, got = _read_qtable(next(lines), lines, task)
            if got != role:
                raise TabularFormatError(f"expected the {role} table of task {task.id}, got {got}")
            bucket.append(q)
    updates = [int(u) for u in f.get("updates", "").split(",") if u]
    state = TrainingState(meta, pers, aux, int(f["round"]), updates)
    state.check(family)
    return state


def _write(path, text: str) -> Path:
    path = Path(path)
    path.write_text(text)
    return path


def save_family(family: TaskFamily, path) -> Path:
    return _write(path, dumps_family(family))


def load_family(path) -> TaskFamily:
    return loads_family(Path(path).read_text())


def save_state(state: TrainingState, family: TaskFamily, path) -> Path:
    return _write(path, dumps_state(state, family))


def load_state(path, family: TaskFamily) -> TrainingState:
    return loads_state(Path(path).read_text(), family)


def dumps_tables(family: TaskFamily, meta: MetaQTable | None = None,
                 tables: Sequence[QTable] | None = None, role: str = "final") -> str:
    """Final tables of a comparison trainer: an optional meta block, then per-task blocks."""
    out: list[str] = []
    if meta is not None:
        out.extend(meta_lines(meta, family))
    for task, q in zip(family, tables or ()):
        out.extend(qtable_lines(q, task, role))
    return "\n".join(out) + "\n"
