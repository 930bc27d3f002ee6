"""Finite-MDP task families and their sampling interface.

A task stores its transition kernel in padded branch form: for every
``(s, a)`` there are ``B`` candidate successors ``next_states[s, a, :]`` with
probabilities ``next_probs[s, a, :]`` (unused slots carry zero mass).  This
keeps expectations vectorised without a dense ``S x A x S`` array, which
matters for the 1024-state mountain-car discretisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InvalidIndex, InvalidTaskParameter

StateKey = tuple[int, ...]
UnionKey = tuple[StateKey, int]

PROB_TOL = 1e-12

# gridworld action order; y grows upwards
GRID_ACTIONS = ("up", "down", "left", "right")
_GRID_MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))

MC_FORCE = 0.001
MC_GRAVITY = 0.0025
MC_POSITION = (-1.2, 0.6)
MC_VELOCITY = (-0.07, 0.07)
MC_GOAL = 0.5


@dataclass(frozen=True, eq=False)
class TabularTask:
    """One finite MDP.

    Attributes:
        id: task index, also used to derive the task's random streams.
        state_keys: canonical coordinates of every state, shared across tasks.
        next_states: int array ``(S, A, B)`` of successor indices.
        next_probs: float array ``(S, A, B)``; each ``(s, a)`` row sums to one.
        rewards: float array ``(S, A)``.
        gamma: discount in ``[0, 1)``.
        rho0: initial-state distribution, shape ``(S,)``.
        r_max: bound on ``|rewards|``.
    """

    id: int
    state_keys: tuple[StateKey, ...]
    next_states: np.ndarray
    next_probs: np.ndarray
    rewards: np.ndarray
    gamma: float
    rho0: np.ndarray
    r_max: float
    name: str = ""

    def __post_init__(self):
        ns = np.ascontiguousarray(self.next_states, dtype=np.int64)
        npr = np.ascontiguousarray(self.next_probs, dtype=np.float64)
        rew = np.ascontiguousarray(self.rewards, dtype=np.float64)
        rho = np.ascontiguousarray(self.rho0, dtype=np.float64)
        for arr in (ns, npr, rew, rho):
            arr.setflags(write=False)
        object.__setattr__(self, "next_states", ns)
        object.__setattr__(self, "next_probs", npr)
        object.__setattr__(self, "rewards", rew)
        object.__setattr__(self, "rho0", rho)
        object.__setattr__(self, "state_keys", tuple(tuple(int(c) for c in k) for k in self.state_keys))
        self._validate()

    def _validate(self):
        if self.next_states.ndim != 3 or self.next_states.shape != self.next_probs.shape:
            raise InvalidTaskParameter("next_states and next_probs must share an (S, A, B) shape")
        n_s, n_a, _ = self.next_states.shape
        if n_s < 1 or n_a < 1:
            raise InvalidTaskParameter("task needs at least one state and one action")
        if self.rewards.shape != (n_s, n_a):
            raise InvalidTaskParameter(f"rewards shape {self.rewards.shape} != {(n_s, n_a)}")
        if self.rho0.shape != (n_s,):
            raise InvalidTaskParameter("rho0 must have one entry per state")
        if len(self.state_keys) != n_s or len(set(self.state_keys)) != n_s:
            raise InvalidTaskParameter("state_keys must be unique, one per state")
        if self.next_states.min() < 0 or self.next_states.max() >= n_s:
            raise InvalidTaskParameter("successor index out of range")
        if (self.next_probs < 0).any():
            raise InvalidTaskParameter("negative transition mass")
        sums = self.next_probs.sum(axis=-1)
        if np.abs(sums - 1.0).max() > PROB_TOL:
            raise InvalidTaskParameter("transition rows must sum to 1")
        if (self.rho0 < 0).any() or abs(self.rho0.sum() - 1.0) > PROB_TOL:
            raise InvalidTaskParameter("rho0 must be a distribution")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidTaskParameter(f"gamma must lie in [0, 1), got {self.gamma}")
        if not np.isfinite(self.rewards).all() or np.abs(self.rewards).max() > self.r_max:
            raise InvalidTaskParameter("rewards exceed r_max")

    @property
    def n_states(self) -> int:
        return self.next_states.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_states.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_states, self.n_actions

    @cached_property
    def _cum_probs(self) -> np.ndarray:
        return np.cumsum(self.next_probs, axis=-1)

    @cached_property
    def _last_branch(self) -> np.ndarray:
        # index of the last slot with positive mass; guards against cumsum rounding below 1
        positive = self.next_probs > 0
        b = self.next_probs.shape[-1]
        return (b - 1 - np.argmax(positive[..., ::-1], axis=-1)).astype(np.int64)

    @cached_property
    def absorbing(self) -> np.ndarray:
        """Boolean mask of states that loop to themselves with zero reward under every action."""
        s_idx = np.arange(self.n_states)[:, None, None]
        stays = np.where(self.next_probs > 0, self.next_states == s_idx, True).all(axis=(1, 2))
        return stays & (self.rewards == 0).all(axis=1)

    @cached_property
    def is_deterministic(self) -> bool:
        return bool(((self.next_probs > 0).sum(axis=-1) == 1).all())

    def expect(self, values: np.ndarray) -> np.ndarray:
        """``E_{s' ~ P(.|s,a)}[values[s']]`` for every ``(s, a)``, shape ``(S, A)``."""
        return (self.next_probs * values[self.next_states]).sum(axis=-1)

    def sample_next(self, s, a, u):
        """Map uniforms ``u`` to successors of ``(s, a)``; broadcasts over arrays."""
        s, a, u = np.asarray(s), np.asarray(a), np.asarray(u)
        shape = np.broadcast_shapes(s.shape, a.shape, u.shape)
        s, a, u = (np.broadcast_to(x, shape) for x in (s, a, u))
        j = (self._cum_probs[s, a] <= u[..., None]).sum(axis=-1)
        j = np.minimum(j, self._last_branch[s, a])
        return self.next_states[s, a, j]

    def check_index(self, s, a=None):
        if not 0 <= int(s) < self.n_states:
            raise InvalidIndex(f"state {s} out of range for task {self.id} ({self.n_states} states)")
        if a is not None and not 0 <= int(a) < self.n_actions:
            raise InvalidIndex(f"action {a} out of range for task {self.id} ({self.n_actions} actions)")

    def state_index(self, key: StateKey) -> int:
        try:
            return self._key_to_state[tuple(key)]
        except KeyError:
            raise InvalidIndex(f"task {self.id} has no state {key}") from None

    @cached_property
    def _key_to_state(self) -> dict[StateKey, int]:
        return {k: i for i, k in enumerate(self.state_keys)}

    def dense_transitions(self) -> np.ndarray:
        """Dense ``(S, A, S)`` kernel; only sensible for small tasks."""
        P = np.zeros((self.n_states, self.n_actions, self.n_states))
        s_idx, a_idx, _ = np.indices(self.next_states.shape)
        np.add.at(P, (s_idx, a_idx, self.next_states), self.next_probs)
        return P

    def with_id(self, new_id: int) -> "TabularTask":
        return TabularTask(new_id, self.state_keys, self.next_states, self.next_probs,
                           self.rewards, self.gamma, self.rho0, self.r_max, self.name)

    def with_rho0(self, rho0) -> "TabularTask":
        return TabularTask(self.id, self.state_keys, self.next_states, self.next_probs,
                           self.rewards, self.gamma, np.asarray(rho0, dtype=float), self.r_max, self.name)


@dataclass(frozen=True, eq=False)
class TaskFamily:
    """N tasks plus the union state-action key space they live in.

    ``key_index[i][s, a]`` is the position of task ``i``'s pair ``(s, a)`` in
    ``union_keys``; ``membership[i, k]`` says whether task ``i`` owns key ``k``.
    """

    tasks: tuple[TabularTask, ...]
    union_keys: tuple[UnionKey, ...] = field(init=False)
    key_index: tuple[np.ndarray, ...] = field(init=False)
    membership: np.ndarray = field(init=False)

    def __post_init__(self):
        tasks = tuple(self.tasks)
        if not tasks:
            raise InvalidTaskParameter("a family needs at least one task")
        keys = sorted({(sk, a) for t in tasks for sk in t.state_keys for a in range(t.n_actions)})
        lookup = {k: i for i, k in enumerate(keys)}
        index = []
        member = np.zeros((len(tasks), len(keys)), dtype=bool)
        for i, t in enumerate(tasks):
            idx = np.array([[lookup[(sk, a)] for a in range(t.n_actions)] for sk in t.state_keys],
                           dtype=np.int64)
            idx.setflags(write=False)
            index.append(idx)
            member[i, idx.ravel()] = True
        member.setflags(write=False)
        object.__setattr__(self, "tasks", tasks)
        object.__setattr__(self, "union_keys", tuple(keys))
        object.__setattr__(self, "key_index", tuple(index))
        object.__setattr__(self, "membership", member)

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i) -> TabularTask:
        return self.tasks[i]

    @property
    def n_keys(self) -> int:
        return len(self.union_keys)

    @cached_property
    def key_counts(self) -> np.ndarray:
        """N_s: number of tasks owning each union key."""
        return self.membership.sum(axis=0)

    @cached_property
    def intersection_keys(self) -> np.ndarray:
        """Union-key indices owned by every task."""
        return np.flatnonzero(self.membership.all(axis=0))

    @property
    def gamma(self) -> float:
        gammas = {t.gamma for t in self.tasks}
        if len(gammas) != 1:
            raise InvalidTaskParameter(f"tasks disagree on gamma: {sorted(gammas)}")
        return gammas.pop()

    @property
    def r_max(self) -> float:
        return max(t.r_max for t in self.tasks)


# --------------------------------------------------------------------------- builders


def make_gridworld_family(sizes: Sequence[int], seed: int, gamma: float = 0.99) -> TaskFamily:
    """One square gridworld per side length, each with a seeded landmark.

    States are cells ``(x, y)`` anchored at the origin corner so that a small
    grid embeds into a larger one.  Moves are deterministic; bumping into the
    border leaves the agent in place.  The reward of a move is the negative
    Manhattan distance from the landing cell to the landmark, normalised by
    the largest distance in that grid.  The landmark is absorbing with zero
    reward, and episodes start uniformly on the remaining cells.
    """
    sizes = list(sizes)
    if not sizes:
        raise InvalidTaskParameter("sizes must be nonempty")
    for n in sizes:
        if int(n) != n or n < 2:
            raise InvalidTaskParameter(f"grid size must be an integer >= 2, got {n}")
    rng = np.random.default_rng(seed)
    tasks = []
    for i, n in enumerate(sizes):
        n = int(n)
        landmark = (int(rng.integers(n)), int(rng.integers(n)))
        tasks.append(_gridworld(i, n, landmark, gamma))
    return TaskFamily(tuple(tasks))


def _gridworld(task_id: int, n: int, landmark: tuple[int, int], gamma: float) -> TabularTask:
    keys = [(x, y) for x in range(n) for y in range(n)]
    index = {k: i for i, k in enumerate(keys)}
    d_max = 2 * (n - 1)
    S, A = len(keys), len(_GRID_MOVES)
    nxt = np.zeros((S, A, 1), dtype=np.int64)
    rew = np.zeros((S, A))
    for s, (x, y) in enumerate(keys):
        for a, (dx, dy) in enumerate(_GRID_MOVES):
            if (x, y) == landmark:
                nxt[s, a, 0] = s
                continue
            nx, ny = x + dx, y + dy
            if not (0 <= nx < n and 0 <= ny < n):
                nx, ny = x, y
            nxt[s, a, 0] = index[(nx, ny)]
            rew[s, a] = -(abs(nx - landmark[0]) + abs(ny - landmark[1])) / d_max
    rho0 = np.ones(S)
    rho0[index[landmark]] = 0.0
    rho0 /= rho0.sum()
    return TabularTask(task_id, tuple(keys), nxt, np.ones((S, A, 1)), rew, gamma, rho0, 1.0,
                       name=f"grid{n}x{n}@{landmark[0]},{landmark[1]}")


def grid_landmark(task: TabularTask) -> StateKey:
    """The absorbing cell of a gridworld task."""
    return task.state_keys[int(np.flatnonzero(task.absorbing)[0])]


def mountaincar_step(p: float, v: float, a: int, incline: float) -> tuple[float, float]:
    """One step of the continuous mountain-car dynamics with clipping."""
    v_next = v + (a - 1) * MC_FORCE - MC_GRAVITY * math.cos(incline * p)
    v_next = min(max(v_next, MC_VELOCITY[0]), MC_VELOCITY[1])
    p_next = min(max(p + v_next, MC_POSITION[0]), MC_POSITION[1])
    return p_next, v_next


def _bin(x: float, lo: float, hi: float, n: int) -> int:
    return min(max(int(math.floor((x - lo) / (hi - lo) * n)), 0), n - 1)


def bin_centers(lo: float, hi: float, n: int) -> np.ndarray:
    w = (hi - lo) / n
    return lo + w * (np.arange(n) + 0.5)


def make_mountaincar_family(inclines: Sequence[float], bins: tuple[int, int] = (32, 32),
                            gamma: float = 0.99) -> TaskFamily:
    """Discretised mountain-car tasks differing only in track inclination.

    Each ``(position-bin, velocity-bin)`` state maps its bin centre through
    the continuous dynamics and puts all mass on the bin it lands in.  Bins
    whose position centre is at or beyond the goal are absorbing; every other
    step costs -1.
    """
    inclines = list(inclines)
    if not inclines:
        raise InvalidTaskParameter("inclines must be nonempty")
    n_p, n_v = (int(b) for b in bins)
    if n_p < 2 or n_v < 2:
        raise InvalidTaskParameter(f"need at least 2 bins per axis, got {bins}")
    pc = bin_centers(*MC_POSITION, n_p)
    vc = bin_centers(*MC_VELOCITY, n_v)
    keys = [(i, j) for i in range(n_p) for j in range(n_v)]
    S, A = len(keys), 3
    goal = np.array([pc[i] >= MC_GOAL for i, _ in keys])

    start_p = [i for i in range(n_p) if -0.6 <= pc[i] <= -0.4] or [_bin(-0.5, *MC_POSITION, n_p)]
    start_v = _bin(0.0, *MC_VELOCITY, n_v)
    rho0 = np.zeros(S)
    for i in start_p:
        rho0[i * n_v + start_v] = 1.0
    rho0 /= rho0.sum()

    tasks = []
    for t, zeta in enumerate(inclines):
        nxt = np.zeros((S, A, 1), dtype=np.int64)
        rew = np.zeros((S, A))
        for s, (i, j) in enumerate(keys):
            if goal[s]:
                nxt[s, :, 0] = s
                continue
            for a in range(A):
                p2, v2 = mountaincar_step(pc[i], vc[j], a, zeta)
                nxt[s, a, 0] = _bin(p2, *MC_POSITION, n_p) * n_v + _bin(v2, *MC_VELOCITY, n_v)
                rew[s, a] = -1.0
        tasks.append(TabularTask(t, tuple(keys), nxt, np.ones((S, A, 1)), rew, gamma, rho0, 1.0,
                                 name=f"mountaincar-zeta{zeta:g}"))
    return TaskFamily(tuple(tasks))


def make_random_task(n_states: int, n_actions: int, rng: np.random.Generator, *,
                     gamma: float = 0.9, branching: int | None = None, task_id: int = 0,
                     r_max: float = 1.0) -> TabularTask:
    """Random MDP with Dirichlet transitions and uniform rewards in ``[-r_max, r_max]``."""
    if n_states < 1 or n_actions < 1:
        raise InvalidTaskParameter("need at least one state and one action")
    b = n_states if branching is None else max(1, min(int(branching), n_states))
    nxt = np.empty((n_states, n_actions, b), dtype=np.int64)
    for s in range(n_states):
        for a in range(n_actions):
            nxt[s, a] = np.sort(rng.choice(n_states, size=b, replace=False))
    probs = rng.dirichlet(np.ones(b), size=(n_states, n_actions))
    probs /= probs.sum(axis=-1, keepdims=True)
    rew = rng.uniform(-r_max, r_max, size=(n_states, n_actions))
    return TabularTask(task_id, tuple((s,) for s in range(n_states)), nxt, probs, rew, gamma,
                       np.full(n_states, 1.0 / n_states), r_max, name=f"random{n_states}x{n_actions}")


def make_bandit_family(arm_rewards: Sequence[Sequence[float]], gamma: float = 0.0) -> TaskFamily:
    """One single-state task per row of ``arm_rewards`` (deterministic payoffs)."""
    tasks = []
    for i, row in enumerate(arm_rewards):
        row = np.asarray(row, dtype=float)
        A = row.size
        r_max = max(1.0, float(np.abs(row).max()))
        tasks.append(TabularTask(i, ((0,),), np.zeros((1, A, 1), dtype=np.int64), np.ones((1, A, 1)),
                                 row[None, :], gamma, np.ones(1), r_max, name=f"bandit{i}"))
    return TaskFamily(tuple(tasks))


# --------------------------------------------------------------------------- sampling


def transition_dist(task: TabularTask, s: int, a: int) -> list[tuple[int, float]]:
    """Stored categorical distribution of ``(s, a)``; zero-mass slots are omitted."""
    task.check_index(s, a)
    out: dict[int, float] = {}
    for nxt, p in zip(task.next_states[s, a], task.next_probs[s, a]):
        if p > 0:
            out[int(nxt)] = out.get(int(nxt), 0.0) + float(p)
    return sorted(out.items())


def step(task: TabularTask, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
    """Sample one transition; consumes exactly one uniform from ``rng``."""
    task.check_index(s, a)
    nxt = task.sample_next(int(s), int(a), rng.random())
    return int(nxt), float(task.rewards[s, a])


def sample_initial(task: TabularTask, rng: np.random.Generator, size=None):
    cum = np.cumsum(task.rho0)
    u = rng.random(size)
    return np.minimum(np.searchsorted(cum, u, side="right"), np.flatnonzero(task.rho0 > 0)[-1])
