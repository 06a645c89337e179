"""Finite episodic MDPs, tabular softmax policies and seeded rollouts.

States are integers ``0 .. n_states-1``; one of them is the absorbing
terminal state. Rollouts run in lockstep over a batch of episodes, each
episode consuming its own row of pre-drawn uniforms, so a batch result does
not depend on how many episodes are simulated alongside it.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

ROW_TOL = 1e-12

LEFT, DOWN, RIGHT, UP = 0, 1, 2, 3
_MOVES = {LEFT: (0, -1), DOWN: (1, 0), RIGHT: (0, 1), UP: (-1, 0)}
_PERPENDICULAR = {LEFT: (DOWN, UP), RIGHT: (DOWN, UP), DOWN: (LEFT, RIGHT), UP: (LEFT, RIGHT)}


@dataclass(frozen=True, eq=False)
class EpisodicMdp:
    """Finite MDP with an absorbing terminal state and a hard episode cap.

    ``transition[s, a, s2]`` and ``reward[s, a, s2]`` are dense arrays.
    """

    transition: np.ndarray
    reward: np.ndarray
    start_state: int
    terminal_state: int = 0
    episode_cap: int = 100
    name: str = "mdp"
    cell_of_state: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        P = np.array(self.transition, dtype=float)
        Rw = np.array(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or Rw.shape != P.shape:
            raise ValueError("transition and reward must both have shape (S, A, S)")
        if np.any(P < 0):
            raise ValueError("negative transition probability")
        n = P.shape[0]
        t = int(self.terminal_state)
        if not 0 <= t < n or not 0 <= int(self.start_state) < n:
            raise ValueError("start/terminal state out of range")
        if int(self.start_state) == t:
            raise ValueError("start state cannot be the terminal state")
        # terminal is absorbing with zero reward regardless of what was passed
        P[t] = 0.0
        P[t, :, t] = 1.0
        Rw[t] = 0.0
        bad = np.abs(P.sum(axis=2) - 1.0) > ROW_TOL
        if np.any(bad):
            s, a = np.argwhere(bad)[0]
            raise ValueError(f"transition row (s={s}, a={a}) sums to {P[s, a].sum()!r}")
        if int(self.episode_cap) < 1:
            raise ValueError("episode_cap must be >= 1")
        P.setflags(write=False)
        Rw.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", Rw)
        object.__setattr__(self, "start_state", int(self.start_state))
        object.__setattr__(self, "terminal_state", t)
        object.__setattr__(self, "episode_cap", int(self.episode_cap))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_params(self) -> int:
        return self.n_states * self.n_actions

    @property
    def r_max(self) -> float:
        """Largest |reward| over transitions with positive probability."""
        feasible = self.transition > 0
        return float(np.max(np.abs(self.reward[feasible]), initial=0.0))

    def with_cap(self, cap: int) -> "EpisodicMdp":
        return EpisodicMdp(self.transition, self.reward, self.start_state,
                           self.terminal_state, cap, self.name, self.cell_of_state)

    # -- text format --------------------------------------------------------

    def to_text(self) -> str:
        lines = [
            f"# {self.name}",
            f"states {self.n_states}",
            f"actions {self.n_actions}",
            f"start {self.start_state}",
            f"terminal {self.terminal_state}",
            f"cap {self.episode_cap}",
            "# s a s_next prob reward",
        ]
        for s, a, s2 in np.argwhere(self.transition > 0):
            if s == self.terminal_state:
                continue
            lines.append(f"{s} {a} {s2} {float(self.transition[s, a, s2])!r} {float(self.reward[s, a, s2])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, name: str | None = None) -> "EpisodicMdp":
        """Parse the plain-text MDP description written by :meth:`to_text`."""
        header: dict[str, int] = {}
        rows = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                if name is None and raw.strip().startswith("#") and not header:
                    name = raw.strip().lstrip("#").strip() or None
                continue
            parts = line.split()
            if parts[0] in ("states", "actions", "start", "terminal", "cap"):
                header[parts[0]] = int(parts[1])
            else:
                if len(parts) != 5:
                    raise ValueError(f"malformed transition line: {raw!r}")
                rows.append((int(parts[0]), int(parts[1]), int(parts[2]),
                             float(parts[3]), float(parts[4])))
        missing = {"states", "actions", "start"} - header.keys()
        if missing:
            raise ValueError(f"MDP description missing {sorted(missing)}")
        S, A = header["states"], header["actions"]
        P = np.zeros((S, A, S))
        Rw = np.zeros((S, A, S))
        for s, a, s2, p, r in rows:
            P[s, a, s2] += p
            Rw[s, a, s2] = r
        term = header.get("terminal", 0)
        P[term, :, term] = 1.0
        return cls(P, Rw, header["start"], term, header.get("cap", 100), name or "mdp")

    @classmethod
    def load(cls, path) -> "EpisodicMdp":
        path = Path(path)
        return cls.from_text(path.read_text(), name=path.stem)


def builtin_text(name: str) -> str:
    return resources.files("drmpg").joinpath("data", name).read_text()


def chain_mdp() -> EpisodicMdp:
    """The two-state, two-action oracle fixture (cap 3, >= 4 distinct returns)."""
    return EpisodicMdp.from_text(builtin_text("chain2.mdp"), name="chain2")


# -- policies ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Tabular softmax policy ``pi(a|s) ~ exp(theta[s, a])``.

    ``theta`` is stored as an (n_states, n_actions) array; ``flat`` gives the
    d-vector view used by gradients, with index ``s * n_actions + a``.
    """

    theta: np.ndarray

    def __post_init__(self) -> None:
        th = np.array(self.theta, dtype=float)
        if th.ndim != 2:
            raise ValueError("theta must be a 2-D (n_states, n_actions) array")
        if not np.all(np.isfinite(th)):
            raise ValueError("theta contains NaN or Inf")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "SoftmaxPolicy":
        return cls(np.zeros((n_states, n_actions)))

    @classmethod
    def for_mdp(cls, mdp: EpisodicMdp, flat=None) -> "SoftmaxPolicy":
        if flat is None:
            return cls.zeros(mdp.n_states, mdp.n_actions)
        return cls(np.asarray(flat, dtype=float).reshape(mdp.n_states, mdp.n_actions))

    @classmethod
    def from_probs(cls, probs) -> "SoftmaxPolicy":
        """Policy whose action probabilities equal ``probs`` (all entries > 0)."""
        probs = np.asarray(probs, dtype=float)
        if np.any(probs <= 0):
            raise ValueError("softmax policies need strictly positive probabilities")
        return cls(np.log(probs))

    @property
    def flat(self) -> np.ndarray:
        return self.theta.ravel()

    @property
    def n_states(self) -> int:
        return self.theta.shape[0]

    @property
    def n_actions(self) -> int:
        return self.theta.shape[1]

    def probs(self) -> np.ndarray:
        z = self.theta - self.theta.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def log_probs(self) -> np.ndarray:
        z = self.theta - self.theta.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def log_prob(self, s: int, a: int) -> float:
        return float(self.log_probs()[s, a])

    def score(self, s: int, a: int) -> np.ndarray:
        """Gradient of ``log pi(a|s)`` w.r.t. the flat parameter vector.

        Only the block of state ``s`` is non-zero: ``1{a'=a} - pi(a'|s)``.
        Its norm is ``sqrt((1-p_a)^2 + sum_{a'!=a} p_a'^2) <= sqrt(2) (1-p_a)``,
        hence below sqrt(2) for every theta.
        """
        g = np.zeros_like(self.theta)
        g[s] = -self.probs()[s]
        g[s, a] += 1.0
        return g.ravel()

    def to_text(self) -> str:
        buf = io.StringIO()
        np.savetxt(buf, self.flat[None, :], header=f"{self.n_states} {self.n_actions}",
                   fmt="%.17g")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "SoftmaxPolicy":
        lines = text.splitlines()
        S, A = (int(x) for x in lines[0].lstrip("#").split())
        flat = np.loadtxt(io.StringIO("\n".join(lines[1:])), ndmin=1)
        return cls(flat.reshape(S, A))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "SoftmaxPolicy":
        return cls.from_text(Path(path).read_text())


# -- episodes ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Episode:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    ret: float
    length: int
    score_sum: np.ndarray
    is_ratio: float = 1.0


@dataclass(frozen=True, eq=False)
class EpisodeBatch:
    """``m`` episodes stored column-wise.

    ``states``/``actions``/``rewards`` are padded to the cap with -1 / 0.
    ``counts[i, s, a]`` is how often episode ``i`` took ``a`` in ``s``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    returns: np.ndarray
    lengths: np.ndarray
    counts: np.ndarray
    score_sums: np.ndarray
    is_ratios: np.ndarray

    def __len__(self) -> int:
        return self.returns.shape[0]

    def __iter__(self) -> Iterator[Episode]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Episode:
        T = int(self.lengths[i])
        return Episode(self.states[i, :T].copy(), self.actions[i, :T].copy(),
                       self.rewards[i, :T].copy(), float(self.returns[i]), T,
                       self.score_sums[i].copy(), float(self.is_ratios[i]))

    @classmethod
    def from_episodes(cls, episodes: Sequence[Episode]) -> "EpisodeBatch":
        if isinstance(episodes, EpisodeBatch):
            return episodes
        episodes = list(episodes)
        if not episodes:
            raise ValueError("empty batch")
        m = len(episodes)
        L = max(max(ep.length for ep in episodes), 1)
        states = np.full((m, L), -1, dtype=np.int64)
        actions = np.full((m, L), -1, dtype=np.int64)
        rewards = np.zeros((m, L))
        for i, ep in enumerate(episodes):
            states[i, :ep.length] = ep.states
            actions[i, :ep.length] = ep.actions
            rewards[i, :ep.length] = ep.rewards
        return cls(states, actions, rewards,
                   np.array([ep.ret for ep in episodes], dtype=float),
                   np.array([ep.length for ep in episodes], dtype=np.int64),
                   np.zeros((m, 0, 0)),
                   np.stack([np.asarray(ep.score_sum, dtype=float) for ep in episodes]),
                   np.array([ep.is_ratio for ep in episodes], dtype=float))

    def reweighted(self, target: SoftmaxPolicy, behavior: SoftmaxPolicy) -> "EpisodeBatch":
        """Same trajectories with score sums and IS ratios for a new target."""
        score, ratios = _score_and_ratio(self.counts, target, behavior)
        return EpisodeBatch(self.states, self.actions, self.rewards, self.returns,
                            self.lengths, self.counts, score, ratios)


def _score_and_ratio(counts, target: SoftmaxPolicy, behavior: SoftmaxPolicy):
    # tabular softmax: sum_t grad log pi(A_t|S_t) = C[s,a] - N[s] * pi(a|s)
    pi = target.probs()
    visits = counts.sum(axis=2, keepdims=True)
    score = (counts - visits * pi[None]).reshape(counts.shape[0], -1)
    if target is behavior or np.array_equal(target.theta, behavior.theta):
        ratios = np.ones(counts.shape[0])
    else:
        log_b = behavior.log_probs()
        if np.any((behavior.probs() == 0.0) & (counts.sum(axis=0) > 0)):
            raise ValueError("behavior policy has zero probability on a taken action")
        diff = target.log_probs() - log_b
        ratios = np.exp(np.einsum("isa,sa->i", counts, diff))
    return score, ratios


def simulate(mdp: EpisodicMdp, behavior: SoftmaxPolicy, target: SoftmaxPolicy | None,
             gamma: float, uniforms: np.ndarray) -> EpisodeBatch:
    """Run ``uniforms.shape[0]`` episodes in lockstep.

    ``uniforms[i, t]`` holds the two draws (action, next state) episode ``i``
    consumes at step ``t``; shape must be ``(m, cap, 2)``.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if behavior.theta.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match the MDP")
    target = behavior if target is None else target
    m, cap = uniforms.shape[0], mdp.episode_cap
    if uniforms.shape[1] < cap:
        raise ValueError("not enough uniforms for the episode cap")
    S, A = mdp.n_states, mdp.n_actions
    b_cum = np.cumsum(behavior.probs(), axis=1)
    p_cum = np.cumsum(mdp.transition, axis=2)
    term = mdp.terminal_state

    states = np.full((m, cap), -1, dtype=np.int64)
    actions = np.full((m, cap), -1, dtype=np.int64)
    rewards = np.zeros((m, cap))
    returns = np.zeros(m)
    lengths = np.zeros(m, dtype=np.int64)
    counts = np.zeros((m, S, A))
    s = np.full(m, mdp.start_state, dtype=np.int64)
    idx = np.arange(m)
    disc = 1.0
    for t in range(cap):
        if idx.size == 0:
            break
        ss = s[idx]
        a = np.minimum((uniforms[idx, t, 0][:, None] >= b_cum[ss]).sum(axis=1), A - 1)
        s2 = np.minimum((uniforms[idx, t, 1][:, None] >= p_cum[ss, a]).sum(axis=1), S - 1)
        r = mdp.reward[ss, a, s2]
        states[idx, t] = ss
        actions[idx, t] = a
        rewards[idx, t] = r
        returns[idx] += disc * r
        lengths[idx] += 1
        counts[idx, ss, a] += 1.0
        s[idx] = s2
        idx = idx[s2 != term]
        disc *= gamma
    score, ratios = _score_and_ratio(counts, target, behavior)
    return EpisodeBatch(states, actions, rewards, returns, lengths, counts, score, ratios)


def rollout_batch(mdp: EpisodicMdp, behavior: SoftmaxPolicy, m: int, gamma: float,
                  rng, target: SoftmaxPolicy | None = None) -> EpisodeBatch:
    """Simulate ``m`` episodes under ``behavior``; ratios/scores w.r.t. ``target``."""
    if m < 1:
        raise ValueError("batch size must be >= 1")
    rng = np.random.default_rng(rng)
    return simulate(mdp, behavior, target, gamma, rng.random((m, mdp.episode_cap, 2)))


def rollout(mdp: EpisodicMdp, behavior: SoftmaxPolicy, target: SoftmaxPolicy,
            gamma: float, rng_seed) -> Episode:
    """One episode with actions from ``behavior``.

    The return is the discounted reward sum, the score sum and importance
    ratio are computed for ``target``. Equal policies give ratio exactly 1.
    """
    return rollout_batch(mdp, behavior, 1, gamma, rng_seed, target=target)[0]


# -- grid worlds -------------------------------------------------------------


def parse_layout(layout: str) -> list[str]:
    rows = [ln.strip() for ln in layout.strip().splitlines() if ln.strip()]
    if not rows:
        raise ValueError("empty layout")
    if len({len(r) for r in rows}) != 1:
        raise ValueError("layout rows have unequal length")
    cells = "".join(rows)
    if set(cells) - set("SFHG"):
        raise ValueError(f"layout has unknown cell types {sorted(set(cells) - set('SFHG'))}")
    if cells.count("S") != 1:
        raise ValueError("layout needs exactly one start cell S")
    if "G" not in cells:
        raise ValueError("layout needs at least one goal cell G")
    return rows


def frozen_lake(layout: str | None = None, slip: float = 0.9, step_reward: float = -0.25,
                hole_reward: float = -10.0, goal_reward: float = 10.0,
                cap: int = 100) -> EpisodicMdp:
    """Slippery grid world; holes and goals end the episode.

    With probability ``slip`` the agent moves in the chosen direction, else in
    one of the two perpendicular directions with equal probability. Moving off
    the grid leaves the agent in place. State 0 is terminal and cell ``(r, c)``
    is state ``1 + r * cols + c``. Actions are left, down, right, up.
    """
    if layout is None:
        layout = builtin_text("frozenlake_6x9.txt")
    if not 0.0 < slip <= 1.0:
        raise ValueError("slip must lie in (0, 1]")
    rows = parse_layout(layout)
    n_rows, n_cols = len(rows), len(rows[0])
    S = 1 + n_rows * n_cols
    P = np.zeros((S, 4, S))
    Rw = np.zeros((S, 4, S))
    cell_of_state = {}
    start = None
    for r in range(n_rows):
        for c in range(n_cols):
            s = 1 + r * n_cols + c
            cell_of_state[s] = (r, c)
            kind = rows[r][c]
            if kind == "S":
                start = s
            if kind in "HG":
                P[s, :, 0] = 1.0
                continue
            for a in range(4):
                side = (1.0 - slip) / 2.0
                for direction, p in ((a, slip), (_PERPENDICULAR[a][0], side),
                                     (_PERPENDICULAR[a][1], side)):
                    if p == 0.0:
                        continue
                    dr, dc = _MOVES[direction]
                    nr, nc = r + dr, c + dc
                    if not (0 <= nr < n_rows and 0 <= nc < n_cols):
                        nr, nc = r, c
                    landing = rows[nr][nc]
                    if landing == "H":
                        s2, rew = 0, hole_reward
                    elif landing == "G":
                        s2, rew = 0, goal_reward
                    else:
                        s2, rew = 1 + nr * n_cols + nc, step_reward
                    P[s, a, s2] += p
                    Rw[s, a, s2] = rew
    return EpisodicMdp(P, Rw, start, 0, cap, name="frozen_lake", cell_of_state=cell_of_state)


# -- return bounds -----------------------------------------------------------


def tight_return_bound(mdp: EpisodicMdp, gamma: float) -> float:
    """Cap-aware bound ``r_max (1 - gamma^M_e) / (1 - gamma)`` on |R|."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    r = mdp.r_max
    return min(r / (1.0 - gamma), r * -np.expm1(mdp.episode_cap * np.log(gamma)) / (1.0 - gamma))


def feasible_return_range(mdp: EpisodicMdp, gamma: float) -> tuple[float, float]:
    """Smallest and largest return over all trajectories with positive probability.

    Backward induction over the remaining horizon; exact, and usually far
    tighter than :func:`tight_return_bound` when large rewards are terminal.
    """
    feasible = mdp.transition > 0
    lo = np.zeros(mdp.n_states)
    hi = np.zeros(mdp.n_states)
    for _ in range(mdp.episode_cap):
        q_hi = np.where(feasible, mdp.reward + gamma * hi[None, None, :], -np.inf).max(axis=(1, 2))
        q_lo = np.where(feasible, mdp.reward + gamma * lo[None, None, :], np.inf).min(axis=(1, 2))
        q_hi[mdp.terminal_state] = 0.0
        q_lo[mdp.terminal_state] = 0.0
        hi, lo = q_hi, q_lo
    return float(lo[mdp.start_state]), float(hi[mdp.start_state])


def feasible_return_bound(mdp: EpisodicMdp, gamma: float) -> float:
    lo, hi = feasible_return_range(mdp, gamma)
    return max(abs(lo), abs(hi))
