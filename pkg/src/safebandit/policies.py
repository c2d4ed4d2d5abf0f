"""Decision policies: softmax-linear, ε-greedy, LinUCB, Thompson sampling, linear ranker.

Stochastic policies expose `action_probabilities`; the free function
`sample_action` draws from that distribution and reports the exact probability
used for the draw, which downstream estimators consume as the logging
propensity. LinUCB and Thompson sampling keep per-action sufficient statistics
and select directly rather than through an explicit distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Protocol, Sequence, Union

import numpy as np

from .core import ActionId, ContextVector, RankedList


def _vec(x: Union[ContextVector, np.ndarray, Sequence[float]]) -> np.ndarray:
    if isinstance(x, ContextVector):
        return x.values
    return np.asarray(x, dtype=np.float64)


class StochasticPolicy(Protocol):
    """Anything that assigns a full probability vector to the action set."""

    @property
    def n_actions(self) -> int: ...

    def action_probabilities(self, x) -> np.ndarray: ...


@dataclass(eq=False)
class SoftmaxLinearPolicy:
    """Boltzmann distribution over linear action scores.

    π(a|x) ∝ exp(w_a·x / temperature), optionally blended with the uniform
    distribution: uniform_mix u gives π = u/n + (1−u)·softmax. The blend keeps
    every propensity at least u/n, so a declared propensity floor survives no
    matter how peaked the learned scores become; u = 0 is the plain softmax.
    """

    weights: np.ndarray  # (n_actions, n_features)
    temperature: float = 1.0
    uniform_mix: float = 0.0

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be an (actions, features) matrix")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.uniform_mix < 1.0:
            raise ValueError("uniform_mix must lie in [0, 1)")

    @classmethod
    def uniform(
        cls, n_actions: int, n_features: int, temperature: float = 1.0,
        uniform_mix: float = 0.0,
    ) -> "SoftmaxLinearPolicy":
        """Zero-weight policy: uniform over actions at every context."""
        return cls(np.zeros((n_actions, n_features)), temperature, uniform_mix)

    @property
    def n_actions(self) -> int:
        return int(self.weights.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[1])

    def copy(self) -> "SoftmaxLinearPolicy":
        return SoftmaxLinearPolicy(
            self.weights.copy(), self.temperature, self.uniform_mix
        )

    def _softmax(self, x: np.ndarray) -> np.ndarray:
        z = self.weights @ x
        z /= self.temperature
        z -= z.max()  # shift-invariant; keeps exp() from overflowing
        np.exp(z, out=z)
        z /= z.sum()
        return z

    def action_probabilities(self, x) -> np.ndarray:
        p = self._softmax(_vec(x))
        if self.uniform_mix > 0.0:
            p *= 1.0 - self.uniform_mix
            p += self.uniform_mix / self.n_actions
        return p

    def batch_action_probabilities(self, X: np.ndarray) -> np.ndarray:
        """Row i holds action_probabilities(X[i]); one matrix product for all rows."""
        Z = np.asarray(X, dtype=np.float64) @ self.weights.T
        Z /= self.temperature
        Z -= Z.max(axis=1, keepdims=True)
        np.exp(Z, out=Z)
        Z /= Z.sum(axis=1, keepdims=True)
        if self.uniform_mix > 0.0:
            Z *= 1.0 - self.uniform_mix
            Z += self.uniform_mix / self.n_actions
        return Z

    def probability(self, x, a: ActionId) -> float:
        return float(self.action_probabilities(x)[a])

    def grad_probability(self, x, a: ActionId) -> np.ndarray:
        """∂π(a|x)/∂weights as an (n, m) matrix.

        Row k is π̃(a|x)(1[k=a] − π̃(k|x))·x/τ with π̃ the unmixed softmax;
        the uniform component is constant in the weights, so the whole
        gradient just scales by (1 − uniform_mix).
        """
        xv = _vec(x)
        soft = self._softmax(xv)
        coeff = -soft[a] * soft
        coeff[a] += soft[a]
        coeff *= (1.0 - self.uniform_mix) / self.temperature
        return np.outer(coeff, xv)

    def grad_log_probability(self, x, a: ActionId) -> np.ndarray:
        """∂log π(a|x)/∂weights; equals grad_probability / π(a|x)."""
        return self.grad_probability(x, a) / self.probability(x, a)


@dataclass(eq=False)
class EpsilonGreedyPolicy:
    """Greedy on linear scores with probability 1−ε, uniform otherwise."""

    base_scores: np.ndarray  # (n_actions, n_features)
    epsilon: float = 0.1

    def __post_init__(self) -> None:
        self.base_scores = np.asarray(self.base_scores, dtype=np.float64)
        if self.base_scores.ndim != 2:
            raise ValueError("base_scores must be an (actions, features) matrix")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    @property
    def n_actions(self) -> int:
        return int(self.base_scores.shape[0])

    def copy(self) -> "EpsilonGreedyPolicy":
        return EpsilonGreedyPolicy(self.base_scores.copy(), self.epsilon)

    def greedy_action(self, x) -> ActionId:
        # np.argmax takes the first maximum: ties break to the lowest id.
        return int(np.argmax(self.base_scores @ _vec(x)))

    def action_probabilities(self, x) -> np.ndarray:
        n = self.n_actions
        p = np.full(n, self.epsilon / n)
        p[self.greedy_action(x)] += 1.0 - self.epsilon
        return p

    def batch_action_probabilities(self, X: np.ndarray) -> np.ndarray:
        n = self.n_actions
        scores = np.asarray(X, dtype=np.float64) @ self.base_scores.T
        P = np.full(scores.shape, self.epsilon / n)
        P[np.arange(scores.shape[0]), np.argmax(scores, axis=1)] += 1.0 - self.epsilon
        return P


def sample_action(policy: StochasticPolicy, x, rng: np.random.Generator
                  ) -> tuple[ActionId, float]:
    """Draw one action; return it with the exact probability it was drawn at."""
    probs = policy.action_probabilities(x)
    cdf = np.cumsum(probs)
    a = int(np.searchsorted(cdf, rng.random(), side="right"))
    if a >= probs.shape[0]:  # guard against cumsum rounding at the top end
        a = probs.shape[0] - 1
    return a, float(probs[a])


class LinUcbState:
    """Per-action ridge regression with an optimistic exploration bonus."""

    def __init__(self, n_actions: int, n_features: int, alpha: float = 1.0) -> None:
        if n_actions < 1 or n_features < 1:
            raise ValueError("need at least one action and one feature")
        if alpha < 0.0:
            raise ValueError("alpha must be non-negative")
        self.alpha = float(alpha)
        self.A = np.stack([np.eye(n_features) for _ in range(n_actions)])
        self.b = np.zeros((n_actions, n_features))

    @property
    def n_actions(self) -> int:
        return int(self.b.shape[0])


def linucb_select(state: LinUcbState, x) -> ActionId:
    """argmax_a θ_a·x + α·sqrt(xᵀ A_a⁻¹ x), θ_a = A_a⁻¹ b_a; ties to lowest id."""
    xv = _vec(x)
    scores = np.empty(state.n_actions)
    for a in range(state.n_actions):
        # Cholesky doubles as the SPD check the invariant demands.
        chol = np.linalg.cholesky(state.A[a])
        theta = _cho_solve(chol, state.b[a])
        Ainv_x = _cho_solve(chol, xv)
        scores[a] = theta @ xv + state.alpha * np.sqrt(max(xv @ Ainv_x, 0.0))
    return int(np.argmax(scores))


def linucb_update(state: LinUcbState, x, a: ActionId, r: float) -> LinUcbState:
    xv = _vec(x)
    state.A[a] += np.outer(xv, xv)
    state.b[a] += r * xv
    return state


def _cho_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular

    y = solve_triangular(chol, rhs, lower=True)
    return solve_triangular(chol.T, y, lower=False)


class ThompsonState:
    """Per-action Gaussian posterior over linear reward weights.

    Prior N(0, ν²I); unit observation noise. Sampling uses a Cholesky factor
    of the precision, refreshed lazily after updates.
    """

    def __init__(self, n_actions: int, n_features: int, nu2: float = 1.0) -> None:
        if n_actions < 1 or n_features < 1:
            raise ValueError("need at least one action and one feature")
        if nu2 <= 0.0:
            raise ValueError("prior variance nu2 must be positive")
        self.nu2 = float(nu2)
        self.precision = np.stack(
            [np.eye(n_features) / nu2 for _ in range(n_actions)]
        )
        self.b = np.zeros((n_actions, n_features))  # Σ r·x per action
        self._chol: list = [None] * n_actions

    @property
    def n_actions(self) -> int:
        return int(self.b.shape[0])

    def posterior_mean(self, a: ActionId) -> np.ndarray:
        return _cho_solve(self._factor(a), self.b[a])

    def _factor(self, a: ActionId) -> np.ndarray:
        if self._chol[a] is None:
            self._chol[a] = np.linalg.cholesky(self.precision[a])
        return self._chol[a]


def thompson_select(state: ThompsonState, x, rng: np.random.Generator) -> ActionId:
    """Sample weights from each posterior, play the argmax of sampled scores."""
    xv = _vec(x)
    scores = np.empty(state.n_actions)
    for a in range(state.n_actions):
        chol = state._factor(a)
        mean = _cho_solve(chol, state.b[a])
        # With precision P = LLᵀ, mean + L⁻ᵀz has covariance P⁻¹.
        from scipy.linalg import solve_triangular

        w = mean + solve_triangular(
            chol.T, rng.standard_normal(xv.shape[0]), lower=False
        )
        scores[a] = w @ xv
    return int(np.argmax(scores))


def thompson_update(state: ThompsonState, x, a: ActionId, r: float) -> ThompsonState:
    xv = _vec(x)
    state.precision[a] += np.outer(xv, xv)
    state.b[a] += r * xv
    state._chol[a] = None
    return state


@dataclass(eq=False)
class LinearRanker:
    """Scores documents by w·d and ranks them descending."""

    weights: np.ndarray  # (n_features,)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or self.weights.size == 0:
            raise ValueError("ranker weights must be a non-empty vector")

    @classmethod
    def zeros(cls, n_features: int) -> "LinearRanker":
        return cls(np.zeros(n_features))

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[0])

    def copy(self) -> "LinearRanker":
        return LinearRanker(self.weights.copy())

    def scores(self, docs: np.ndarray) -> np.ndarray:
        return np.asarray(docs, dtype=np.float64) @ self.weights


def rank_candidates(ranker: LinearRanker, docs) -> RankedList:
    """Sort candidates by score descending, ties by ascending doc id."""
    features = np.asarray(docs, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("docs must be a non-empty (docs, features) matrix")
    scores = ranker.scores(features)
    # Stable sort on -score keeps equal-scored docs in ascending-id order.
    order = np.argsort(-scores, kind="stable")
    return RankedList(doc_ids=order, scores=scores[order])


# --- weight serialization ----------------------------------------------------

_KINDS = {
    "softmax-linear": SoftmaxLinearPolicy,
    "epsilon-greedy": EpsilonGreedyPolicy,
    "linear-ranker": LinearRanker,
}


def policy_to_json(policy) -> str:
    """Serialize a weight-based policy to {kind, n, m, weights, hyperparams}."""
    if isinstance(policy, SoftmaxLinearPolicy):
        kind, w = "softmax-linear", policy.weights
        hyper = {"temperature": policy.temperature, "uniform_mix": policy.uniform_mix}
    elif isinstance(policy, EpsilonGreedyPolicy):
        kind, w = "epsilon-greedy", policy.base_scores
        hyper = {"epsilon": policy.epsilon}
    elif isinstance(policy, LinearRanker):
        kind, w = "linear-ranker", policy.weights.reshape(1, -1)
        hyper = {}
    else:
        raise TypeError(f"cannot serialize policy of type {type(policy).__name__}")
    n, m = w.shape
    return json.dumps(
        {"kind": kind, "n": n, "m": m, "weights": w.ravel().tolist(),
         "hyperparams": hyper}
    )


def policy_from_json(doc: str):
    record = json.loads(doc)
    kind = record["kind"]
    if kind not in _KINDS:
        raise ValueError(f"unknown policy kind {kind!r}")
    w = np.asarray(record["weights"], dtype=np.float64)
    w = w.reshape(record["n"], record["m"])
    hyper = record.get("hyperparams", {})
    if kind == "softmax-linear":
        return SoftmaxLinearPolicy(
            w, hyper.get("temperature", 1.0), hyper.get("uniform_mix", 0.0)
        )
    if kind == "epsilon-greedy":
        return EpsilonGreedyPolicy(w, hyper.get("epsilon", 0.1))
    return LinearRanker(w.ravel())
