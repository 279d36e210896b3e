"""
Decision-weighted odds-ratio preference objective.

The first K response tokens (the decision window) carry weight alpha, every
other token weight 1. A response's sequence log-probability is the weighted
average of its token log-probabilities, and the loss is

    total = -seq_logp(chosen) + beta * -log sigmoid(log_odds(chosen) - log_odds(rejected))

with log_odds(l) = l - log(1 - exp(l)). Analytic gradients with respect to
every token log-probability are returned alongside the loss so they can be
checked against finite differences.

ToyScorer is a per-position categorical table: small enough to train with
plain numpy gradient descent, large enough to show how the decision window
rebalances gradient between long and short responses.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from errors import DivergenceError, DomainError

logger = logging.getLogger(__name__)

# weighted log-probabilities at or above this are treated as p = 1
LOGP_CEILING = -1e-12

SWEEP_K = (2, 4, 8, 16)
SWEEP_ALPHA = (1.0, 2.0, 3.0, 5.0, 10.0, 20.0)
# alpha chain the property checks walk; 1e9 stands in for alpha -> infinity
PROPERTY_ALPHA = (1.0, 1.5, 2.0, 3.0, 5.0, 10.0, 1e9)


@dataclass(frozen=True)
class DecisionConfig:
    K: int = 8
    alpha: float = 2.0
    beta: float = 0.1
    length_normalized: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise DomainError(f"decision window must be >= 1, got K={self.K}")
        if self.alpha < 1:
            raise DomainError(f"decision weight must be >= 1, got alpha={self.alpha}")
        if self.beta <= 0:
            raise DomainError(f"OR coefficient must be > 0, got beta={self.beta}")


@dataclass(frozen=True)
class ScoredResponse:
    logps: Tuple[float, ...]
    r: int = 1

    def __post_init__(self):
        object.__setattr__(self, "logps", tuple(float(v) for v in self.logps))
        if not self.logps:
            raise DomainError("a scored response needs at least one token")
        if not 1 <= self.r <= self.T:
            raise DomainError(f"response start r={self.r} outside 1..{self.T}")
        values = np.asarray(self.logps)
        if not np.all(np.isfinite(values)):
            raise DomainError("token log-probabilities must be finite")
        if np.any(values > 0):
            raise DomainError("token log-probabilities must be <= 0")

    @property
    def T(self) -> int:
        return len(self.logps)

    def array(self) -> np.ndarray:
        return np.asarray(self.logps, dtype=float)


@dataclass(frozen=True)
class LossBreakdown:
    nll: float
    or_term: float
    total: float
    grads_w: np.ndarray = field(repr=False)
    grads_l: np.ndarray = field(repr=False)
    gap: float = 0.0  # log_odds(chosen) - log_odds(rejected)


def token_weights(T: int, r: int, K: int, alpha: float) -> np.ndarray:
    if T < 1 or not 1 <= r <= T:
        raise DomainError(f"response start r={r} outside 1..{T}")
    if K < 1 or alpha < 1:
        raise DomainError(f"need K >= 1 and alpha >= 1, got K={K}, alpha={alpha}")
    weights = np.ones(T)
    # positions are 1-based; the window is truncated at T
    weights[r - 1:min(r - 1 + K, T)] = alpha
    return weights


def _weights(resp: ScoredResponse, cfg: DecisionConfig) -> np.ndarray:
    return token_weights(resp.T, resp.r, cfg.K, cfg.alpha)


def weighted_avg_logprob(resp: ScoredResponse, cfg: DecisionConfig) -> float:
    w = _weights(resp, cfg)
    return float(np.dot(w, resp.array()) / w.sum())


def sequence_logprob(resp: ScoredResponse, cfg: DecisionConfig) -> Tuple[float, np.ndarray]:
    """Sequence log-probability used in the odds and its gradient per token."""
    w = _weights(resp, cfg)
    scale = w.sum() if cfg.length_normalized else 1.0
    return float(np.dot(w, resp.array()) / scale), w / scale


def log_odds(logp: float) -> float:
    if logp >= LOGP_CEILING:
        raise DomainError(f"odds undefined for log-probability {logp} (p = 1)")
    return logp - np.log(-np.expm1(logp))


def _dlog_odds(logp: float) -> float:
    return -1.0 / np.expm1(logp)


def odds_ratio_term(logp_w: float, logp_l: float) -> float:
    """-log sigmoid(log_odds(w) - log_odds(l)) for two sequence log-probabilities."""
    gap = log_odds(logp_w) - log_odds(logp_l)
    return float(np.logaddexp(0.0, -gap))


def or_loss(chosen: ScoredResponse, rejected: ScoredResponse, cfg: DecisionConfig) -> float:
    logp_w, _ = sequence_logprob(chosen, cfg)
    logp_l, _ = sequence_logprob(rejected, cfg)
    return odds_ratio_term(logp_w, logp_l)


def dorpo_loss(chosen: ScoredResponse, rejected: ScoredResponse,
               cfg: DecisionConfig = DecisionConfig()) -> LossBreakdown:
    logp_w, dw = sequence_logprob(chosen, cfg)
    logp_l, dl = sequence_logprob(rejected, cfg)
    gap = log_odds(logp_w) - log_odds(logp_l)
    or_term = float(np.logaddexp(0.0, -gap))
    nll = -logp_w
    total = nll + cfg.beta * or_term

    # d or_term / d gap = -sigmoid(-gap)
    pull = cfg.beta * expit(-gap)
    grads_w = (-1.0 - pull * _dlog_odds(logp_w)) * dw
    grads_l = pull * _dlog_odds(logp_l) * dl
    return LossBreakdown(nll, or_term, total, grads_w, grads_l, float(gap))


def orpo_loss(chosen_logps: Sequence[float], rejected_logps: Sequence[float],
              beta: float) -> float:
    """Unweighted odds-ratio objective over plain token means."""
    logp_w = float(np.mean(chosen_logps))
    logp_l = float(np.mean(rejected_logps))
    return -logp_w + beta * odds_ratio_term(logp_w, logp_l)


def decision_gradient_fraction(T: int, K: int, alpha: float) -> float:
    """Share of the NLL gradient mass that lands inside the decision window."""
    if not 1 <= K <= T:
        raise DomainError(f"need 1 <= K <= T, got K={K}, T={T}")
    if alpha < 1:
        raise DomainError(f"alpha must be >= 1, got {alpha}")
    return alpha * K / (alpha * K + (T - K))


def imbalance_ratio(T_c: int, T_r: int, K: int, alpha: float) -> float:
    if not T_c > T_r > K >= 1:
        raise DomainError(f"need T_c > T_r > K >= 1, got {T_c}, {T_r}, {K}")
    if alpha < 1:
        raise DomainError(f"alpha must be >= 1, got {alpha}")
    return (alpha * K + T_c - K) / (alpha * K + T_r - K)


def numeric_grad(func: Callable[[np.ndarray], float], x: Sequence[float],
                 eps: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = eps
        grad[i] = (func(x + step) - func(x - step)) / (2 * eps)
    return grad


class ToyScorer:
    """Per-position categorical model; token t is scored by softmax(logits[t])."""

    def __init__(self, logits: np.ndarray):
        self.logits = np.array(logits, dtype=float)
        if self.logits.ndim != 2:
            raise DomainError("logits must be a positions x vocabulary table")

    @classmethod
    def uniform(cls, positions: int, vocab: int) -> "ToyScorer":
        return cls(np.zeros((positions, vocab)))

    @property
    def positions(self) -> int:
        return self.logits.shape[0]

    @property
    def vocab(self) -> int:
        return self.logits.shape[1]

    def copy(self) -> "ToyScorer":
        return ToyScorer(self.logits.copy())

    def _check(self, tokens: Sequence[int]):
        if len(tokens) > self.positions:
            raise DomainError(f"sequence of {len(tokens)} tokens exceeds {self.positions} positions")
        if any(not 0 <= tok < self.vocab for tok in tokens):
            raise DomainError("token outside the scorer vocabulary")

    def score(self, tokens: Sequence[int], r: int = 1) -> ScoredResponse:
        self._check(tokens)
        rows = log_softmax(self.logits[:len(tokens)], axis=1)
        logps = np.minimum(rows[np.arange(len(tokens)), tokens], 0.0)
        return ScoredResponse(tuple(logps), r)

    def backward(self, tokens: Sequence[int], token_grads: np.ndarray) -> np.ndarray:
        """Chain per-token log-prob gradients back onto the logit table."""
        grad = np.zeros_like(self.logits)
        n = len(tokens)
        probs = softmax(self.logits[:n], axis=1)
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), tokens] = 1.0
        grad[:n] = token_grads[:, None] * (onehot - probs)
        return grad


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    nll: float
    or_term: float
    gap: float
    window_logp: float  # mean chosen log-prob over the decision window

    def as_row(self) -> Dict:
        return self.__dict__.copy()


def window_logprob(resp: ScoredResponse, K: int) -> float:
    start = resp.r - 1
    return float(np.mean(resp.array()[start:start + K]))


def toy_align_loop(pairs: Sequence[Tuple[Sequence[int], Sequence[int]]], scorer: ToyScorer,
                   cfg: DecisionConfig = DecisionConfig(), steps: int = 200,
                   lr: float = 0.1) -> Tuple[ToyScorer, List[StepRecord]]:
    """
    Full-batch gradient descent on the mean loss over pairs. Each step
    scores both responses, weights their tokens, evaluates the loss and
    moves the logits against its gradient. Returns the trained copy of the
    scorer and one StepRecord per step (taken before the update).
    """
    if not pairs:
        raise DomainError("toy alignment needs at least one pair")
    if steps < 0 or lr <= 0:
        raise DomainError(f"need steps >= 0 and lr > 0, got {steps}, {lr}")
    model = scorer.copy()
    trace = []
    for step in range(steps):
        grad = np.zeros_like(model.logits)
        totals = np.zeros(5)
        for chosen, rejected in pairs:
            scored_w = model.score(chosen)
            scored_l = model.score(rejected)
            out = dorpo_loss(scored_w, scored_l, cfg)
            grad += model.backward(chosen, out.grads_w)
            grad += model.backward(rejected, out.grads_l)
            totals += (out.total, out.nll, out.or_term, out.gap,
                       window_logprob(scored_w, cfg.K))
        totals /= len(pairs)
        if not np.all(np.isfinite(totals)) or not np.all(np.isfinite(grad)):
            raise DivergenceError(step, float(totals[0]))
        trace.append(StepRecord(step, *(float(v) for v in totals)))
        model.logits -= lr * grad / len(pairs)
    if trace:
        logger.info("toy loop: loss %.4f -> %.4f over %d steps (K=%d, alpha=%g)",
                    trace[0].loss, trace[-1].loss, steps, cfg.K, cfg.alpha)
    return model, trace


def steps_to_threshold(trace: Sequence[StepRecord], threshold: float) -> Optional[int]:
    """First step whose window log-probability reaches threshold."""
    for record in trace:
        if record.window_logp >= threshold:
            return record.step
    return None


def make_toy_pairs(n_pairs: int = 8, vocab: int = 16, chosen_len: int = 24,
                   rejected_len: int = 4, seed: int = 0) -> List[Tuple[List[int], List[int]]]:
    """
    Long chosen / short rejected pairs. Chosen tokens come from the lower
    half of the vocabulary and rejected tokens from the upper half; every
    response is a prefix of one fixed sequence so pairs never pull a
    position towards two different tokens.
    """
    if vocab < 2 or chosen_len < 1 or rejected_len < 1:
        raise DomainError("toy pairs need vocab >= 2 and non-empty responses")
    rng = np.random.default_rng(seed)
    half = vocab // 2
    chosen_seq = rng.integers(0, half, size=chosen_len).tolist()
    rejected_seq = rng.integers(half, vocab, size=rejected_len).tolist()
    pairs = []
    for i in range(n_pairs):
        c_len = max(1, chosen_len - i % 4)
        r_len = max(1, rejected_len - i % 2)
        pairs.append((chosen_seq[:c_len], rejected_seq[:r_len]))
    return pairs


@dataclass(frozen=True)
class SweepPoint:
    K: int
    alpha: float
    final_loss: float
    final_gap: float
    window_logp: float


def sweep_toy(pairs, K_grid: Sequence[int] = SWEEP_K, alpha_grid: Sequence[float] = SWEEP_ALPHA,
              steps: int = 100, lr: float = 0.5, beta: float = 0.1,
              vocab: Optional[int] = None) -> List[SweepPoint]:
    positions = max(max(len(c), len(r)) for c, r in pairs)
    if vocab is None:
        vocab = 1 + max(max(c + r) for c, r in pairs)
    points = []
    for K in K_grid:
        for alpha in alpha_grid:
            cfg = DecisionConfig(K=K, alpha=alpha, beta=beta)
            _, trace = toy_align_loop(pairs, ToyScorer.uniform(positions, vocab), cfg, steps, lr)
            last = trace[-1]
            points.append(SweepPoint(K, alpha, last.loss, last.gap, last.window_logp))
    return points


def phi_gamma_table(T_c: int = 300, T_r: int = 30,
                    K_grid: Sequence[int] = (4, 8, 16),
                    alpha_grid: Sequence[float] = SWEEP_ALPHA) -> List[Dict]:
    rows = []
    for K in K_grid:
        for alpha in alpha_grid:
            rows.append({
                "K": K, "alpha": alpha,
                "phi_chosen": decision_gradient_fraction(T_c, K, alpha),
                "phi_rejected": decision_gradient_fraction(T_r, K, alpha),
                "gamma": imbalance_ratio(T_c, T_r, K, alpha),
            })
    return rows


def check_properties(seed: int = 0, trials: int = 1000) -> List[Tuple[str, bool]]:
    """Randomized checks of the objective's algebra; used by `dorpo check`."""
    rng = np.random.default_rng(seed)
    results = []

    ok = True
    for _ in range(trials):
        K = int(rng.integers(1, 20))
        T_r = int(rng.integers(K + 1, K + 200))
        T_c = int(rng.integers(T_r + 1, T_r + 500))
        gammas = [imbalance_ratio(T_c, T_r, K, a) for a in PROPERTY_ALPHA]
        ok &= abs(gammas[0] - T_c / T_r) <= 1e-12 * (T_c / T_r)
        ok &= all(a > b for a, b in zip(gammas, gammas[1:]))
        ok &= abs(gammas[-1] - 1.0) <= 1e-6
    results.append(("imbalance ratio", bool(ok)))

    ok = True
    for _ in range(trials):
        K = int(rng.integers(1, 20))
        T = int(rng.integers(K + 2, K + 500))
        phis = [decision_gradient_fraction(T, K, a) for a in PROPERTY_ALPHA]
        ok &= abs(phis[0] - K / T) <= 1e-12
        ok &= all(a < b for a, b in zip(phis, phis[1:]))
        for a in PROPERTY_ALPHA[:-1]:
            phi = decision_gradient_fraction(T, K, a)
            ok &= decision_gradient_fraction(T, K + 1, a) > phi
            ok &= decision_gradient_fraction(T + 1, K, a) < phi
    results.append(("decision gradient fraction", bool(ok)))

    ok = True
    for _ in range(trials):
        T = int(rng.integers(1, 30))
        resp = ScoredResponse(rng.uniform(-8.0, 0.0, size=T), r=int(rng.integers(1, T + 1)))
        cfg = DecisionConfig(K=int(rng.integers(1, 10)), alpha=float(rng.uniform(1, 20)))
        avg = weighted_avg_logprob(resp, cfg)
        ok &= min(resp.logps) - 1e-12 <= avg <= max(resp.logps) + 1e-12
        rejected = ScoredResponse(rng.uniform(-8.0, -0.05, size=int(rng.integers(1, 12))))
        for normalized in (True, False):
            chosen = ScoredResponse(rng.uniform(-8.0, -0.05, size=T))
            out = dorpo_loss(chosen, rejected, replace(cfg, length_normalized=normalized))
            ok &= out.nll >= 0.0 and out.or_term >= 0.0
    results.append(("weighted mean bounds and non-negative loss", bool(ok)))

    ok = True
    for _ in range(100):
        cfg = DecisionConfig(K=int(rng.integers(1, 6)), alpha=float(rng.uniform(1, 5)),
                             beta=float(rng.uniform(0.05, 1.0)))
        chosen = ScoredResponse(rng.uniform(-5.0, -0.05, size=int(rng.integers(1, 12))))
        rejected = ScoredResponse(rng.uniform(-5.0, -0.05, size=int(rng.integers(1, 12))))
        out = dorpo_loss(chosen, rejected, cfg)
        num_w = numeric_grad(lambda x: dorpo_loss(ScoredResponse(x), rejected, cfg).total,
                             chosen.logps)
        num_l = numeric_grad(lambda x: dorpo_loss(chosen, ScoredResponse(x), cfg).total,
                             rejected.logps)
        ok &= np.allclose(out.grads_w, num_w, rtol=1e-6, atol=1e-8)
        ok &= np.allclose(out.grads_l, num_l, rtol=1e-6, atol=1e-8)
        plain = replace(cfg, alpha=1.0)
        ok &= abs(dorpo_loss(chosen, rejected, plain).total
                  - orpo_loss(chosen.logps, rejected.logps, cfg.beta)) <= 1e-12
    results.append(("analytic gradients and reduction", bool(ok)))
    return results
