"""Gaussian-mixture check that gated expert combination beats summed logits.

Two components N(mu_1, sigma^2 I) and N(mu_2, sigma^2 I) with equal weight.
Labels split each component by distance to its mean: component 1 gives
classes 0/1, component 2 gives classes 2/3. One MLP expert is trained per
component; the comparison is between softmax(f1 + f2) and
softmax(alpha_1 f1 + alpha_2 f2) with Gaussian-similarity gates.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from framework import diffmath as dm
from framework.errors import ConfigError, SequencingError, ShapeError
from framework.optim import AdamW
from models.config import MixtureSpec
from models.reports import SweepPoint, TheoremReport
from services.baselines import pi_combine
from utils.rng import stream

logger = logging.getLogger(__name__)

NUM_CLASSES = 4
MC_BATCH = 2000


class MLPClassifier:
    """Two affine maps with a ReLU between, four logits out."""

    def __init__(self, dims: int, hidden: int, rng: np.random.Generator, name: str = "expert"):
        b1, b2 = 1.0 / math.sqrt(dims), 1.0 / math.sqrt(hidden)
        self.w1 = dm.uniform_parameter((dims, hidden), b1, rng, f"{name}.w1")
        self.b1 = dm.uniform_parameter((hidden,), b1, rng, f"{name}.b1")
        self.w2 = dm.uniform_parameter((hidden, NUM_CLASSES), b2, rng, f"{name}.w2")
        self.b2 = dm.uniform_parameter((NUM_CLASSES,), b2, rng, f"{name}.b2")
        self.trained = False

    def parameters(self) -> List[dm.DiffValue]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x) -> dm.DiffValue:
        return dm.relu(dm.as_value(x) @ self.w1 + self.b1) @ self.w2 + self.b2

    def logits(self, x: np.ndarray) -> np.ndarray:
        if not self.trained:
            raise SequencingError("expert used before training")
        with dm.no_grad():
            return self.forward(np.asarray(x, dtype=np.float64)).data

    def fit(self, x: np.ndarray, y: np.ndarray, epochs: int, lr: float, batch_size: int, rng: np.random.Generator) -> float:
        optimizer = AdamW(lr, weight_decay=0.0)
        params = self.parameters()
        loss = float("nan")
        for _ in range(epochs):
            order = rng.permutation(len(x))
            for start in range(0, len(x), batch_size):
                idx = order[start : start + batch_size]
                value = dm.cross_entropy(self.forward(x[idx]), y[idx])
                dm.backward(value)
                optimizer.step(params)
                optimizer.zero_grad(params)
                loss = value.item()
        self.trained = True
        return loss


# -----------------------------------------------------------------------------
# Data
# -----------------------------------------------------------------------------
def label_by_distance(x, spec: MixtureSpec, component: int):
    """Component 1: 0 within distance d of mu_1, else 1. Component 2: 2 or 3 likewise."""
    if component not in (1, 2):
        raise ConfigError(f"component {component} is neither 1 nor 2", key="component")
    mu = spec.means()[component - 1]
    x = np.asarray(x, dtype=np.float64)
    near = np.linalg.norm(x - mu, axis=-1) <= spec.radius
    base = 0 if component == 1 else 2
    labels = np.where(near, base, base + 1)
    return int(labels) if labels.ndim == 0 else labels.astype(np.int64)


def sample_mixture(spec: MixtureSpec, n: int, seed, components: Sequence[int] = (1, 2)) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Equal share per component (first ones take the remainder); returns (x, labels, component)."""
    if 2.0 * spec.radius > spec.separation:
        raise ConfigError(f"radius d={spec.radius} violates 2d <= B with B={spec.separation}", key="radius")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    means = spec.means()
    xs, ys, cs = [], [], []
    share, extra = divmod(n, len(components))
    for rank, c in enumerate(components):
        count = share + (1 if rank < extra else 0)
        x = means[c - 1] + spec.sigma * rng.standard_normal((count, spec.dims))
        xs.append(x)
        ys.append(label_by_distance(x, spec, c))
        cs.append(np.full(count, c))
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(cs)


def gaussian_gate(x, spec: MixtureSpec, gates: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
    """alpha_i proportional to exp(-||x - g_i||^2 / (2 sigma^2)); rows sum to 1."""
    g1, g2 = gates if gates is not None else spec.means()
    x = np.asarray(x, dtype=np.float64)
    scores = np.stack(
        [-np.sum((x - g) ** 2, axis=-1) / (2.0 * spec.sigma**2) for g in (g1, g2)],
        axis=-1,
    )
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def _cross_entropy_rows(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return -np.log(np.clip(probs[np.arange(len(labels)), labels], 1e-300, None))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -----------------------------------------------------------------------------
# Experts and comparison
# -----------------------------------------------------------------------------
@dataclass
class TrainedExperts:
    expert1: MLPClassifier
    expert2: Optional[MLPClassifier]
    gates: Tuple[np.ndarray, np.ndarray]


def train_experts(spec: MixtureSpec, seed: Optional[int] = None, single: bool = False) -> TrainedExperts:
    """One expert per component on its own samples; gates are the empirical component means."""
    seed = spec.seed if seed is None else seed
    experts, means = [], []
    for c in ((1,) if single else (1, 2)):
        x, y, _ = sample_mixture(spec, spec.train_samples, stream(seed, "theorem", "train", c), components=(c,))
        expert = MLPClassifier(spec.dims, spec.hidden, stream(seed, "theorem", "init", c), name=f"expert{c}")
        final = expert.fit(x, y, spec.epochs, spec.learning_rate, spec.batch_size, stream(seed, "theorem", "shuffle", c))
        logger.info("component %d expert trained, final batch loss %.4f", c, final)
        experts.append(expert)
        means.append(x.mean(axis=0))
    if single:
        return TrainedExperts(experts[0], None, (means[0], means[0]))
    return TrainedExperts(experts[0], experts[1], (means[0], means[1]))


@dataclass
class LossComparison:
    e_pi: float
    e_dy: float
    delta: float
    stderr: float
    differences: np.ndarray


def _losses_on(x: np.ndarray, y: np.ndarray, spec: MixtureSpec, experts: TrainedExperts) -> Tuple[np.ndarray, np.ndarray]:
    f1 = experts.expert1.logits(x)
    if experts.expert2 is None:
        plain = _cross_entropy_rows(_softmax(f1), y)
        return _cross_entropy_rows(pi_combine(f1, np.zeros_like(f1)), y), plain
    f2 = experts.expert2.logits(x)
    if f1.shape != f2.shape:
        raise ShapeError(f"expert logits {f1.shape} vs {f2.shape}")
    alpha = gaussian_gate(x, spec, experts.gates)
    mixed = alpha[:, :1] * f1 + alpha[:, 1:] * f2
    return _cross_entropy_rows(pi_combine(f1, f2), y), _cross_entropy_rows(_softmax(mixed), y)


def bootstrap_stderr(values: np.ndarray, resamples: int, rng: np.random.Generator) -> float:
    if values.size < 2:
        return 0.0
    means = np.empty(resamples)
    for r in range(resamples):
        means[r] = values[rng.integers(0, values.size, values.size)].mean()
    return float(means.std(ddof=1)) if resamples > 1 else 0.0


def compare_losses(
    spec: MixtureSpec,
    experts: TrainedExperts,
    n: Optional[int] = None,
    seed: Optional[int] = None,
    threads: int = 1,
) -> LossComparison:
    """Monte-Carlo E[L_PI], E[L_Dy] and their gap on fresh samples, batch by batch."""
    if not experts.expert1.trained or (experts.expert2 is not None and not experts.expert2.trained):
        raise SequencingError("compare_losses needs trained experts")
    n = spec.eval_samples if n is None else n
    seed = spec.seed if seed is None else seed
    components = (1,) if experts.expert2 is None else (1, 2)
    sizes = [min(MC_BATCH, n - s) for s in range(0, n, MC_BATCH)]

    def run(index: int) -> Tuple[np.ndarray, np.ndarray]:
        x, y, _ = sample_mixture(spec, sizes[index], stream(seed, "theorem", "mc", index), components)
        return _losses_on(x, y, spec, experts)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(index) for index in range(len(sizes))]
    l_pi = np.concatenate([p[0] for p in parts])
    l_dy = np.concatenate([p[1] for p in parts])
    diff = l_pi - l_dy
    stderr = bootstrap_stderr(diff, spec.bootstrap, stream(seed, "theorem", "bootstrap"))
    return LossComparison(float(l_pi.mean()), float(l_dy.mean()), float(diff.mean()), stderr, diff)


def verdict(delta: float, stderr: float) -> str:
    if delta > 3.0 * stderr and delta > 0:
        return "holds"
    if delta < -3.0 * stderr and delta < 0:
        return "violated"
    return "inconclusive"


def sweep(spec: MixtureSpec, ratios: Optional[Sequence[float]] = None, threads: int = 1) -> List[SweepPoint]:
    """Hold d fixed and set sigma = d / ratio for every ratio."""
    if spec.radius <= 0:
        raise ConfigError("the d/sigma sweep needs a positive radius d", key="radius")
    points = []
    for ratio in ratios if ratios is not None else spec.sweep_ratios:
        point_spec = spec.model_copy(update={"sigma": spec.radius / ratio})
        result = compare_losses(point_spec, train_experts(point_spec), threads=threads)
        points.append(
            SweepPoint(ratio=ratio, sigma=point_spec.sigma, e_pi=result.e_pi, e_dy=result.e_dy, delta=result.delta, stderr=result.stderr)
        )
        logger.info("d/sigma=%.3g: delta %.4f +- %.4f", ratio, result.delta, result.stderr)
    return points


def sweep_is_monotone(points: Sequence[SweepPoint]) -> bool:
    """Nondecreasing gap along the sweep, each step allowed one standard error of slack."""
    return all(b.delta >= a.delta - max(a.stderr, b.stderr) for a, b in zip(points, points[1:]))


def run_theorem(spec: MixtureSpec, with_sweep: bool = True, threads: int = 1) -> TheoremReport:
    experts = train_experts(spec)
    result = compare_losses(spec, experts, threads=threads)
    points = sweep(spec, threads=threads) if with_sweep else []
    report = TheoremReport(
        spec=spec,
        e_pi=result.e_pi,
        e_dy=result.e_dy,
        delta=result.delta,
        stderr=result.stderr,
        verdict=verdict(result.delta, result.stderr),
        sweep=points,
        sweep_monotone=sweep_is_monotone(points) if points else None,
    )
    logger.info("gap %.4f +- %.4f: %s", report.delta, report.stderr, report.verdict)
    return report
