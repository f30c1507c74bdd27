"""FGSM / PGD adversaries, attack modes and robustness metrics.

Modes:
  SW  gradients from the software model, evaluated on the software model.
  SH  gradients from the software model, evaluated on the hardware model.
  HH  gradients from the hardware model, evaluated on the hardware model.

A hardware model is either a crossbar-mapped :class:`LayerGraph` or a
:class:`NoisyModel` (software graph plus SRAM bit-error hooks). Gradients of a
NoisyModel never see the bit-error noise.
"""
import logging
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError
from .nn.graph import forward, input_gradient

log = logging.getLogger(__name__)

BATCH = 500
FGSM_EPSILONS = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
PGD_EPSILONS = tuple(Fraction(k, 255) for k in (2, 4, 8, 16, 32))
MODES = ("SW", "SH", "HH")


@dataclass
class NoisyModel:
    """A graph evaluated with activation-memory bit errors."""

    base: object
    hooks: dict = field(default_factory=dict)
    model_id: str = ""

    def __post_init__(self):
        if not self.model_id:
            self.model_id = f"{self.base.model_id}-sram"

    @property
    def num_classes(self):
        return self.base.num_classes


def _graph(model):
    return model.base if isinstance(model, NoisyModel) else model


def _hooks(model):
    return model.hooks if isinstance(model, NoisyModel) else None


def predict(model, x, batch_size=BATCH):
    out = []
    g, hooks = _graph(model), _hooks(model)
    for i, s in enumerate(range(0, len(x), batch_size)):
        logits, _ = forward(g, x[s:s + batch_size], hooks, batch_index=i)
        out.append(logits.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def gradient(model, x, y, batch_size=BATCH):
    """Per-sample input gradients of the loss; bit-error hooks are excluded."""
    g = _graph(model)
    out = []
    for s in range(0, len(x), batch_size):
        xb, yb = x[s:s + batch_size], y[s:s + batch_size]
        _, tape = forward(g, xb)
        out.append(input_gradient(g, xb, yb, tape))
    return np.concatenate(out) if out else np.zeros_like(x)


def evaluate(model, dataset, batch_size=BATCH):
    """Accuracy in percent."""
    x, y = dataset
    if len(y) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    return 100.0 * float(np.count_nonzero(predict(model, x, batch_size) == y)) / len(y)


def fgsm(grad_model, x, y_true, epsilon, grad=None):
    """``clip(x + eps * sign(grad_x L), 0, 1)``; ``grad`` may be precomputed.

    The result goes through the same ball projection as PGD, so ``|x_adv - x| <= eps``
    holds exactly in floating point (at most one ulp below the nominal step).
    """
    x = np.asarray(x, dtype=np.float64)
    if epsilon == 0:
        return x.copy()
    if grad is None:
        grad = gradient(grad_model, x, np.asarray(y_true))
    return _project(x + float(epsilon) * np.sign(grad), x, float(epsilon))


def _project(x_adv, x, epsilon):
    out = np.clip(np.clip(x_adv, x - epsilon, x + epsilon), 0.0, 1.0)
    # x + eps can round so that (x + eps) - x exceeds eps by an ulp; step back toward x until it holds
    while True:
        bad = np.abs(out - x) > epsilon
        if not bad.any():
            return out
        out[bad] = np.nextafter(out[bad], x[bad])


def sample_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def pgd(grad_model, x, y_true, epsilon, alpha, steps, seed=0, random_start=True, sample_ids=None,
        callback=None):
    """L-inf projected gradient ascent.

    Each sample's random start comes from its own stream keyed by
    ``(seed, sample_id)`` so results do not depend on batching.
    ``callback(step, x_adv)`` sees every iterate including the start point.
    """
    x = np.asarray(x, dtype=np.float64)
    y_true = np.asarray(y_true)
    epsilon = float(epsilon)
    if steps < 1 or alpha <= 0:
        raise ConfigError("PGD needs steps >= 1 and alpha > 0")
    ids = np.arange(len(x)) if sample_ids is None else np.asarray(sample_ids)
    if random_start and epsilon > 0:
        noise = np.stack([sample_rng(seed, i).uniform(-epsilon, epsilon, size=x.shape[1:]) for i in ids])
        x_adv = _project(x + noise, x, epsilon)
    else:
        x_adv = x.copy()
    if callback:
        callback(0, x_adv)
    for t in range(steps):
        g = gradient(grad_model, x_adv, y_true)
        x_adv = _project(x_adv + alpha * np.sign(g), x, epsilon)
        if callback:
            callback(t + 1, x_adv)
    return x_adv


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "FGSM"
    epsilon: float = 0.1
    pgd_steps: int = 7
    pgd_alpha: float = None  # defaults to epsilon / 4
    mode: str = "SW"
    seed: int = 0
    random_start: bool = True
    eps_label: str = None

    def __post_init__(self):
        if self.kind not in ("FGSM", "PGD"):
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if float(self.epsilon) < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.kind == "PGD":
            if self.pgd_steps < 1:
                raise ConfigError("pgd_steps must be >= 1")
            if self.pgd_alpha is not None and self.pgd_alpha <= 0:
                raise ConfigError("pgd_alpha must be > 0")

    @property
    def alpha(self):
        return self.pgd_alpha if self.pgd_alpha is not None else float(self.epsilon) / 4

    @property
    def label(self):
        return self.eps_label if self.eps_label is not None else format_epsilon(self.epsilon)


def format_epsilon(eps):
    if isinstance(eps, Fraction):
        return f"{eps.numerator}/{eps.denominator}"
    return f"{float(eps):g}"


def parse_epsilon(text):
    """``"8/255"`` -> Fraction, ``"0.1"`` -> float."""
    text = str(text).strip()
    if "/" in text:
        num, den = text.split("/")
        return Fraction(int(num), int(den))
    return float(text)


@dataclass
class ReportRow:
    model_id: str
    attack: str
    mode: str
    epsilon: str
    clean_acc: float
    adv_acc: float
    adv_loss: float

    @property
    def epsilon_value(self):
        return float(parse_epsilon(self.epsilon))

    def to_dict(self):
        return asdict(self)


def make_row(model_id, attack, mode, eps_label, clean_acc, adv_acc):
    return ReportRow(model_id, attack, mode, eps_label, clean_acc, adv_acc, clean_acc - adv_acc)


def adversaries(grad_model, dataset, cfg, cache=None):
    """Adversarial copy of ``dataset[0]``; FGSM gradients are cached per gradient source."""
    x, y = dataset
    eps = float(cfg.epsilon)
    if cfg.kind == "FGSM":
        if eps == 0:
            return x.copy()
        key = ("grad", id(_graph(grad_model)))
        if cache is not None and key in cache:
            g = cache[key]
        else:
            g = gradient(grad_model, x, y)
            if cache is not None:
                cache[key] = g
        return fgsm(grad_model, x, y, eps, grad=g)
    if eps == 0:
        return x.copy()
    out = []
    for s in range(0, len(x), BATCH):
        out.append(pgd(grad_model, x[s:s + BATCH], y[s:s + BATCH], eps, cfg.alpha, cfg.pgd_steps,
                       cfg.seed, cfg.random_start, sample_ids=np.arange(s, min(s + BATCH, len(x)))))
    return np.concatenate(out)


def run_attack(software_model, hardware_model, dataset, cfg, cache=None):
    """One report row for ``cfg`` on ``dataset``; see module docstring for modes."""
    if cfg.mode in ("SH", "HH") and hardware_model is None:
        raise ConfigError(f"mode {cfg.mode} needs a hardware model")
    cache = {} if cache is None else cache
    grad_src = hardware_model if cfg.mode == "HH" else software_model
    target = software_model if cfg.mode == "SW" else hardware_model
    ca_key = ("clean", id(target))
    if ca_key not in cache:
        cache[ca_key] = evaluate(target, dataset)
    x_adv = adversaries(grad_src, dataset, cfg, cache)
    aa = evaluate(target, (x_adv, dataset[1]))
    model_id = getattr(target, "model_id", "model")
    return make_row(model_id, cfg.kind, cfg.mode, cfg.label, cache[ca_key], aa)


def attack_grid(software_model, hardware_model, dataset, kind, epsilons, modes=MODES, seed=0,
                pgd_steps=7, pgd_alpha=None, random_start=True):
    """Rows for every (mode, epsilon); FGSM gradients are shared across epsilons."""
    cache = {}
    rows = []
    for mode in modes:
        for eps in epsilons:
            cfg = AttackConfig(kind, eps, pgd_steps, pgd_alpha, mode, seed, random_start)
            rows.append(run_attack(software_model, hardware_model, dataset, cfg, cache))
            log.info("%s %s eps=%s: CA %.2f AA %.2f AL %.2f", kind, mode, cfg.label,
                     rows[-1].clean_acc, rows[-1].adv_acc, rows[-1].adv_loss)
    return rows
