"""Layer selection for bit-error injection.

For every candidate layer the number of 6T bits is swept from 1 to 8 at a
fixed Vdd while a fixed-strength FGSM attack (noise-free gradients) is
evaluated; layers beating the baseline adversarial accuracy by more than the
threshold are shortlisted, and subsets of the shortlist are then evaluated
together to pick the final configuration.
"""
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, NoisyModel, evaluate, fgsm, gradient
from .errors import ConfigError
from .sram import BerTable, HybridMemConfig, make_noise_hooks

log = logging.getLogger(__name__)

ACTIVATION_KINDS = ("conv2d", "fc", "relu", "maxpool", "avgpool")


@dataclass
class SweepResult:
    layer_id: int
    n8: int
    n6: int
    adversarial_accuracy: float
    baseline_adversarial_accuracy: float
    clean_accuracy: float = None

    @property
    def delta(self):
        return self.adversarial_accuracy - self.baseline_adversarial_accuracy

    @property
    def best(self):
        return (self.n8, self.n6)


@dataclass
class SearchOutcome:
    selected: tuple
    configs: list
    adversarial_accuracy: float
    clean_accuracy: float
    baseline_clean_accuracy: float
    baseline_adversarial_accuracy: float
    log: list = field(default_factory=list, repr=False)

    @property
    def clean_deviation(self):
        return self.baseline_clean_accuracy - self.clean_accuracy

    def key(self):
        """Comparable summary used for determinism checks."""
        return (self.selected, tuple((c.layer_id, c.n8, c.n6, c.vdd) for c in self.configs),
                self.adversarial_accuracy, self.clean_accuracy)


def candidate_layers(model):
    """Layers whose outputs live in an activation memory (not flatten, not the logits)."""
    out = []
    last = len(model.layers) - 1
    for k, layer in enumerate(model.layers):
        if layer.kind == "flatten":
            log.info("layer %d (flatten) holds no activations of its own; skipped", k)
            continue
        if k == last or layer.kind not in ACTIVATION_KINDS:
            continue
        out.append(k)
    return out


def _check_attack(cfg):
    if cfg.kind != "FGSM":
        raise ConfigError("layer search uses a fixed-strength FGSM attack")


def baseline_adversaries(model, attack_cfg, eval_set):
    x, y = eval_set
    return fgsm(model, x, y, attack_cfg.epsilon, grad=gradient(model, x, y))


def _noisy(model, configs, seed):
    return NoisyModel(model, make_noise_hooks(configs, model, seed))


def sweep_layer(model, layer_id, vdd, attack_cfg, eval_set, ber_table=None, seed=0, x_adv=None,
                baseline_aa=None, log_rows=None):
    """Evaluate n6 = 1..8 on one layer; ties go to the smaller n6."""
    _check_attack(attack_cfg)
    table = ber_table or BerTable.default()
    if model.layers[layer_id].kind == "flatten":
        log.info("layer %d (flatten) skipped", layer_id)
        return None
    x, y = eval_set
    if x_adv is None:
        x_adv = baseline_adversaries(model, attack_cfg, eval_set)
    if baseline_aa is None:
        baseline_aa = evaluate(model, (x_adv, y))
    best = None
    for n6 in range(1, 9):
        cfg = HybridMemConfig(layer_id, 8 - n6, n6, vdd, table)
        noisy = _noisy(model, [cfg], seed)
        aa = evaluate(noisy, (x_adv, y))
        ca = evaluate(noisy, eval_set)
        if log_rows is not None:
            log_rows.append({"stage": "sweep", "layers": str(layer_id), "config": cfg.ratio, "vdd": vdd,
                             "clean_acc": ca, "adv_acc": aa, "baseline_adv_acc": baseline_aa})
        if best is None or aa > best.adversarial_accuracy:
            best = SweepResult(layer_id, 8 - n6, n6, aa, baseline_aa, ca)
    return best


def shortlist(results, threshold=5.0):
    """Layers whose best delta exceeds ``threshold``; falls back to the single best layer."""
    results = [r for r in results if r is not None]
    chosen = [r.layer_id for r in results if r.delta > threshold]
    if not chosen and results:
        top = max(results, key=lambda r: r.delta)
        log.warning("no layer beats the baseline by more than %.1f points; falling back to layer %d",
                    threshold, top.layer_id)
        chosen = [top.layer_id]
    return chosen


def subsets(layers, cap=8):
    layers = list(layers)
    if len(layers) <= cap:
        for r in range(1, len(layers) + 1):
            yield from itertools.combinations(layers, r)
    else:
        yield from itertools.combinations(layers, 1)
        yield from itertools.combinations(layers, 2)
        yield tuple(layers)


def combine_and_select(model, short, best_configs, attack_cfg, eval_set, seed=0, x_adv=None,
                       baseline_aa=None, log_rows=None):
    """Evaluate subsets of the shortlist and keep the one with the highest adversarial accuracy."""
    _check_attack(attack_cfg)
    x, y = eval_set
    if x_adv is None:
        x_adv = baseline_adversaries(model, attack_cfg, eval_set)
    base_ca = evaluate(model, eval_set)
    if baseline_aa is None:
        baseline_aa = evaluate(model, (x_adv, y))
    best = None
    evaluated = []
    for subset in subsets(short):
        cfgs = [best_configs[k] for k in subset]
        noisy = _noisy(model, cfgs, seed)
        aa = evaluate(noisy, (x_adv, y))
        ca = evaluate(noisy, eval_set)
        evaluated.append((subset, aa, ca))
        if log_rows is not None:
            log_rows.append({"stage": "combine", "layers": "+".join(map(str, subset)),
                             "config": " ".join(f"{c.layer_id}:{c.ratio}" for c in cfgs), "vdd": cfgs[0].vdd,
                             "clean_acc": ca, "adv_acc": aa, "baseline_adv_acc": baseline_aa})
        if best is None or aa > best.adversarial_accuracy:
            best = SearchOutcome(tuple(subset), cfgs, aa, ca, base_ca, baseline_aa)
    best.log = evaluated
    return best


def search(model, vdd, attack_cfg, eval_set, layers=None, ber_table=None, seed=0, threshold=5.0):
    """Full sweep -> shortlist -> combination search. Returns ``(outcome, sweeps, log_rows)``."""
    _check_attack(attack_cfg)
    table = ber_table or BerTable.default()
    x, y = eval_set
    x_adv = baseline_adversaries(model, attack_cfg, eval_set)
    baseline_aa = evaluate(model, (x_adv, y))
    log_rows = [{"stage": "baseline", "layers": "", "config": "H", "vdd": vdd,
                 "clean_acc": evaluate(model, eval_set), "adv_acc": baseline_aa, "baseline_adv_acc": baseline_aa}]
    layers = candidate_layers(model) if layers is None else list(layers)
    sweeps = []
    for k in layers:
        r = sweep_layer(model, k, vdd, attack_cfg, eval_set, table, seed, x_adv, baseline_aa, log_rows)
        if r is not None:
            sweeps.append(r)
            log.info("layer %d: best %d/%d AA %.2f (baseline %.2f)", k, r.n8, r.n6,
                     r.adversarial_accuracy, baseline_aa)
    short = shortlist(sweeps, threshold)
    best_cfgs = {r.layer_id: HybridMemConfig(r.layer_id, r.n8, r.n6, vdd, table) for r in sweeps}
    outcome = combine_and_select(model, short, best_cfgs, attack_cfg, eval_set, seed, x_adv, baseline_aa,
                                 log_rows)
    return outcome, sweeps, log_rows


def evaluate_outcome(model, outcome, attack_cfg, test_set, seed=0):
    """Re-score a selected configuration on a separate test split."""
    x, y = test_set
    x_adv = baseline_adversaries(model, attack_cfg, test_set)
    noisy = _noisy(model, outcome.configs, seed)
    return {
        "baseline_clean_acc": evaluate(model, test_set),
        "baseline_adv_acc": evaluate(model, (x_adv, y)),
        "clean_acc": evaluate(noisy, test_set),
        "adv_acc": evaluate(noisy, (x_adv, y)),
    }
