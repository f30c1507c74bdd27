"""Experiment configuration (JSON files with flat keys grouped in sections)."""
import json
import os
from dataclasses import asdict, dataclass, field

from .attacks import FGSM_EPSILONS, MODES, PGD_EPSILONS, format_epsilon, parse_epsilon
from .errors import ConfigError
from .nn.graph import DESK_CNN
from .xbar.mapping import XbarConfig

HARDWARE_MODES = ("none", "xbar", "sram")
ENV_OUTPUT_DIR = "HWROBUST_OUTPUT_DIR"
ENV_THREADS = "HWROBUST_THREADS"


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "mnist", "path": "data/mnist"})
    model: dict = field(default_factory=lambda: {"layers": DESK_CNN, "epochs": 3, "lr": [0.1, 0.05, 0.02], "batch_size": 64})
    attack: dict = field(default_factory=lambda: {
        "kinds": ["FGSM"],
        "fgsm_epsilons": [format_epsilon(e) for e in FGSM_EPSILONS],
        "pgd_epsilons": [format_epsilon(e) for e in PGD_EPSILONS],
        "pgd_steps": 7, "pgd_alpha": None, "random_start": True, "modes": list(MODES),
    })
    hardware: dict = field(default_factory=lambda: {"mode": "none"})
    seed: int = 0
    output_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown top-level config keys: {sorted(extra)}")
        base = cls()
        for key in ("dataset", "model", "attack", "hardware"):
            if key in d:
                merged = dict(getattr(base, key))
                merged.update(d[key])
                setattr(base, key, merged)
        if "seed" in d:
            base.seed = int(d["seed"])
        if "output_dir" in d:
            base.output_dir = d["output_dir"]
        return base

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
        cfg = cls.from_dict(data)
        cfg._base_dir = os.path.dirname(os.path.abspath(path))
        return cfg

    def apply_env(self, environ=os.environ):
        if environ.get(ENV_OUTPUT_DIR):
            self.output_dir = environ[ENV_OUTPUT_DIR]
        return self

    def resolve(self, p):
        if p is None or os.path.isabs(p):
            return p
        base = getattr(self, "_base_dir", os.getcwd())
        cand = os.path.join(base, p)
        return cand if os.path.exists(cand) else p

    def to_dict(self):
        return asdict(self)

    def epsilons(self, kind):
        key = "fgsm_epsilons" if kind == "FGSM" else "pgd_epsilons"
        return [parse_epsilon(e) for e in self.attack[key]]

    def xbar_configs(self):
        hw = self.hardware
        spec = hw.get("xbar", {})
        if isinstance(spec, str):
            base = XbarConfig.from_file(self.resolve(spec))
        else:
            base = XbarConfig.from_dict(spec)
        sizes = hw.get("xbar_sizes") or [base.size]
        return [XbarConfig(**{**base.to_dict(), "size": int(n)}) for n in sizes]

    def validate(self):
        """Reject inconsistent configs before any compute."""
        ds = self.dataset
        if ds.get("kind") not in ("mnist", "cifar10", "synthetic"):
            raise ConfigError(f"dataset.kind must be mnist, cifar10 or synthetic, got {ds.get('kind')!r}")
        if ds["kind"] != "synthetic" and not os.path.isdir(self.resolve(ds.get("path", ""))):
            raise ConfigError(f"dataset path {ds.get('path')!r} does not exist")
        m = self.model
        # a checkpoint, when given, takes precedence over the layer list
        if not m.get("checkpoint") and not m.get("layers"):
            raise ConfigError("model needs 'layers' or 'checkpoint'")
        if m.get("checkpoint") and not os.path.exists(os.path.join(self.resolve(m["checkpoint"]), "manifest.json")):
            raise ConfigError(f"checkpoint {m['checkpoint']!r} not found")
        a = self.attack
        for kind in a.get("kinds", []):
            if kind not in ("FGSM", "PGD"):
                raise ConfigError(f"unknown attack kind {kind!r}")
            try:
                eps = self.epsilons(kind)
            except (ValueError, ZeroDivisionError):
                raise ConfigError(f"unparseable {kind} epsilon list") from None
            if any(float(e) < 0 for e in eps):
                raise ConfigError("epsilons must be non-negative")
        for mode in a.get("modes", []):
            if mode not in MODES:
                raise ConfigError(f"unknown attack mode {mode!r}")
        if int(a.get("pgd_steps", 7)) < 1:
            raise ConfigError("pgd_steps must be >= 1")
        hw = self.hardware
        mode = hw.get("mode", "none")
        if mode not in HARDWARE_MODES:
            raise ConfigError(f"hardware.mode must be one of {HARDWARE_MODES}")
        present = [k for k in ("xbar", "sram") if hw.get(k) is not None]
        if mode == "none" and present:
            raise ConfigError(f"hardware.mode is 'none' but {present} given")
        if mode != "none" and present and present != [mode]:
            raise ConfigError(f"hardware.mode is {mode!r} but {present} given; exactly one hardware kind per run")
        if mode == "xbar":
            spec = hw.get("xbar", {})
            if isinstance(spec, str) and not os.path.exists(self.resolve(spec)):
                raise ConfigError(f"crossbar config {spec!r} not found")
            self.xbar_configs()
        if mode == "sram":
            s = hw.get("sram")
            if s is None:
                raise ConfigError("hardware.mode 'sram' needs an 'sram' section")
            if isinstance(s, str):
                if not os.path.exists(self.resolve(s)):
                    raise ConfigError(f"hybrid memory config {s!r} not found")
            elif not isinstance(s, dict) or "search" not in s and "layers" not in s:
                raise ConfigError("hardware.sram must be a hybrid-config path or {'search': {...}} / {'layers': ...}")
            bt = hw.get("ber_table")
            if bt and not os.path.exists(self.resolve(bt)):
                raise ConfigError(f"BER table {bt!r} not found")
        return self
