"""End-to-end experiment pipeline and run manifest."""
import contextlib
import hashlib
import json
import logging
import os
import time
from importlib.metadata import PackageNotFoundError, version

from . import seeds
from .attacks import NoisyModel, attack_grid
from .config import ExperimentConfig
from .data import load_dataset
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.graph import build_model
from .nn.train import train
from .report import emit_report, write_size_table
from .search import AttackConfig, evaluate_outcome, search
from .sram import BerTable, format_hybrid_config, make_noise_hooks, parse_hybrid_config, read_hybrid_config
from .xbar.mapping import XbarConfig, map_model

log = logging.getLogger(__name__)

VAL_FRACTION = 0.2


def tool_version():
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0.1.0"


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(path):
    if os.path.isfile(path):
        return {path: sha256_file(path)}
    out = {}
    for root, _, files in os.walk(path):
        for name in sorted(files):
            p = os.path.join(root, name)
            out[p] = sha256_file(p)
    return out


class Manifest:
    def __init__(self, cfg):
        self.data = {"tool_version": tool_version(), "config": cfg.to_dict(), "inputs": {}, "stages": [],
                     "outputs": {}, "status": "running"}

    @contextlib.contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        entry = {"stage": name}
        self.data["stages"].append(entry)
        try:
            yield entry
        except Exception as e:
            entry["error"] = f"{type(e).__name__}: {e}"
            self.data["status"] = "partial"
            self.data["failed_stage"] = name
            raise
        finally:
            entry["seconds"] = round(time.perf_counter() - t0, 3)

    def add_outputs(self, paths):
        for p in paths:
            self.data["outputs"][p] = sha256_file(p)

    def write(self, out_dir):
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as f:
            json.dump(self.data, f, indent=2, default=str)
        return path


def dataset_spec(cfg):
    """Dataset section with the path resolved and the synthetic seed derived."""
    ds = dict(cfg.dataset)
    if ds.get("path"):
        ds["path"] = cfg.resolve(ds["path"])
    if ds["kind"] == "synthetic":
        ds.setdefault("seed", seeds.derive(cfg.seed, "data"))
    return ds


def prepare_model(cfg, train_set, manifest=None):
    m = cfg.model
    if m.get("checkpoint"):
        path = cfg.resolve(m["checkpoint"])
        model, _ = load_checkpoint(path)
        if manifest is not None:
            manifest.data["inputs"].update(_hash_tree(path))
        return model
    input_shape = train_set[0].shape[1:]
    model = build_model(m["layers"], input_shape, seeds.rng(cfg.seed, "init"),
                        model_id=m.get("model_id", "cnn"))
    train(model, train_set, int(m.get("epochs", 2)), m.get("lr", 0.1), seeds.derive(cfg.seed, "train"),
          batch_size=int(m.get("batch_size", 64)))
    return model


def split_validation(test_set, fraction=VAL_FRACTION):
    x, y = test_set
    n_val = int(round(len(y) * fraction))
    return (x[:n_val], y[:n_val]), (x[n_val:], y[n_val:])


def sram_hardware(cfg, model, test_set, out_dir, manifest):
    """Returns ``(noisy_model, eval_test_set, written_paths)``."""
    hw = cfg.hardware
    table = BerTable.from_file(cfg.resolve(hw["ber_table"])) if hw.get("ber_table") else BerTable.default()
    inj_seed = seeds.derive(cfg.seed, "injection")
    spec = hw["sram"]
    written = []
    if isinstance(spec, str):
        configs = read_hybrid_config(cfg.resolve(spec), table)
        manifest.data["inputs"].update(_hash_tree(cfg.resolve(spec)))
        eval_set = test_set
    elif "layers" in spec:
        configs = parse_hybrid_config("\n".join(spec["layers"]), table, spec.get("vdd"))
        eval_set = test_set
    else:
        s = spec["search"]
        vdd = float(s.get("vdd", 0.68))
        acfg = AttackConfig("FGSM", float(s.get("epsilon", 0.1)))
        val_set, eval_set = split_validation(test_set, float(s.get("val_fraction", VAL_FRACTION)))
        outcome, sweeps, log_rows = search(model, vdd, acfg, val_set, s.get("layers"), table, inj_seed,
                                           float(s.get("threshold", 5.0)))
        final = evaluate_outcome(model, outcome, acfg, eval_set, inj_seed)
        configs = outcome.configs
        written += write_search_outputs(out_dir, model, outcome, sweeps, log_rows, final, vdd, acfg, table)
    manifest.data["ber_table"] = {"source": table.source, "entries": table.entries()}
    noisy = NoisyModel(model, make_noise_hooks(configs, model, inj_seed))
    return noisy, eval_set, written


def write_search_outputs(out_dir, model, outcome, sweeps, log_rows, final, vdd, acfg, table):
    import csv
    paths = []
    p = os.path.join(out_dir, "search_log.csv")
    cols = ["stage", "layers", "config", "vdd", "clean_acc", "adv_acc", "baseline_adv_acc"]
    with open(p, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for r in log_rows:
            w.writerow(r)
    paths.append(p)
    p = os.path.join(out_dir, "hybrid_config.txt")
    with open(p, "w") as f:
        f.write(format_hybrid_config(outcome.configs, len(model.layers)))
    paths.append(p)
    p = os.path.join(out_dir, "search_outcome.json")
    summary = {
        "vdd": vdd, "epsilon": acfg.epsilon, "ber_table": table.source,
        "selected_layers": list(outcome.selected),
        "configs": {str(c.layer_id): c.ratio for c in outcome.configs},
        "validation": {"adv_acc": outcome.adversarial_accuracy, "clean_acc": outcome.clean_accuracy,
                       "baseline_adv_acc": outcome.baseline_adversarial_accuracy,
                       "baseline_clean_acc": outcome.baseline_clean_accuracy,
                       "clean_deviation": outcome.clean_deviation},
        "test": final,
        "sweeps": [{"layer": r.layer_id, "best": f"{r.n8}/{r.n6}", "adv_acc": r.adversarial_accuracy,
                    "delta": r.delta} for r in sweeps],
    }
    with open(p, "w") as f:
        json.dump(summary, f, indent=2)
    paths.append(p)
    return paths


def run(cfg, stop_after=None):
    """Execute the configured experiment; returns ``(manifest_dict, rows)``.

    ``stop_after`` ends the pipeline early after the named stage ("model" or
    "hardware"); the manifest still records what ran.
    """
    cfg.validate()
    out_dir = cfg.output_dir
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out_dir}: {e}") from e
    manifest = Manifest(cfg)
    rows = []
    written = []
    try:
        with manifest.stage("data"):
            ds = dataset_spec(cfg)
            if ds.get("path"):
                manifest.data["inputs"].update(_hash_tree(ds["path"]))
            train_set, test_set = load_dataset(ds)
        with manifest.stage("model"):
            model = prepare_model(cfg, train_set, manifest)
            if not cfg.model.get("checkpoint"):
                ck = os.path.join(out_dir, "checkpoint")
                save_checkpoint(model, ck, seed=cfg.seed)
                written += sorted(_hash_tree(ck))
        if stop_after == "model":
            return _finish(manifest, out_dir, written), rows

        hw_mode = cfg.hardware.get("mode", "none")
        with manifest.stage("hardware"):
            eval_set = test_set
            if hw_mode == "none":
                hardware = [model]
            elif hw_mode == "xbar":
                hardware = []
                for xc in cfg.xbar_configs():
                    xc = XbarConfig(**{**xc.to_dict(), "seed": seeds.derive(cfg.seed, "variation", xc.seed)})
                    hardware.append(map_model(model, xc))
            else:
                noisy, eval_set, paths = sram_hardware(cfg, model, test_set, out_dir, manifest)
                hardware = [noisy]
                written += paths
        if stop_after == "hardware":
            return _finish(manifest, out_dir, written), rows

        with manifest.stage("attack"):
            a = cfg.attack
            modes = list(a.get("modes", ["SW", "SH", "HH"]))
            for i, hw in enumerate(hardware):
                use = modes if i == 0 else [m for m in modes if m != "SW"]
                for kind in a.get("kinds", ["FGSM"]):
                    rows += attack_grid(model, hw, eval_set, kind, cfg.epsilons(kind), use,
                                        seeds.derive(cfg.seed, "attack"), int(a.get("pgd_steps", 7)),
                                        a.get("pgd_alpha"), bool(a.get("random_start", True)))
        with manifest.stage("report"):
            written += emit_report(rows, out_dir)
            if hw_mode == "xbar" and len(hardware) > 1:
                for kind in a.get("kinds", ["FGSM"]):
                    for mode in ("SH", "HH"):
                        p = write_size_table(rows, out_dir, kind, mode)
                        if p:
                            written.append(p)
    finally:
        if manifest.data["status"] == "partial":
            manifest.add_outputs([p for p in written if os.path.exists(p)])
            manifest.write(out_dir)
    return _finish(manifest, out_dir, written), rows


def _finish(manifest, out_dir, written):
    manifest.data["status"] = "complete"
    manifest.add_outputs(written)
    manifest.write(out_dir)
    return manifest.data
