"""Robustness report files: CSV, JSON, plot-data series and rendered figures."""
import csv
import json
import os
from collections import defaultdict

import numpy as np

from .attacks import ReportRow, parse_epsilon
from .errors import FormatError

HEADER = ["model_id", "attack", "mode", "epsilon", "clean_acc", "adv_acc", "adv_loss"]


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {path}: {e}") from e


def write_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(HEADER)
        for r in rows:
            w.writerow([r.model_id, r.attack, r.mode, r.epsilon, repr(r.clean_acc), repr(r.adv_acc),
                        repr(r.adv_loss)])


def read_csv(path):
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd, None)
        if header != HEADER:
            raise FormatError(f"{path}: unexpected header {header}")
        return [ReportRow(m, a, mo, e, float(ca), float(aa), float(al)) for m, a, mo, e, ca, aa, al in rd]


def rows_to_json(rows):
    return json.dumps({"columns": HEADER, "rows": [r.to_dict() for r in rows]}, indent=2)


def rows_from_json(text):
    data = json.loads(text)
    return [ReportRow(**d) for d in data["rows"]]


def write_json(rows, path):
    with open(path, "w") as f:
        f.write(rows_to_json(rows))


def read_json(path):
    with open(path) as f:
        return rows_from_json(f.read())


def series(rows):
    """``{(model_id, attack): {mode: [(eps, AL), ...]}}`` sorted by epsilon."""
    out = defaultdict(lambda: defaultdict(list))
    for r in rows:
        out[(r.model_id, r.attack)][r.mode].append((r.epsilon, r.adv_loss))
    # SW rows are scored on the software model; attach them to each hardware
    # group of the same attack so one figure compares all three modes
    sw_only = {key: g["SW"] for key, g in out.items() if set(g) == {"SW"}}
    used = set()
    for (model_id, attack), groups in list(out.items()):
        refs = [key for key in sw_only if key[1] == attack]
        if "SW" not in groups and len(refs) == 1:
            groups["SW"] = list(sw_only[refs[0]])
            used.add(refs[0])
    for key in used:
        del out[key]
    for groups in out.values():
        for mode in groups:
            groups[mode].sort(key=lambda t: float(parse_epsilon(t[0])))
    return out


def _slug(text):
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in text)


def write_plot_data(rows, out_dir):
    """One CSV per (model, attack): epsilon column plus one AL column per mode."""
    paths = []
    for (model_id, attack), groups in sorted(series(rows).items()):
        modes = [m for m in ("SW", "SH", "HH") if m in groups] + sorted(set(groups) - {"SW", "SH", "HH"})
        eps = sorted({e for m in modes for e, _ in groups[m]}, key=lambda e: float(parse_epsilon(e)))
        table = {m: dict(groups[m]) for m in modes}
        path = os.path.join(out_dir, f"al_{_slug(model_id)}_{attack}.csv")
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epsilon"] + [f"AL_{m}" for m in modes])
            for e in eps:
                w.writerow([e] + [repr(table[m][e]) if e in table[m] else "" for m in modes])
        paths.append(path)
    return paths


def write_size_table(rows, out_dir, attack, mode):
    """Crossbar-size x epsilon AL table (one row per mapped model)."""
    sel = [r for r in rows if r.attack == attack and r.mode == mode]
    if not sel:
        return None
    eps = sorted({r.epsilon for r in sel}, key=lambda e: float(parse_epsilon(e)))
    models = sorted({r.model_id for r in sel})
    path = os.path.join(out_dir, f"al_by_size_{attack}_{mode}.csv")
    lookup = {(r.model_id, r.epsilon): r.adv_loss for r in sel}
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model_id"] + eps)
        for m in models:
            w.writerow([m] + [f"{lookup[(m, e)]:.2f}" if (m, e) in lookup else "" for e in eps])
    return path


def render_figures(rows, out_dir):
    """AL-versus-epsilon line plot per (model, attack), saved as PNG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    styles = {"SW": ("k", "o"), "SH": ("tab:blue", "s"), "HH": ("tab:red", "^")}
    paths = []
    for (model_id, attack), groups in sorted(series(rows).items()):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for mode, pts in groups.items():
            color, marker = styles.get(mode, (None, "x"))
            xs = [float(parse_epsilon(e)) for e, _ in pts]
            ax.plot(xs, [al for _, al in pts], color=color, marker=marker, label=f"Attack-{mode}")
        ax.set_xlabel(r"$\epsilon$")
        ax.set_ylabel("Adversarial loss (%)")
        ax.set_title(f"{model_id} ({attack})", fontsize=9)
        ax.legend(frameon=False, fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, f"al_{_slug(model_id)}_{attack}.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def emit_report(rows, out_dir, figures=True, name="report"):
    """Write ``report.csv``/``report.json`` plus plot data (and PNGs). Returns written paths."""
    _ensure_dir(out_dir)
    written = []
    csv_path = os.path.join(out_dir, f"{name}.csv")
    json_path = os.path.join(out_dir, f"{name}.json")
    write_csv(rows, csv_path)
    write_json(rows, json_path)
    written += [csv_path, json_path]
    written += write_plot_data(rows, out_dir)
    if figures and rows:
        written += render_figures(rows, out_dir)
    return written


def al_check(rows):
    """Largest |AL - (CA - AA)| over the rows (0.0 when the identity holds exactly)."""
    if not rows:
        return 0.0
    return float(np.max([abs(r.adv_loss - (r.clean_acc - r.adv_acc)) for r in rows]))
