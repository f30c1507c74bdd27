"""Mapping of linear layers onto memristive crossbar tiles.

Signed weights use a differential pair of tiles (positive and negative
conductance arrays) whose column currents are subtracted digitally. Each
tile's effective operator is extracted once from the resistive network and
reused for every inference, so the hardware layer is an exact linear map.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError
from ..nn.layers import DenseKernel
from .circuit import ResistiveNetwork

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class XbarConfig:
    size: int = 32
    r_min: float = 20e3
    r_max: float = 200e3
    r_driver: float = 1e3
    r_wire_row: float = 5.0
    r_wire_col: float = 10.0
    r_sense: float = 1e3
    sigma_over_mu: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if int(self.size) < 1:
            raise ConfigError(f"crossbar size must be >= 1, got {self.size}")
        for name in ("r_min", "r_max", "r_driver", "r_wire_row", "r_wire_col", "r_sense"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be a finite non-negative resistance, got {v}")
        if self.r_min <= 0 or not self.r_max > self.r_min:
            raise ConfigError(f"need 0 < r_min < r_max, got {self.r_min}, {self.r_max}")
        if self.sigma_over_mu < 0:
            raise ConfigError("sigma_over_mu must be >= 0")

    @property
    def g_min(self):
        return 1.0 / self.r_max

    @property
    def g_max(self):
        return 1.0 / self.r_min

    def ideal(self):
        """Same devices with every parasitic and the variation removed."""
        return XbarConfig(self.size, self.r_min, self.r_max, 0.0, 0.0, 0.0, 0.0, 0.0, self.seed)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown crossbar config keys: {sorted(extra)}")
        kw = {k: (int(v) if k in ("size", "seed") else float(v)) for k, v in d.items()}
        return cls(**kw)

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            try:
                return cls.from_dict(json.load(f))
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: {e}") from None


def weights_to_conductances(w_tile, cfg, w_max):
    """Differential linear mapping of a weight block onto (G_plus, G_minus)."""
    w = np.asarray(w_tile, dtype=np.float64)
    g_min, g_max = cfg.g_min, cfg.g_max
    if w_max == 0:
        return np.full(w.shape, g_min), np.full(w.shape, g_min)
    if np.abs(w).max() > w_max * (1 + 1e-12):
        raise ConfigError("weight magnitude exceeds the mapping range w_max")
    span = g_max - g_min
    g_plus = g_min + span * np.maximum(w, 0.0) / w_max
    g_minus = g_min + span * np.maximum(-w, 0.0) / w_max
    return g_plus, g_minus


def conductances_to_weights(g_plus, g_minus, cfg, w_max):
    return (np.asarray(g_plus) - np.asarray(g_minus)) * w_max / (cfg.g_max - cfg.g_min)


def apply_variation(g, sigma_over_mu, seed, g_min=None, g_max=None):
    """Multiplicative Gaussian device variation, clamped to [0.5 g_min, 1.5 g_max]."""
    g = np.asarray(g, dtype=np.float64)
    if sigma_over_mu == 0:
        return g.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = g * (1.0 + rng.normal(0.0, sigma_over_mu, size=g.shape))
    lo = 0.5 * (g_min if g_min is not None else g.min())
    hi = 1.5 * (g_max if g_max is not None else g.max())
    return np.clip(out, lo, hi)


def _conductance(r):
    return np.inf if r == 0 else 1.0 / r


def crossbar_network(g, cfg, label="tile"):
    """Build the parasitic network of an N x N tile.

    Row ``i`` is driven from source ``i`` through ``r_driver`` and then a chain
    of ``r_wire_row`` segments (one before each crosspoint). Column ``j`` runs
    down through ``r_wire_col`` segments and leaves through one more segment
    plus ``r_sense`` into its own ground terminal.
    """
    g = np.asarray(g, dtype=np.float64)
    n = g.shape[0]
    if g.shape != (n, n):
        raise ConfigError(f"tile must be square, got {g.shape}")
    nn = n * n
    idx = np.arange(nn).reshape(n, n)
    row_node, col_node = idx, nn + idx
    src = 2 * nn + np.arange(n)
    gnd = 2 * nn + n + np.arange(n)
    a, b, c = [], [], []

    def add(u, v, cond):
        u, v = np.ravel(u), np.ravel(v)
        a.append(u)
        b.append(v)
        c.append(np.broadcast_to(np.ravel(np.asarray(cond, dtype=np.float64)), u.shape))

    add(row_node, col_node, g)
    add(src, row_node[:, 0], _conductance(cfg.r_driver + cfg.r_wire_row))
    add(row_node[:, :-1], row_node[:, 1:], _conductance(cfg.r_wire_row))
    add(col_node[:-1, :], col_node[1:, :], _conductance(cfg.r_wire_col))
    add(col_node[-1, :], gnd, _conductance(cfg.r_wire_col + cfg.r_sense))
    net = ResistiveNetwork(2 * nn + 2 * n, np.concatenate(a), np.concatenate(b), np.concatenate(c),
                           np.concatenate([src, gnd]), label=label)
    return net, src, gnd


def solve_nonideal(g_varied, cfg, label="tile"):
    """Effective operator ``G'`` with ``I_j = sum_i G'[i, j] V_i``.

    Column ``k`` of the superposition is obtained by driving input ``k`` at 1 V
    with every other source at 0 V; all ``N`` solves share one factorization.
    """
    g = np.asarray(g_varied, dtype=np.float64)
    n = g.shape[0]
    net, src, gnd = crossbar_network(g, cfg, label)
    drive = np.zeros((2 * n, n))
    drive[:n, :n] = np.eye(n)
    v = net.solve(drive)
    out = np.empty((n, n))
    for j in range(n):
        out[:, j] = net.current_into(gnd[j], v)
    return out


@dataclass
class ConductanceTile:
    g_ideal: np.ndarray
    g_varied: np.ndarray
    g_nonideal: np.ndarray


class XbarLinear(DenseKernel):
    """Tiled crossbar realisation of an (M, K) weight matrix.

    Tile ``(p, q)`` holds outputs ``p*N:(p+1)*N`` and inputs ``q*N:(q+1)*N``;
    crossbar rows carry inputs and columns carry outputs. Unused cells sit at
    ``G_min`` and unused rows are driven at 0 V.
    """

    kind = "xbar"

    def __init__(self, weight, cfg, seed_key=(0,), label="layer"):
        super().__init__(weight)
        self.cfg = cfg
        w = self.weight.astype(np.float64)
        m, k = w.shape
        n = cfg.size
        self.w_max = float(np.abs(w).max())
        self.grid = (-(-m // n), -(-k // n))
        scale = self.w_max / (cfg.g_max - cfg.g_min)
        self.column_scale = np.full(m, scale)
        self.tiles = {}
        eff = np.zeros((m, k))
        for p in range(self.grid[0]):
            for q in range(self.grid[1]):
                blk = w[p * n:(p + 1) * n, q * n:(q + 1) * n]
                bm, bk = blk.shape
                padded = np.zeros((n, n))
                padded[:bk, :bm] = blk.T
                g_pair = weights_to_conductances(padded, cfg, self.w_max)
                pair = []
                for pol, g_ideal in enumerate(g_pair):
                    ss = np.random.SeedSequence([cfg.seed, *seed_key, p, q, pol])
                    g_var = apply_variation(g_ideal, cfg.sigma_over_mu, np.random.default_rng(ss),
                                            cfg.g_min, cfg.g_max)
                    g_non = solve_nonideal(g_var, cfg, label=f"{label} tile ({p},{q}) {'+-'[pol]}")
                    pair.append(ConductanceTile(g_ideal, g_var, g_non))
                self.tiles[(p, q)] = tuple(pair)
                diff = pair[0].g_nonideal - pair[1].g_nonideal
                eff[p * n:p * n + bm, q * n:q * n + bk] = diff[:bk, :bm].T * scale
        self._effective = eff

    def effective_matrix(self):
        return self._effective


def map_model(model, cfg):
    """Return a hardware copy of ``model`` with every fc/conv kernel on crossbars."""
    hw = model.copy()
    for k in hw.weighted_layers():
        layer = hw.layers[k]
        layer.kernel = XbarLinear(layer.kernel.weight, cfg, seed_key=(k,), label=f"layer {k}")
    hw.mode = "hardware"
    hw.model_id = f"{model.model_id}-xbar{cfg.size}"
    return hw


def nonideality(g_nonideal, g_varied):
    """Relative Frobenius deviation of the effective operator from the programmed one."""
    return float(np.linalg.norm(g_nonideal - g_varied) / np.linalg.norm(g_varied))


def dump_mapped(hw_model, out_dir):
    """Write every tile's G' as little-endian f64 plus a JSON manifest."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"model_id": hw_model.model_id, "layers": []}
    for k in hw_model.weighted_layers():
        kern = hw_model.layers[k].kernel
        if not isinstance(kern, XbarLinear):
            continue
        entry = {"layer": k, "weight_shape": list(kern.shape), "grid": list(kern.grid),
                 "w_max": kern.w_max, "config": kern.cfg.to_dict(), "tiles": []}
        for (p, q), pair in sorted(kern.tiles.items()):
            for pol, tile in zip("pm", pair):
                name = f"layer{k}_tile{p}_{q}_{pol}.f64"
                tile.g_nonideal.astype("<f8").tofile(os.path.join(out_dir, name))
                entry["tiles"].append({"row": p, "col": q, "polarity": "+" if pol == "p" else "-",
                                       "file": name, "shape": list(tile.g_nonideal.shape)})
        manifest["layers"].append(entry)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest
