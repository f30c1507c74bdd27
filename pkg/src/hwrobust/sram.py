"""Hybrid 8T-6T SRAM activation memories under supply-voltage scaling.

Each 8-bit word keeps its ``n8`` most significant bits in robust 8T cells and
the remaining ``n6`` least significant bits in 6T cells that flip with a
voltage-dependent probability.
"""
import logging
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError, FormatError
from .nn.quant import QMAX, QuantParams, QuantTensor, dequantize_codes, quantize_codes

log = logging.getLogger(__name__)


class BerTable:
    """Piecewise-linear map from Vdd (volts) to per-bit flip probability."""

    def __init__(self, entries, source="<memory>"):
        pts = sorted((float(v), float(p)) for v, p in dict(entries).items())
        if not pts:
            raise ConfigError("BER table is empty")
        self.vdd = np.array([v for v, _ in pts])
        self.p = np.array([p for _, p in pts])
        self.source = source
        if np.any((self.p < 0) | (self.p > 1)):
            raise ConfigError(f"{source}: flip probabilities must lie in [0, 1]")
        if np.any(np.diff(self.p) > 0):
            raise ConfigError(f"{source}: BER must not increase with Vdd")

    def __call__(self, vdd):
        vdd = float(vdd)
        if not self.vdd[0] <= vdd <= self.vdd[-1]:
            raise ConfigError(f"Vdd {vdd} V outside BER table span [{self.vdd[0]}, {self.vdd[-1]}]")
        return float(np.interp(vdd, self.vdd, self.p))

    def __contains__(self, vdd):
        return bool(np.any(np.isclose(self.vdd, float(vdd), rtol=0, atol=1e-9)))

    def entries(self):
        return dict(zip(self.vdd.tolist(), self.p.tolist()))

    @classmethod
    def from_text(cls, text, source="<text>"):
        entries = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(f"{source}:{lineno}: expected 'vdd p', got {line!r}")
            try:
                entries[float(parts[0])] = float(parts[1])
            except ValueError:
                raise FormatError(f"{source}:{lineno}: non-numeric entry {line!r}") from None
        return cls(entries, source)

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            return cls.from_text(f.read(), str(path))

    @classmethod
    def default(cls):
        text = resources.files("hwrobust.configs").joinpath("ber_default.txt").read_text()
        return cls.from_text(text, "ber_default.txt (synthetic)")

    def to_text(self):
        return "".join(f"{v:g} {p:g}\n" for v, p in zip(self.vdd, self.p))


def ber(vdd, table=None):
    return (table or BerTable.default())(vdd)


@dataclass
class HybridMemConfig:
    layer_id: int
    n8: int
    n6: int
    vdd: float
    ber_table: BerTable = field(default_factory=BerTable.default, repr=False)
    target: str = "activations"

    def __post_init__(self):
        if self.n8 < 0 or self.n6 < 0 or self.n8 + self.n6 != 8:
            raise ConfigError(f"need n8 + n6 = 8, got {self.n8}/{self.n6}")
        if self.target not in ("activations", "weights"):
            raise ConfigError(f"unknown injection target {self.target!r}")
        if self.n6 and self.vdd not in self.ber_table:
            raise ConfigError(f"Vdd {self.vdd} V is not a BER table entry")

    @property
    def p(self):
        return self.ber_table(self.vdd) if self.n6 else 0.0

    @property
    def ratio(self):
        return "H" if self.n6 == 0 else f"{self.n8}/{self.n6}"


def _bernoulli_hits(length, p, rng):
    """Indices of successes in ``length`` independent Bernoulli(p) trials.

    Successes are generated by their geometric gaps, which costs O(length * p)
    instead of one uniform draw per trial.
    """
    if p <= 0 or length == 0:
        return np.zeros(0, dtype=np.int64)
    if p >= 1:
        return np.arange(length)
    chunks, pos = [], -1
    while pos < length:
        expected = (length - pos) * p
        n = int(expected + 6.0 * np.sqrt(expected) + 16)
        # a gap past the end already means "no more hits"; capping keeps cumsum from overflowing for tiny p
        hits = pos + np.cumsum(np.minimum(rng.geometric(p, size=n), length + 1))
        chunks.append(hits)
        pos = hits[-1]
    hits = np.concatenate(chunks)
    return hits[hits < length]


def flip_mask(shape, n6, p, rng):
    """XOR mask with each of the ``n6`` low bits set independently with probability ``p``."""
    mask = np.zeros(int(np.prod(shape)), dtype=np.uint8)
    if n6 and p:
        hits = _bernoulli_hits(mask.size * n6, p, rng)
        elem, bit = np.divmod(hits, n6)
        for b in range(n6):
            mask[elem[bit == b]] |= np.uint8(1 << b)
    return mask.reshape(shape)


def inject_bit_errors(q, cfg, rng):
    """Return a new QuantTensor with 6T-bit flips applied; ``q`` is left untouched."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    codes = q.codes ^ flip_mask(q.codes.shape, cfg.n6, cfg.p, rng)
    return QuantTensor(codes, q.scale, q.zero_point)


@dataclass(frozen=True)
class NoiseProfile:
    mu: float
    stderr: float
    n8: int
    n6: int
    vdd: float
    p: float
    samples: int


def estimate_mu(cfg, samples=200_000, seed=0, scale=1.0 / QMAX):
    """Monte Carlo mean |perturbation| of a dequantized word over uniform random codes."""
    if samples < 100_000:
        raise ConfigError("estimate_mu needs at least 1e5 samples")
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, QMAX + 1, size=samples, dtype=np.uint8)
    q = QuantTensor(codes, scale, 0)
    noisy = inject_bit_errors(q, cfg, rng)
    diff = np.abs(noisy.codes.astype(np.int64) - codes.astype(np.int64)) * scale
    return NoiseProfile(float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(samples)),
                        cfg.n8, cfg.n6, cfg.vdd, cfg.p, samples)


def substream(seed, layer_id, batch_index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(layer_id), int(batch_index)]))


def make_noise_hook(cfg, model, seed=0):
    """Activation hook: quantize -> inject -> dequantize on ``cfg.layer_id``'s output.

    Returns ``{layer_id: hook}`` ready to merge into ``forward(noise_hooks=...)``.
    """
    k = cfg.layer_id
    if not 0 <= k < len(model.layers):
        raise ConfigError(f"hybrid memory config references missing layer {k}")
    if cfg.target != "activations":
        raise ConfigError("make_noise_hook handles activation memories; use inject_weights for weights")
    qp = model.act_qparams[k]
    if qp is None:
        raise ConfigError(f"layer {k} has no calibrated activation range")

    def hook(a, batch_index=0):
        if cfg.n6 == 0 or cfg.p == 0:
            return a
        q = QuantTensor(quantize_codes(a, qp), qp.scale, qp.zero_point)
        noisy = inject_bit_errors(q, cfg, substream(seed, k, batch_index))
        return dequantize_codes(noisy.codes, qp)

    hook.config = cfg
    return {k: hook}


def make_noise_hooks(configs, model, seed=0):
    hooks = {}
    for cfg in configs:
        if cfg.n6 == 0:
            continue
        hooks.update(make_noise_hook(cfg, model, seed))
    return hooks


def inject_weights(model, configs, seed=0):
    """Copy of ``model`` whose weight memories of the configured layers suffered bit errors."""
    from .nn.quant import calibrate
    noisy = model.copy()
    for cfg in configs:
        layer = noisy.layers[cfg.layer_id]
        if not layer.has_params:
            raise ConfigError(f"layer {cfg.layer_id} ({layer.kind}) has no weights")
        w = layer.weight.astype(np.float64)
        qp = calibrate(w)
        q = QuantTensor(quantize_codes(w, qp), qp.scale, qp.zero_point)
        # weight memories get their own spawn key so they never share a stream with activations
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(cfg.layer_id)], spawn_key=(1,)))
        q = inject_bit_errors(q, cfg, rng)
        layer.weight = dequantize_codes(q.codes, QuantParams(q.scale, q.zero_point))
    return noisy


def parse_hybrid_config(text, ber_table=None, default_vdd=None, source="<text>"):
    """Parse lines ``layer n8/n6 [vdd]`` or ``layer H [vdd]``; ``H`` means all-8T."""
    table = ber_table or BerTable.default()
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise FormatError(f"{source}:{lineno}: expected 'layer n8/n6 vdd', got {line!r}")
        try:
            layer = int(parts[0])
            vdd = float(parts[2]) if len(parts) == 3 else default_vdd
            if parts[1].upper() == "H":
                n8, n6 = 8, 0
            else:
                n8, n6 = (int(t) for t in parts[1].split("/"))
        except ValueError:
            raise FormatError(f"{source}:{lineno}: cannot parse {line!r}") from None
        if vdd is None:
            if n6:
                raise FormatError(f"{source}:{lineno}: missing Vdd")
            vdd = float(table.vdd[-1])
        out.append(HybridMemConfig(layer, n8, n6, vdd, table))
    return out


def read_hybrid_config(path, ber_table=None):
    with open(path) as f:
        return parse_hybrid_config(f.read(), ber_table, source=str(path))


def format_hybrid_config(configs, n_layers=None):
    by_layer = {c.layer_id: c for c in configs}
    layers = range(n_layers) if n_layers is not None else sorted(by_layer)
    vdd = next(iter(by_layer.values())).vdd if by_layer else None
    lines = ["# layer n8/n6 vdd  (H = homogeneous 8T, no bit errors)"]
    for k in layers:
        c = by_layer.get(k)
        if c is None or c.n6 == 0:
            lines.append(f"{k} H" + (f" {vdd:g}" if vdd is not None else ""))
        else:
            lines.append(f"{k} {c.n8}/{c.n6} {c.vdd:g}")
    return "\n".join(lines) + "\n"
