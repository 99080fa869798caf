"""Random resistor arrays and bit-serial analogue vector-matrix multiplication.

Conductances are in microsiemens throughout. A cell that breaks down draws its
conductance from a normal distribution truncated below at the insulating
conductance ``g_off``; every other cell stays at ``g_off``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import special

from .exceptions import ConfigurationError, NumericalError, ShapeError
from .validation import check_in_range, check_matrix, check_positive_int

ARRAY_SCHEMA = "esgnn.crossbar/1"


@dataclass(frozen=True)
class DeviceModel:
    """Stochastic breakdown model of an as-deposited resistive memory array.

    The defaults keep ``rho(0.006/uS * G)`` of a 50x50 array below one, which
    the graph-classification scale factors need.
    """

    p_break: float = 0.5
    g_on_mean: float = 5.0
    g_on_std: float = 1.0
    g_off: float = 0.1
    read_noise_std: float = 0.01

    def __post_init__(self):
        check_in_range(self.p_break, "p_break", 0.0, 1.0)
        check_in_range(self.g_on_std, "g_on_std", 0.0)
        check_in_range(self.g_off, "g_off", 0.0)
        check_in_range(self.g_on_mean, "g_on_mean", 0.0)
        check_in_range(self.read_noise_std, "read_noise_std", 0.0)
        if not self.g_on_mean - 3.0 * self.g_on_std > self.g_off:
            raise ConfigurationError(
                "no conductance gap: g_on_mean - 3*g_on_std must exceed g_off "
                f"({self.g_on_mean} - 3*{self.g_on_std} <= {self.g_off})"
            )

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class QuantConfig:
    """Input digitisation for bit-serial reads.

    Inputs are clamped to ``[0, x_max]`` and rounded (ties up) to one of
    ``2**m_bits`` codes; code ``2**m_bits - 1`` represents ``x_max``.
    """

    m_bits: int = 4
    v_read: float = 0.3
    x_max: float = 1.0

    def __post_init__(self):
        check_positive_int(self.m_bits, "m_bits")
        check_in_range(self.v_read, "v_read", 0.0, low_open=True)
        check_in_range(self.x_max, "x_max", 0.0, low_open=True)

    @property
    def levels(self):
        return (1 << self.m_bits) - 1

    @property
    def step(self):
        return self.x_max / self.levels

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class CrossbarArray:
    """An immutable conductance matrix (uS) plus the model and seed that produced it."""

    conductance: np.ndarray
    device: DeviceModel | None = None
    seed: int | None = None

    def __post_init__(self):
        g = np.array(self.conductance, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
            raise ShapeError(f"conductance must be a non-empty 2-D matrix, got shape {g.shape}")
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise ConfigurationError("conductances must be finite and non-negative")
        g.setflags(write=False)
        object.__setattr__(self, "conductance", g)

    @property
    def rows(self):
        return self.conductance.shape[0]

    @property
    def cols(self):
        return self.conductance.shape[1]

    @property
    def shape(self):
        return self.conductance.shape

    def on_fraction(self):
        """Fraction of cells strictly above the insulating level."""
        g_off = self.device.g_off if self.device is not None else self.conductance.min()
        return float(np.mean(self.conductance > g_off))

    def __eq__(self, other):
        if not isinstance(other, CrossbarArray):
            return NotImplemented
        return (
            self.device == other.device
            and self.seed == other.seed
            and np.array_equal(self.conductance, other.conductance)
        )

    __hash__ = None


@dataclass
class VmmStats:
    """Instrumentation tallies accumulated by crossbar reads.

    ``macs`` counts logical multiply-accumulates (rows*cols per VMM), ``reads``
    counts bit-plane reads and ``clamped`` counts inputs outside ``[0, x_max]``.
    """

    vmms: int = 0
    macs: int = 0
    reads: int = 0
    clamped: int = 0

    def record(self, array, n_vmm, q):
        self.vmms += int(n_vmm)
        self.macs += int(n_vmm) * array.rows * array.cols
        self.reads += int(n_vmm) * q.m_bits

    def merge(self, other):
        self.vmms += other.vmms
        self.macs += other.macs
        self.reads += other.reads
        self.clamped += other.clamped
        return self

    def to_dict(self):
        return asdict(self)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def form_random_array(rows, cols, model=None, seed=0):
    """Emulate forming a ``rows x cols`` array by biasing every cell at a fixed voltage.

    Each cell breaks down independently with probability ``model.p_break``.
    The draw order is fixed (breakdown mask first, then conductances for every
    cell) so a given ``(rows, cols, model, seed)`` always yields the same array.
    """
    rows = check_positive_int(rows, "rows")
    cols = check_positive_int(cols, "cols")
    model = DeviceModel() if model is None else model
    if not isinstance(model, DeviceModel):
        raise ConfigurationError(f"model must be a DeviceModel, got {type(model).__name__}")
    rng = _rng(seed)
    broken = rng.random((rows, cols)) < model.p_break
    g_on = _truncated_normal(rng, (rows, cols), model.g_on_mean, model.g_on_std, model.g_off)
    g = np.where(broken, g_on, model.g_off)
    return CrossbarArray(g, device=model, seed=None if isinstance(seed, np.random.Generator) else seed)


def _truncated_normal(rng, shape, mean, std, lower):
    u = rng.random(shape)
    if std == 0:
        return np.full(shape, float(mean))
    lo = special.ndtr((lower - mean) / std)
    # inverse-CDF sampling restricted to the mass above `lower`
    z = special.ndtri(lo + u * (1.0 - lo))
    return np.maximum(mean + std * z, lower)


def quantize(x, q, stats=None):
    """Integer codes for ``x`` under ``q``; out-of-range entries are clamped and counted."""
    x = np.asarray(x, dtype=np.float64)
    outside = (x < 0) | (x > q.x_max)
    if stats is not None:
        stats.clamped += int(np.count_nonzero(outside))
    xc = np.clip(x, 0.0, q.x_max)
    return np.floor(xc / q.x_max * q.levels + 0.5).astype(np.int64)


def dequantize(codes, q):
    return np.asarray(codes, dtype=np.float64) * q.step


def analog_vmm(array, x, q=None, noise_seed=None, stats=None):
    """Bit-serial VMM of one input vector against ``array``, one read per bit plane.

    This is the literal per-read model: every current term ``G[i, j] * v_read``
    of every plane gets its own multiplicative Gaussian perturbation when
    ``noise_seed`` is not None. Returns the rescaled conductance-weighted sum
    (uS times input units); with noise off and ``x`` on the code grid it equals
    ``G @ x`` up to round-off.
    """
    q = QuantConfig() if q is None else q
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != array.cols:
        raise ShapeError(f"x must have shape ({array.cols},), got {x.shape}")
    codes = quantize(x, q, stats)
    g = array.conductance
    sigma = _noise_std(array) if noise_seed is not None else 0.0
    rng = _rng(noise_seed) if sigma > 0 else None
    acc = np.zeros(array.rows)
    for k in range(q.m_bits):
        bits = ((codes >> k) & 1).astype(np.float64)
        terms = g * (bits * q.v_read)
        if rng is not None:
            terms = terms * (1.0 + sigma * rng.standard_normal(terms.shape))
        acc += (1 << k) * (terms.sum(axis=1) / q.v_read)
    if stats is not None:
        stats.record(array, 1, q)
    return acc * q.step


def analog_vmm_batch(array, X, q=None, rng=None, stats=None):
    """Row-wise :func:`analog_vmm` for an ``(N, cols)`` batch, returning ``(N, rows)``.

    Noise-free outputs are computed exactly from the quantized codes. When
    ``rng`` is given, the per-term multiplicative noise of all planes is drawn
    as one Gaussian per output entry with the same variance as the sum of the
    independent per-term perturbations, which is exact in distribution.
    """
    mean, var = vmm_moments(array, X, q, stats, with_variance=rng is not None)
    if rng is None or var is None:
        return mean
    return mean + np.sqrt(var) * rng.standard_normal(mean.shape)


def vmm_moments(array, X, q=None, stats=None, with_variance=True):
    """Mean and read-noise variance of the bit-serial VMM outputs for each row of ``X``.

    Returns ``(mean, var)``; ``var`` is None when noise is off or not requested.
    """
    q = QuantConfig() if q is None else q
    X = check_matrix(X, "X", n_cols=array.cols)
    codes = quantize(X, q, stats)
    g = array.conductance
    mean = (codes.astype(np.float64) @ g.T) * q.step
    if stats is not None:
        stats.record(array, X.shape[0], q)
    sigma = _noise_std(array) if with_variance else 0.0
    if sigma == 0.0:
        return mean, None
    g2 = g * g
    var = np.zeros_like(mean)
    for k in range(q.m_bits):
        bits = ((codes >> k) & 1).astype(np.float64)
        var += float(4**k) * (bits @ g2.T)
    var *= (sigma * q.step) ** 2
    return mean, var


def _noise_std(array):
    if array.device is None:
        return 0.0
    return float(array.device.read_noise_std)


def quantization_error_bound(array, q):
    """Worst-case ``|analog_vmm - G @ x|`` over in-range inputs with noise off.

    Rounding to the nearest code moves each input by at most half a step, so
    the bound is ``max_row_sum(G) * step / 2``.
    """
    return float(array.conductance.sum(axis=1).max()) * q.step / 2.0


def spectral_radius(array, scale=1.0, tol=1e-8, max_iter=100_000):
    """Perron root of ``scale * G`` by shifted power iteration.

    ``scale * G`` is non-negative, so its spectral radius is a real, dominant
    eigenvalue. Iterating on ``M + s*I`` with ``s > 0`` removes other eigenvalues
    of equal modulus (periodic matrices) without changing the Perron vector.
    """
    g = array.conductance if isinstance(array, CrossbarArray) else check_matrix(array, "G")
    if g.shape[0] != g.shape[1]:
        raise ShapeError(f"spectral radius needs a square array, got {g.shape}")
    m = float(scale) * g
    if np.any(m < 0):
        raise ConfigurationError("spectral_radius expects a non-negative scale")
    row_max = float(m.sum(axis=1).max())
    if row_max == 0.0:
        return 0.0
    shift = 0.5 * row_max
    v = np.full(m.shape[0], 1.0 / np.sqrt(m.shape[0]))
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = m @ v + shift * v
        norm = float(np.linalg.norm(w))
        new = norm - shift
        v = w / norm
        # successive estimates must agree well below tol for the estimate itself to reach tol
        if it > 1 and abs(new - lam) <= 1e-2 * tol * abs(new):
            return max(new, 0.0)
        lam = new
    raise NumericalError(
        f"power iteration did not converge in {max_iter} iterations (last estimate {lam:.12g})",
        iterate=v,
    )


def save_array(array, path):
    """Write ``path`` (CSV, row-major, 9 significant digits) and ``path.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, array.conductance, fmt="%.9g", delimiter=",")
    meta = {
        "schema": ARRAY_SCHEMA,
        "rows": array.rows,
        "cols": array.cols,
        "units": "uS",
        "seed": array.seed,
        "device": array.device.to_dict() if array.device is not None else None,
    }
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, sidecar


def load_array(path):
    path = Path(path)
    g = np.loadtxt(path, delimiter=",", ndmin=2)
    sidecar = path.with_suffix(path.suffix + ".json")
    device = seed = None
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        if meta.get("schema") != ARRAY_SCHEMA:
            raise ConfigurationError(f"{sidecar}: unsupported schema {meta.get('schema')!r}")
        if (meta["rows"], meta["cols"]) != g.shape:
            raise ShapeError(f"{path}: sidecar declares {meta['rows']}x{meta['cols']}, file has {g.shape}")
        device = DeviceModel(**meta["device"]) if meta.get("device") else None
        seed = meta.get("seed")
    return CrossbarArray(g, device=device, seed=seed)
