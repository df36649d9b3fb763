"""Model definition, validation and grid discretization."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ModelValidationError
from .expr import parse_expression


@dataclass(frozen=True)
class ModelSpec:
    """An N-urn branching model.

    ``lam[k]`` is the rate kernel lambda_k(u, v) for a particle at ``u`` to die
    and leave ``k`` offspring at ``v`` (per-capita, scaled by 1/N between urns);
    ``psi[k]`` is the in-place rate psi_k(u); ``phi`` is the initial mean profile.
    """

    n_urns: int
    k_max: int
    lam: tuple
    psi: tuple
    phi: object
    horizon: float = 1.0
    epsilon0: float = 1.0
    name: str = ""

    def __post_init__(self):
        if int(self.n_urns) != self.n_urns or self.n_urns < 1:
            raise ConfigError(f"n_urns must be a positive integer, got {self.n_urns!r}")
        if int(self.k_max) != self.k_max or self.k_max < 0:
            raise ConfigError(f"k_max must be a nonnegative integer, got {self.k_max!r}")
        if len(self.lam) != self.k_max + 1 or len(self.psi) != self.k_max + 1:
            raise ConfigError("lam and psi must have k_max + 1 entries")
        if not self.horizon >= 0:
            raise ConfigError(f"horizon must be >= 0, got {self.horizon!r}")
        if not self.epsilon0 > 0:
            raise ConfigError(f"epsilon0 must be > 0, got {self.epsilon0!r}")
        for k, ex in enumerate(self.psi):
            if ex.uses_v():
                raise ConfigError(f"psi[{k}] must not depend on v")
        if self.phi.uses_v():
            raise ConfigError("phi must not depend on v")

    @classmethod
    def from_strings(cls, n_urns, lam=(), psi=(), phi="1", k_max=None, **kwargs):
        """Build a spec from expression strings; short lists are zero-padded."""
        lam = list(lam)
        psi = list(psi)
        if k_max is None:
            k_max = max(len(lam), len(psi), 1) - 1
        if len(lam) > k_max + 1 or len(psi) > k_max + 1:
            raise ConfigError(f"more kernel entries than k_max + 1 = {k_max + 1}")
        lam += ["0"] * (k_max + 1 - len(lam))
        psi += ["0"] * (k_max + 1 - len(psi))
        return cls(
            n_urns=int(n_urns),
            k_max=int(k_max),
            lam=tuple(parse_expression(s) for s in lam),
            psi=tuple(parse_expression(s, univariate=True) for s in psi),
            phi=parse_expression(phi, univariate=True),
            **kwargs,
        )

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls.from_strings(
                n_urns=doc["n_urns"],
                k_max=doc["k_max"],
                lam=doc.get("lambda", []),
                psi=doc.get("psi", []),
                phi=doc.get("phi", "1"),
                horizon=float(doc.get("horizon", 1.0)),
                epsilon0=float(doc.get("epsilon0", 1.0)),
                name=str(doc.get("name", "")),
            )
        except KeyError as exc:
            raise ConfigError(f"model file is missing field {exc.args[0]!r}") from None

    def to_dict(self):
        return {
            "name": self.name,
            "n_urns": self.n_urns,
            "k_max": self.k_max,
            "lambda": [e.source_text for e in self.lam],
            "psi": [e.source_text for e in self.psi],
            "phi": self.phi.source_text,
            "horizon": self.horizon,
            "epsilon0": self.epsilon0,
        }

    def with_urns(self, n_urns):
        return self.replace(n_urns=int(n_urns))

    def replace(self, **changes):
        doc = {
            "n_urns": self.n_urns, "k_max": self.k_max, "lam": self.lam, "psi": self.psi,
            "phi": self.phi, "horizon": self.horizon, "epsilon0": self.epsilon0,
            "name": self.name,
        }
        doc.update(changes)
        return ModelSpec(**doc)


def load_model(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from None
    return ModelSpec.from_dict(doc)


def model_a(n_urns=100, horizon=1.0):
    """Constant migration plus binary in-place splitting (supercritical)."""
    return ModelSpec.from_strings(n_urns, lam=["0", "1"], psi=["0", "0", "1"], phi="1",
                                  horizon=horizon, name="model A")


def model_b(n_urns=100, horizon=1.0):
    """Independent pure death at unit rate."""
    return ModelSpec.from_strings(n_urns, lam=[], psi=["1"], phi="1", k_max=0,
                                  horizon=horizon, name="model B")


def model_c(n_urns=100, horizon=1.0):
    """Ehrenfest-type migration with a nonuniform kernel; particle number conserved."""
    return ModelSpec.from_strings(n_urns, lam=["0", "1 + 0.5*cos(2*pi*(u-v))"], psi=[],
                                  phi="1", k_max=1, horizon=horizon, name="model C")


def model_nonuniform(n_urns=100, horizon=1.0):
    """Nonuniform migration with binary splitting."""
    return ModelSpec.from_strings(n_urns, lam=["0", "1 + 0.5*cos(2*pi*(u-v))"],
                                  psi=["0", "0", "1"], phi="1", horizon=horizon,
                                  name="model D")


@dataclass
class ValidationReport:
    passed: bool
    samples: int
    negatives: list = field(default_factory=list)
    nonfinite: list = field(default_factory=list)
    suprema: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "passed": self.passed,
            "samples": self.samples,
            "negatives": self.negatives,
            "nonfinite": self.nonfinite,
            "suprema": self.suprema,
        }

    def raise_if_failed(self):
        if self.passed:
            return self
        problems = [f"{d['kernel']} is negative ({d['value']:.3g}) at {tuple(d['point'])}"
                    for d in self.negatives]
        problems += [f"{d['kernel']} is not finite at {tuple(d['point'])}"
                     for d in self.nonfinite]
        raise ModelValidationError("; ".join(problems), report=self)


def _check_table(name, values, points, negatives, nonfinite):
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.unravel_index(np.argmax(bad), values.shape)
        nonfinite.append({"kernel": name, "point": [float(p[idx]) for p in points]})
        values = np.where(bad, 0.0, values)
    if (values < 0).any():
        idx = np.unravel_index(np.argmin(values), values.shape)
        negatives.append({"kernel": name, "point": [float(p[idx]) for p in points],
                          "value": float(values[idx])})


def validate_model(spec, samples=64):
    """Evaluate every kernel on a ``samples x samples`` lattice of (0, 1]^2.

    Passes iff every value is finite and nonnegative. The suprema of the
    k^(2+eps0)-weighted sums are reported for the standing moment assumption.
    Use :meth:`ValidationReport.raise_if_failed` to turn a failure into an error.
    """
    if samples < 1:
        raise ConfigError("samples must be positive")
    grid = np.arange(1, samples + 1) / samples
    uu, vv = np.meshgrid(grid, grid, indexing="ij")
    negatives, nonfinite = [], []
    power = 2.0 + spec.epsilon0
    lam_moment = np.zeros_like(uu)
    psi_moment = np.zeros_like(grid)
    for k, ex in enumerate(spec.lam):
        vals = ex(uu, vv)
        _check_table(f"lambda[{k}]", vals, (uu, vv), negatives, nonfinite)
        lam_moment = lam_moment + float(k) ** power * vals
    for k, ex in enumerate(spec.psi):
        vals = ex(grid)
        _check_table(f"psi[{k}]", vals, (grid,), negatives, nonfinite)
        psi_moment = psi_moment + float(k) ** power * vals
    _check_table("phi", spec.phi(grid), (grid,), negatives, nonfinite)
    passed = not negatives and not nonfinite
    suprema = {}
    if passed:
        suprema = {
            "sup_sum_k_pow_lambda": float(lam_moment.max()),
            "sup_sum_k_pow_psi": float(psi_moment.max()),
            "sup_phi": float(spec.phi(grid).max()),
            "exponent": power,
        }
    return ValidationReport(passed, samples, negatives, nonfinite, suprema)


class DiscretizedKernel:
    """Kernel tables on the torus grid u = a/M, a = 1..M.

    ``lambda_table[k, a, b]`` is lambda_k(a/M, b/M). The moment sums are
    ``b1 = sum (k-1) psi_k``, ``b2 = sum (k-1)^2 psi_k``, ``a = sum lambda_k``,
    ``c = sum k lambda_k`` and ``d = sum k^2 lambda_k``, each accumulated in
    increasing k.
    """

    def __init__(self, grid_size, lambda_table, psi_table, phi_table):
        self.grid_size = int(grid_size)
        self.lambda_table = lambda_table
        self.psi_table = psi_table
        self.phi_table = phi_table
        k_max = lambda_table.shape[0] - 1
        self.k_max = k_max
        M = self.grid_size
        a = np.zeros((M, M))
        c = np.zeros((M, M))
        d = np.zeros((M, M))
        b1 = np.zeros(M)
        b2 = np.zeros(M)
        for k in range(k_max + 1):
            a += lambda_table[k]
            c += k * lambda_table[k]
            d += (k * k) * lambda_table[k]
            b1 += (k - 1) * psi_table[k]
            b2 += ((k - 1) ** 2) * psi_table[k]
        self.a, self.c, self.d, self.b1, self.b2 = a, c, d, b1, b2
        for arr in (lambda_table, psi_table, phi_table, a, c, d, b1, b2):
            arr.flags.writeable = False

    @property
    def points(self):
        return np.arange(1, self.grid_size + 1) / self.grid_size

    def moment_sums(self):
        return {"a": self.a, "b1": self.b1, "b2": self.b2, "c": self.c, "d": self.d}


def discretize(spec, grid_size):
    """Tabulate every kernel of ``spec`` at the torus points a/M."""
    if int(grid_size) != grid_size or grid_size < 2:
        raise ConfigError(f"grid_size must be an integer >= 2, got {grid_size!r}")
    M = int(grid_size)
    pts = np.arange(1, M + 1) / M
    uu, vv = np.meshgrid(pts, pts, indexing="ij")
    lam = np.stack([ex(uu, vv) for ex in spec.lam])
    psi = np.stack([ex(pts) for ex in spec.psi])
    phi = spec.phi(pts)
    for name, table in (("lambda", lam), ("psi", psi), ("phi", phi)):
        if not np.isfinite(table).all():
            raise ModelValidationError(f"{name} is not finite on the grid M={M}")
    return DiscretizedKernel(M, lam, psi, phi)
