"""Signal synthesis: analytic input construction, exact delay, noisy sampling.

The input has a finite Laguerre spectrum by construction, so its time-domain
values, its delayed values and its derivative are all available in closed
form; no simulation grid is involved.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import BasisConfig, eval_basis_derivative_matrix, eval_basis_matrix
from .delay_ops import Spectrum

# |u(0)| above this (relative to the coefficient norm) triggers the
# discontinuity warning: a jump at t = tau in the delayed output produces a
# slowly decaying spectrum tail and inflates truncation bias.
CONTINUITY_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class InputDesign:
    """Designed excitation: spectrum u, energy bound, and sampling context."""

    p: float
    u: Spectrum
    energy_bound: float
    horizon: float
    delta: float
    tau_guess: float

    def __post_init__(self):
        if self.u.p != self.p:
            raise ValueError("spectrum p does not match design p")
        if self.u.coeffs[0] <= 0:
            raise ValueError("leading input coefficient must be positive")
        if self.u.energy > self.energy_bound * (1 + 1e-9):
            raise ValueError(
                f"input energy {self.u.energy:.6g} exceeds bound {self.energy_bound:.6g}"
            )
        defect = continuity_defect(self)
        if defect > CONTINUITY_TOLERANCE * max(1.0, np.linalg.norm(self.u.coeffs)):
            warnings.warn(
                f"input does not vanish at t = 0 (u(0) = {defect:.3e}); the delayed "
                "output is discontinuous and spectrum truncation bias will grow"
            )

    @property
    def basis_config(self) -> BasisConfig:
        return BasisConfig(p=self.p, num_funcs=len(self.u))

    @property
    def n_samples(self) -> int:
        """Samples on [0, horizon]: floor(horizon/delta) + 1."""
        return int(np.floor(self.horizon / self.delta + 1e-9)) + 1

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "u": self.u.coeffs.tolist(),
            "eta": self.energy_bound,
            "delta": self.delta,
            "horizon": self.horizon,
            "tau_guess": self.tau_guess,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InputDesign":
        return cls(
            p=float(d["p"]),
            u=Spectrum(coeffs=np.asarray(d["u"], dtype=float), p=float(d["p"])),
            energy_bound=float(d["eta"]),
            horizon=float(d["horizon"]),
            delta=float(d["delta"]),
            tau_guess=float(d["tau_guess"]),
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Sampled, possibly noisy measurements of the delayed input."""

    z: np.ndarray
    delta: float
    n_samples: int
    noise_var: float
    seed: object
    true_tau: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        if self.z.size != self.n_samples:
            raise ValueError("sample count does not match data length")
        if self.noise_var < 0:
            raise ValueError("noise variance must be nonnegative")

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.delta


def continuity_defect(design: InputDesign) -> float:
    """|u(0)| = sqrt(2p) |sum_k u_k| under the adopted sign convention."""
    return float(abs(np.sqrt(2.0 * design.p) * design.u.coeffs.sum()))


def synthesize_input(design: InputDesign, t) -> float | np.ndarray:
    """Exact u(t) = sum_k u_k ell_k(t); zero for t < 0."""
    vals = eval_basis_matrix(design.basis_config, np.atleast_1d(t)) @ design.u.coeffs
    return float(vals[0]) if np.isscalar(t) else vals


def input_derivative(design: InputDesign, t) -> float | np.ndarray:
    """Exact du/dt at t (one-sided at t = 0, zero for t < 0)."""
    vals = eval_basis_derivative_matrix(design.basis_config, np.atleast_1d(t)) @ design.u.coeffs
    return float(vals[0]) if np.isscalar(t) else vals


def sample_delayed(design: InputDesign, tau: float, n_samples: int) -> np.ndarray:
    """Noise-free samples y_n = u(n*delta - tau), exactly zero before tau."""
    if tau < 0:
        raise ValueError("delay must be nonnegative")
    t = np.arange(n_samples) * design.delta
    return synthesize_input(design, t - tau)


def add_noise(
    y: np.ndarray,
    noise_var: float,
    seed,
    *,
    delta: float,
    true_tau: float | None = None,
) -> Dataset:
    """Add i.i.d. Gaussian noise of variance noise_var, deterministic in seed.

    ``seed`` may be an int or a tuple (base_seed, replicate) for
    parallel-safe per-replicate streams.
    """
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    y = np.asarray(y, dtype=float)
    if noise_var == 0:
        z = y.copy()
    else:
        rng = np.random.default_rng(seed)
        z = y + np.sqrt(noise_var) * rng.standard_normal(y.size)
    return Dataset(
        z=z,
        delta=delta,
        n_samples=y.size,
        noise_var=noise_var,
        seed=seed,
        true_tau=true_tau,
    )


def make_dataset(
    design: InputDesign,
    tau: float,
    noise_var: float,
    seed,
    n_samples: int | None = None,
) -> Dataset:
    """Simulate one dataset from a design: delay, sample, add noise."""
    n = design.n_samples if n_samples is None else n_samples
    y = sample_delayed(design, tau, n)
    return add_noise(y, noise_var, seed, delta=design.delta, true_tau=tau)


def support_time(design: InputDesign, energy_fraction: float = 0.999) -> float:
    """Time by which the input has delivered the given fraction of its energy.

    Used as the effective end T_u of the excitation when splitting the
    measurement interval into signal support and delay headroom.
    """
    if not 0 < energy_fraction < 1:
        raise ValueError("energy fraction must lie in (0, 1)")
    step = min(design.delta, 0.02 / design.p)
    t = np.arange(0.0, design.horizon + step, step)
    u = synthesize_input(design, t)
    cum = np.cumsum(u * u)
    total = cum[-1]
    if total == 0:
        return 0.0
    idx = int(np.searchsorted(cum, energy_fraction * total))
    return float(t[min(idx, t.size - 1)])


def default_tau_max(design: InputDesign) -> float:
    """Headroom left after the input's effective support: horizon - T_u."""
    t_u = support_time(design)
    lo = 10.0 * design.delta
    hi = design.horizon - design.delta
    return float(min(max(design.horizon - t_u, lo), hi))


def save_dataset(ds: Dataset, csv_path, meta_path=None, extra_meta: dict | None = None) -> None:
    """Write samples as CSV (t, z at 17 significant digits) plus JSON sidecar."""
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "z"])
        for n in range(ds.n_samples):
            writer.writerow([f"{n * ds.delta:.17g}", f"{ds.z[n]:.17g}"])
    meta = {
        "delta": ds.delta,
        "n_samples": ds.n_samples,
        "noise_var": ds.noise_var,
        "seed": list(ds.seed) if isinstance(ds.seed, (tuple, list)) else ds.seed,
    }
    if ds.true_tau is not None:
        meta["true_tau"] = ds.true_tau
    if extra_meta:
        meta.update(extra_meta)
    with open(meta_path, "w") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")


def load_dataset(csv_path, meta_path=None) -> Dataset:
    """Round-trip counterpart of save_dataset."""
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
    with open(meta_path) as f:
        meta = json.load(f)
    z = []
    with open(csv_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:2] != ["t", "z"]:
            raise ValueError(f"unexpected CSV header {header!r}")
        for row in reader:
            z.append(float(row[1]))
    seed = meta.get("seed")
    if isinstance(seed, list):
        seed = tuple(seed)
    return Dataset(
        z=np.asarray(z),
        delta=float(meta["delta"]),
        n_samples=int(meta["n_samples"]),
        noise_var=float(meta["noise_var"]),
        seed=seed,
        true_tau=meta.get("true_tau"),
    )
