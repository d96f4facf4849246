"""Evidence from falsification runs, fed back into the risk model.

Violating configurations are smoothed into a density over the normalised
search space (the infill sampling criterion). Its highest density region
gives per-feature credible intervals; the region's size together with the
Monte-Carlo violation rate gives an updated event likelihood.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
from scipy.special import ndtr

from riskloop.falsify import FalsificationResult, SearchSpace, result_to_dict
from riskloop.model import RiskModel

MIN_BANDWIDTH = 1e-3
# reflected images per side; exact to float precision for bandwidths up to ~0.5
_IMAGES = 3


class InfillError(ValueError):
    pass


def silverman_bandwidth(x: np.ndarray, dims: int = 1) -> float:
    """Normal-reference bandwidth ``spread * (4 / ((d + 2) n)) ** (1 / (d + 4))``
    with the robust spread ``min(std, IQR / 1.34)``."""
    n = len(x)
    std = float(np.std(x, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = std
    return max(MIN_BANDWIDTH, spread * (4.0 / ((dims + 2) * n)) ** (1.0 / (dims + 4)))


def _images(centers: np.ndarray) -> np.ndarray:
    """Reflections of points in [0, 1] across both boundaries, repeated."""
    ks = np.arange(-_IMAGES, _IMAGES + 1) * 2.0
    return np.concatenate([ks[:, None] + centers[None, :], ks[:, None] - centers[None, :]])  # (2(2K+1), n)


@dataclass(frozen=True, eq=False)
class Density:
    """Product-kernel density over the unit hypercube of a search space.

    Continuous dimensions get a boundary-reflected Gaussian kernel per
    sample; each discrete dimension contributes an independent
    Laplace-smoothed category distribution.
    """

    space: SearchSpace
    unit_points: np.ndarray  # (n, d); discrete columns hold category indices
    bandwidths: np.ndarray  # (d,), nan for discrete dimensions
    category_probs: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.unit_points)

    def _continuous(self):
        return [j for j, d in enumerate(self.space.dims) if not d.is_discrete]

    def pdf(self, unit_x: np.ndarray) -> np.ndarray:
        """Density at points given in unit coordinates (discrete: category index)."""
        x = np.atleast_2d(np.asarray(unit_x, dtype=float))
        per_sample = np.ones((len(x), self.n))
        for j in self._continuous():
            h = self.bandwidths[j]
            img = _images(self.unit_points[:, j])  # (m, n)
            z = (x[:, j][:, None, None] - img[None]) / h
            k = np.exp(-0.5 * z * z).sum(axis=1) / (h * math.sqrt(2 * math.pi))
            per_sample *= k
        total = per_sample.mean(axis=1)
        for j, probs in self.category_probs.items():
            # a category occupies 1/K of the unit interval
            total = total * probs[x[:, j].round().astype(int)] * len(probs)
        return total

    def axis_masses(self, j: int, resolution: int) -> np.ndarray:
        """Per-sample probability of each cell along dimension ``j``: (n, cells)."""
        if j in self.category_probs:
            probs = self.category_probs[j]
            return np.broadcast_to(probs, (self.n, len(probs)))
        edges = np.linspace(0.0, 1.0, resolution + 1)
        img = _images(self.unit_points[:, j])
        cdf = ndtr((edges[None, None, :] - img[:, :, None]) / self.bandwidths[j])  # (m, n, edges)
        return np.diff(cdf, axis=2).sum(axis=0)

    def shape(self, resolution: int) -> tuple[int, ...]:
        return tuple(len(self.category_probs[j]) if j in self.category_probs else resolution
                     for j in range(len(self.space)))

    def cell_masses(self, resolution: int = 50) -> np.ndarray:
        """Exact probability mass of every cell of the evaluation grid."""
        if resolution < 2:
            raise InfillError("grid_resolution must be at least 2")
        factors = [self.axis_masses(j, resolution) for j in range(len(self.space))]
        letters = "abcdefghijklmnopqrstuvwxyz"[:len(factors)]
        spec = ",".join(f"z{c}" for c in letters) + "->" + letters
        return np.einsum(spec, *factors, optimize=True) / self.n

    def grid_integral(self, resolution: int = 50) -> float:
        return float(self.cell_masses(resolution).sum())

    def cell_centers(self, resolution: int = 50) -> list[np.ndarray]:
        """Unit-coordinate cell centres per dimension (category index for discrete)."""
        out = []
        for j, size in enumerate(self.shape(resolution)):
            if j in self.category_probs:
                out.append(np.arange(size, dtype=float))
            else:
                out.append((np.arange(size) + 0.5) / size)
        return out

    def mean(self, resolution: int = 50) -> np.ndarray:
        mass = self.cell_masses(resolution)
        centers = self.cell_centers(resolution)
        out = []
        for j in range(len(self.space)):
            axes = tuple(k for k in range(mass.ndim) if k != j)
            out.append(float((mass.sum(axis=axes) * centers[j]).sum()))
        return np.array(out)

    def mode(self, resolution: int = 50) -> np.ndarray:
        mass = self.cell_masses(resolution)
        idx = np.unravel_index(int(np.argmax(mass)), mass.shape)
        centers = self.cell_centers(resolution)
        return np.array([centers[j][i] for j, i in enumerate(idx)])


def fit_density(violating: Sequence[Sequence[float]], space: SearchSpace) -> Density:
    """KDE over violating points given in native units (discrete: category index)."""
    points = np.asarray(violating, dtype=float)
    if points.ndim != 2 or len(points) < 2:
        raise InfillError("insufficient evidence: need at least 2 violating configurations")
    if points.shape[1] != len(space):
        raise InfillError(f"points have {points.shape[1]} coordinates, space has {len(space)} dimensions")
    unit = space.normalize(points)
    bandwidths = np.full(len(space), np.nan)
    probs: dict[int, np.ndarray] = {}
    n_continuous = sum(not d.is_discrete for d in space.dims)
    for j, d in enumerate(space.dims):
        if d.is_discrete:
            unit[:, j] = points[:, j]
            counts = np.bincount(points[:, j].round().astype(int), minlength=len(d.categories))
            probs[j] = (counts + 1.0) / (len(points) + len(d.categories))
        else:
            if np.any(unit[:, j] < 0) or np.any(unit[:, j] > 1):
                raise InfillError(f"points outside the domain of {d.name!r}")
            bandwidths[j] = silverman_bandwidth(unit[:, j], n_continuous)
    return Density(space, unit, bandwidths, probs)


@dataclass(frozen=True)
class CredibleIntervals:
    alpha: float
    volume_fraction: float
    # feature -> list of (lo, hi) in native units, or list of category labels
    intervals: dict[str, list]
    units: dict[str, str | None] = field(default_factory=dict)
    cells: int = 0


def hdr(density: Density, alpha: float = 0.9, grid_resolution: int = 50) -> CredibleIntervals:
    """Highest density region at mass ``alpha`` on the evaluation grid and its
    per-feature projections."""
    if not 0.0 < alpha < 1.0:
        raise InfillError("alpha must lie in (0, 1)")
    mass = density.cell_masses(grid_resolution)
    flat = mass.ravel()
    order = np.argsort(-flat, kind="stable")
    cumulative = np.cumsum(flat[order])
    k = int(np.searchsorted(cumulative, alpha * cumulative[-1], side="left")) + 1
    k = min(k, flat.size)
    chosen = np.unravel_index(order[:k], mass.shape)

    intervals: dict[str, list] = {}
    units: dict[str, str | None] = {}
    for j, d in enumerate(density.space.dims):
        covered = np.unique(chosen[j])
        if d.is_discrete:
            intervals[d.name] = [d.categories[i] for i in covered]
        else:
            size = mass.shape[j]
            span = d.hi - d.lo
            runs = []
            start = prev = int(covered[0])
            for c in covered[1:]:
                c = int(c)
                if c != prev + 1:
                    runs.append((start, prev))
                    start = c
                prev = c
            runs.append((start, prev))
            intervals[d.name] = [(d.lo + a / size * span, d.lo + (b + 1) / size * span) for a, b in runs]
        units[d.name] = d.unit
    return CredibleIntervals(alpha, k / flat.size, intervals, units, k)


def likelihood_from_hdr(intervals: CredibleIntervals | float, violation_rate: float) -> float:
    """Event likelihood ``rate ** (1 - v)`` for HDR volume fraction ``v``.

    Wider credible regions push the likelihood from the observed violation
    rate towards 1.
    """
    v = intervals.volume_fraction if isinstance(intervals, CredibleIntervals) else float(intervals)
    if not (0.0 <= violation_rate <= 1.0 and 0.0 <= v <= 1.0):
        raise InfillError("violation_rate and volume fraction must lie in [0, 1]")
    if violation_rate == 0.0:
        return 0.0
    return min(1.0, max(0.0, violation_rate ** (1.0 - v)))


def sensitivity(samples: Sequence[tuple[Sequence[float], float]], space: SearchSpace) -> list[tuple[str, float]]:
    """Rank features by |Pearson correlation| between normalised value and
    objective, scores normalised to sum to 1. Points are in native units."""
    pairs = [(p, o) for p, o in samples if math.isfinite(o)]
    if len(pairs) < 10:
        raise InfillError("sensitivity needs at least 10 samples with finite objectives")
    x = space.normalize(np.array([p for p, _ in pairs], dtype=float))
    y = np.array([o for _, o in pairs], dtype=float)
    if np.ptp(y) == 0.0:
        raise InfillError("no signal: objective is constant")
    yc = y - y.mean()
    scores = []
    for j in range(len(space)):
        xc = x[:, j] - x[:, j].mean()
        denom = math.sqrt(float((xc * xc).sum()) * float((yc * yc).sum()))
        scores.append(abs(float((xc * yc).sum())) / denom if denom > 0 else 0.0)
    total = sum(scores)
    if total > 0:
        scores = [s / total for s in scores]
    ranked = sorted(range(len(space)), key=lambda j: -scores[j])  # stable: declaration order breaks ties
    return [(space.dims[j].name, scores[j]) for j in ranked]


@dataclass(frozen=True)
class RiskEvidence:
    event: str
    violation_rate: float
    likelihood: float
    source: str
    intervals: CredibleIntervals | None = None
    sensitivity: tuple[tuple[str, float], ...] = ()
    n_violations: int = 0
    bandwidths: dict[str, float] = field(default_factory=dict)


def source_id(result: FalsificationResult) -> str:
    payload = json.dumps(result_to_dict(result), sort_keys=True).encode("utf-8")
    digest = hashlib.sha256(payload).hexdigest()[:12]
    return f"falsification/{result.event}/{result.strategy}/seed={result.seed}/budget={result.budget}/{digest}"


def derive_evidence(result: FalsificationResult, violation_rate: float, alpha: float = 0.9,
                    grid_resolution: int = 50) -> tuple[RiskEvidence, Density | None]:
    """Evidence for ``result.event`` from a falsification run and a Monte-Carlo
    violation rate.

    With fewer than two violating samples no density is fitted and the
    likelihood equals the violation rate.
    """
    space = result.space
    bad = [s.point for s in result.samples if s.violated]
    density = ci = None
    bandwidths: dict[str, float] = {}
    if len(bad) >= 2:
        density = fit_density(bad, space)
        ci = hdr(density, alpha, grid_resolution)
        bandwidths = {d.name: float(density.bandwidths[j]) for j, d in enumerate(space.dims) if not d.is_discrete}
        likelihood = likelihood_from_hdr(ci, violation_rate)
    else:
        likelihood = likelihood_from_hdr(0.0, violation_rate)
    try:
        ranking = tuple(sensitivity([(s.point, s.objective) for s in result.samples], space))
    except InfillError:
        ranking = ()
    evidence = RiskEvidence(result.event, float(violation_rate), likelihood, source_id(result), ci, ranking,
                            len(bad), bandwidths)
    return evidence, density


def apply_feedback(model: RiskModel, event: str, evidence: RiskEvidence) -> RiskModel:
    """New model whose ``event`` carries the evidence's likelihood and source."""
    try:
        current = model.event(event)
    except KeyError:
        raise InfillError(f"unknown event {event!r}") from None
    return model.with_event(replace(current, likelihood=evidence.likelihood, evidence=evidence.source))


# -- serialisation -----------------------------------------------------------

def evidence_to_dict(evidence: RiskEvidence) -> dict[str, Any]:
    hdr_json: dict[str, Any] | None = None
    ci = evidence.intervals
    if ci is not None:
        entries = []
        for feature, spans in ci.intervals.items():
            if spans and isinstance(spans[0], str):
                entries.append({"feature": feature, "categories": list(spans)})
            else:
                for lo, hi in spans:
                    entries.append({"feature": feature, "lo": lo, "hi": hi, "unit": ci.units.get(feature)})
        hdr_json = {"alpha": ci.alpha, "volume_fraction": ci.volume_fraction, "intervals": entries}
    return {
        "event": evidence.event,
        "violation_rate": evidence.violation_rate,
        "hdr": hdr_json,
        "sensitivity": [{"feature": f, "score": s} for f, s in evidence.sensitivity],
        "likelihood": evidence.likelihood,
        "source": evidence.source,
        "n_violations": evidence.n_violations,
        "bandwidths": evidence.bandwidths,
    }


def evidence_from_dict(data: dict[str, Any]) -> RiskEvidence:
    try:
        ci = None
        if data.get("hdr") is not None:
            h = data["hdr"]
            intervals: dict[str, list] = {}
            units: dict[str, str | None] = {}
            for entry in h["intervals"]:
                name = entry["feature"]
                if "categories" in entry:
                    intervals[name] = list(entry["categories"])
                else:
                    intervals.setdefault(name, []).append((float(entry["lo"]), float(entry["hi"])))
                    units[name] = entry.get("unit")
            ci = CredibleIntervals(float(h["alpha"]), float(h["volume_fraction"]), intervals, units)
        likelihood = float(data["likelihood"])
        rate = float(data["violation_rate"])
        if not (0.0 <= likelihood <= 1.0 and 0.0 <= rate <= 1.0):
            raise ValueError("likelihood and violation_rate must lie in [0, 1]")
        return RiskEvidence(
            event=str(data["event"]),
            violation_rate=rate,
            likelihood=likelihood,
            source=str(data["source"]),
            intervals=ci,
            sensitivity=tuple((s["feature"], float(s["score"])) for s in data.get("sensitivity", [])),
            n_violations=int(data.get("n_violations", 0)),
            bandwidths={k: float(v) for k, v in data.get("bandwidths", {}).items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InfillError(f"malformed evidence: {exc}") from exc


def density_grid_csv(density: Density, resolution: int = 50) -> str:
    """Cell centres in native units with the cell-averaged density."""
    space = density.space
    mass = density.cell_masses(resolution)
    centers = density.cell_centers(resolution)
    volume = 1.0
    for j, size in enumerate(mass.shape):
        volume /= size
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*space.names, "density"])
    native = []
    for j, d in enumerate(space.dims):
        if d.is_discrete:
            native.append([d.categories[int(i)] for i in centers[j]])
        else:
            native.append([repr(float(v)) for v in d.lo + centers[j] * (d.hi - d.lo)])
    for idx in np.ndindex(mass.shape):
        writer.writerow([native[j][i] for j, i in enumerate(idx)] + [repr(float(mass[idx] / volume))])
    return buf.getvalue()
