"""Surrogate treatment dynamics: morphology-and-blur tumor attenuation.

Given a pre-treatment volume, its mask, and an action combo, the model
grades the combo's strength into a discrete attenuation level, then
rewrites the tumor region: the structural extent shrinks by erosion, an
inner core turns hyperdense (lipiodol), the next band turns hypodense
(necrosis), vacated voxels revert to parenchyma, and a bounded Gaussian
blur blends the tumor/organ boundary. Also hosts the deterministic action
embedding and the combo contrastive loss.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from . import voxel
from .actions import ActionCombo, ClinicalRule, check_rules
from .errors import (
    InvalidArgumentError,
    NonPositiveDenominatorError,
    NoTumorError,
    RuleViolationError,
    UnknownUnitError,
)
from .voxel import LIVER, TUMOR, Mask3, Volume3

# Intensity targets in window-normalized units. Parenchyma is the rewrite
# value for structurally resolved tumor tissue; it must sit inside the
# segmenter's neutral band so treated tissue stops reading as tumor.
HYPERDENSE_TARGET = 0.9
HYPODENSE_TARGET = -0.4
PARENCHYMA_TARGET = 0.0

EMBED_DIM = 64
_PHI_DIM = 128
_SUB_DIM = 32
_PROJ1_SEED = 0x7A33D1
_PROJ2_SEED = 0x51C0FF


@dataclass(frozen=True)
class EfficacyTable:
    """Per-unit strength weights plus the efficacy-to-level thresholds.

    An empty weight map means "no information": every unit scores 0 and
    combos land on the level floor. A non-empty map must cover every unit
    it is asked about.
    """

    weights: dict
    thresholds: tuple[float, float, float] = (1.0, 2.0, 3.0)
    diminishing: float = 0.5
    noise_scale: float = 0.05

    def __post_init__(self):
        th = tuple(float(t) for t in self.thresholds)
        if len(th) != 3 or list(th) != sorted(th):
            raise InvalidArgumentError("thresholds must be 3 ascending values")
        if not 0 <= self.diminishing <= 1:
            raise InvalidArgumentError("diminishing factor must be in [0, 1]")
        if self.noise_scale < 0:
            raise InvalidArgumentError("noise_scale must be >= 0")
        object.__setattr__(self, "thresholds", th)
        object.__setattr__(self, "weights", dict(self.weights))

    def weight(self, name: str) -> float:
        if not self.weights:
            return 0.0
        if name not in self.weights:
            raise UnknownUnitError(f"unit {name!r} missing from efficacy table")
        return float(self.weights[name])

    def to_config(self) -> dict:
        return {
            "weights": dict(sorted(self.weights.items())),
            "thresholds": list(self.thresholds),
            "diminishing": self.diminishing,
            "noise_scale": self.noise_scale,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "EfficacyTable":
        return cls(
            weights=cfg.get("weights", {}),
            thresholds=tuple(cfg.get("thresholds", (1.0, 2.0, 3.0))),
            diminishing=cfg.get("diminishing", 0.5),
            noise_scale=cfg.get("noise_scale", 0.05),
        )


@dataclass(frozen=True)
class AttenuationParams:
    """Knobs of one attenuation pass.

    ``from_level`` pins the canonical maps erosion_radius = l and
    blur_sigma = 0.5 l; hand-built instances may use any non-negative
    values (radius 0 / sigma 0 / zero fractions is the identity).
    """

    level: int
    erosion_radius: int
    blur_sigma: float
    lipiodol_fraction: float
    necrosis_fraction: float
    noise_scale: float = 0.0

    def __post_init__(self):
        if self.level not in (1, 2, 3, 4):
            raise InvalidArgumentError("level must be in {1, 2, 3, 4}")
        if self.erosion_radius < 0 or self.blur_sigma < 0 or self.noise_scale < 0:
            raise InvalidArgumentError("radius, sigma and noise_scale must be >= 0")
        if not (0 <= self.lipiodol_fraction <= 1 and 0 <= self.necrosis_fraction <= 1):
            raise InvalidArgumentError("fractions must be in [0, 1]")
        if self.lipiodol_fraction + self.necrosis_fraction > 1:
            raise InvalidArgumentError("lipiodol + necrosis fractions must be <= 1")

    @classmethod
    def from_level(cls, level: int, noise_scale: float = 0.0) -> "AttenuationParams":
        # Deposition fractions grow slowly so the hyperdense core stays
        # inside the viable extent for moderate tumors; the structural
        # response is carried by the erosion radius.
        return cls(
            level=level,
            erosion_radius=level,
            blur_sigma=0.5 * level,
            lipiodol_fraction=0.08 * level,
            necrosis_fraction=0.04 * level,
            noise_scale=noise_scale,
        )

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "erosion_radius": self.erosion_radius,
            "blur_sigma": self.blur_sigma,
            "lipiodol_fraction": self.lipiodol_fraction,
            "necrosis_fraction": self.necrosis_fraction,
            "noise_scale": self.noise_scale,
        }


# Caps on cumulative deposition so combined fractions stay a valid split
# of the tumor volume (0.6 + 0.3 <= 1).
LIPIODOL_FRACTION_CAP = 0.6
NECROSIS_FRACTION_CAP = 0.3

IDENTITY_PARAMS = AttenuationParams(
    level=1,
    erosion_radius=0,
    blur_sigma=0.0,
    lipiodol_fraction=0.0,
    necrosis_fraction=0.0,
    noise_scale=0.0,
)


def combine_params(a: AttenuationParams, b: AttenuationParams) -> AttenuationParams:
    """Commutative, associative composition of two attenuation passes.

    Erosion radii add (L1-ball erosions compose additively), blur sigmas
    add in quadrature (Gaussian composition), deposition fractions add
    under their caps. Rendering one combined pass from the pre-treatment
    state therefore does not depend on the order actions were chosen in,
    which keeps multi-step search trajectories order-exact.
    """
    return AttenuationParams(
        level=min(4, a.level + b.level - 1),
        erosion_radius=a.erosion_radius + b.erosion_radius,
        blur_sigma=float(np.hypot(a.blur_sigma, b.blur_sigma)),
        lipiodol_fraction=min(a.lipiodol_fraction + b.lipiodol_fraction, LIPIODOL_FRACTION_CAP),
        necrosis_fraction=min(a.necrosis_fraction + b.necrosis_fraction, NECROSIS_FRACTION_CAP),
        noise_scale=max(a.noise_scale, b.noise_scale),
    )


@dataclass(frozen=True, eq=False)
class SimulatedState:
    """One simulated post-treatment state, reproducible from (inputs, seed)."""

    volume: Volume3
    mask: Mask3
    params: AttenuationParams
    seed: int


def combo_efficacy(combo: ActionCombo, table: EfficacyTable) -> AttenuationParams:
    """Grade a combo into attenuation parameters.

    Per kind, weights enter in descending order with geometric diminishing
    returns (second drug counts half, and so on); the summed efficacy maps
    to a level through the table thresholds (inclusive).
    """
    efficacy = 0.0
    for units in (combo.drugs, combo.embolics):
        weights = sorted((table.weight(u.name) for u in units), reverse=True)
        efficacy += sum(w * table.diminishing**i for i, w in enumerate(weights))
    level = 1 + sum(1 for t in table.thresholds if efficacy >= t)
    return AttenuationParams.from_level(level, noise_scale=table.noise_scale)


def _nearest_to_centroid(coords: np.ndarray) -> np.ndarray:
    centroid = coords.mean(axis=0)
    d2 = ((coords - centroid) ** 2).sum(axis=1)
    return coords[int(np.argmin(d2))]


def attenuate(
    pre: Volume3, mask: Mask3, params: AttenuationParams, seed: int = 0
) -> SimulatedState:
    """Apply one attenuation pass to a (volume, mask) state.

    The viable extent is the tumor eroded by the level radius (falling
    back to the voxel nearest the tumor centroid when erosion empties it);
    vacated voxels revert to parenchyma intensity and liver label. The
    innermost lipiodol fraction of the surviving tumor bed (by depth
    ranking) turns hyperdense with multiplicative noise, the next band
    hypodense, and an organ-masked Gaussian blur over the padded tumor
    bounding box blends the tumor/organ boundary. Deterministic per seed.
    """
    if pre.dims != mask.dims:
        raise InvalidArgumentError("volume and mask dims differ")
    tumor_full = mask.data == TUMOR
    if not tumor_full.any():
        raise NoTumorError("attenuate requires a non-empty tumor mask")

    # All work happens in a box around the tumor, padded far enough that
    # neither the erosion nor the truncated blur kernel can see its edges.
    pad = max(params.erosion_radius, int(np.ceil(3 * params.blur_sigma)) + 1, 1)
    lo, hi = [], []
    for ax, coords in enumerate(np.nonzero(tumor_full)):
        lo.append(max(0, int(coords.min()) - pad))
        hi.append(min(pre.dims[ax], int(coords.max()) + pad + 1))
    box = tuple(slice(lo[i], hi[i]) for i in range(3))

    tumor = tumor_full[box]
    mask_box = mask.data[box]
    data = np.array(pre.data[box], dtype=np.float64)

    if params.erosion_radius > 0:
        viable = voxel._binary_erode(tumor, params.erosion_radius)
        if not viable.any():
            viable = np.zeros_like(tumor)
            vx, vy, vz = _nearest_to_centroid(np.argwhere(tumor))
            viable[vx, vy, vz] = True
    else:
        viable = tumor

    rng = np.random.default_rng(seed)
    shell = tumor & ~viable
    data[shell] = PARENCHYMA_TARGET

    # Deposition marks live in the attenuated (viable) extent: fractions
    # are taken of the surviving tumor bed, ranked deepest-first by the
    # input tumor's distance-to-boundary, ties broken by flat index so
    # replicas and repeat calls agree exactly.
    depth = ndimage.distance_transform_edt(tumor)
    viable_idx = np.flatnonzero(viable.ravel())
    order = np.lexsort((viable_idx, -depth.ravel()[viable_idx]))
    ranked = viable_idx[order]

    n_lip = min(int(round(params.lipiodol_fraction * len(ranked))), len(ranked))
    n_nec = min(int(round(params.necrosis_fraction * len(ranked))), len(ranked) - n_lip)
    flat = data.ravel()
    if n_nec:
        noise = 1.0 + params.noise_scale * rng.standard_normal(n_nec)
        flat[ranked[n_lip : n_lip + n_nec]] = HYPODENSE_TARGET * noise
    data = flat.reshape(data.shape)

    if params.blur_sigma > 0:
        # Normalized (organ-masked) convolution: blends the tumor/organ
        # boundary without bleeding air across the organ surface.
        organ = (mask_box >= LIVER).astype(np.float64)
        smoothed = ndimage.gaussian_filter(
            data * organ, sigma=params.blur_sigma, truncate=3.0, mode="reflect"
        )
        weight = ndimage.gaussian_filter(
            organ, sigma=params.blur_sigma, truncate=3.0, mode="reflect"
        )
        inside = organ > 0
        data[inside] = smoothed[inside] / np.maximum(weight[inside], 1e-12)

    # Lipiodol deposits read sharp and metal-dense on CT, so they are
    # stamped after the blend instead of being smoothed away with it.
    if n_lip:
        flat = data.ravel()
        noise = 1.0 + params.noise_scale * rng.standard_normal(n_lip)
        flat[ranked[:n_lip]] = HYPERDENSE_TARGET * noise
        data = flat.reshape(data.shape)

    out_data = np.array(pre.data)
    out_data[box] = np.clip(data, -1.0, 1.0).astype(np.float32)
    out_mask = np.array(mask.data)
    mask_patch = np.array(mask_box)
    mask_patch[shell] = LIVER
    out_mask[box] = mask_patch
    return SimulatedState(
        volume=Volume3(out_data, pre.spacing),
        mask=Mask3(out_mask, mask.spacing),
        params=params,
        seed=seed,
    )


def simulate(
    pre: Volume3,
    mask: Mask3,
    combo: ActionCombo,
    table: EfficacyTable,
    replicas: int = 1,
    seed: int = 0,
    rules: Optional[Iterable[ClinicalRule]] = None,
    complete: bool = True,
) -> list[SimulatedState]:
    """T replica simulations of one combo applied to a state.

    Replica i uses seed + i; with rules given, violations raise before any
    synthesis. Replicas are independent pure computations and are returned
    in seed order.
    """
    if replicas < 1:
        raise InvalidArgumentError("replicas must be >= 1")
    if rules is not None:
        violations = check_rules(combo, rules, complete=complete)
        if violations:
            raise RuleViolationError(violations)
    params = combo_efficacy(combo, table)
    return [attenuate(pre, mask, params, seed=seed + i) for i in range(replicas)]


# --- deterministic action embedding ----------------------------------------


def _name_rng(name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@lru_cache(maxsize=4096)
def _keyword_embedding(name: str) -> np.ndarray:
    vec = _name_rng("phi:" + name).standard_normal(_PHI_DIM)
    vec.flags.writeable = False
    return vec


@lru_cache(maxsize=4096)
def _concept_row(name: str) -> np.ndarray:
    vec = _name_rng("concept:" + name).standard_normal(_SUB_DIM) / np.sqrt(_SUB_DIM)
    vec.flags.writeable = False
    return vec


@lru_cache(maxsize=1)
def _projections() -> tuple[np.ndarray, np.ndarray]:
    p1 = np.random.default_rng(_PROJ1_SEED).standard_normal((_SUB_DIM, _PHI_DIM))
    p2 = np.random.default_rng(_PROJ2_SEED).standard_normal((EMBED_DIM, 2 * _SUB_DIM))
    return p1 / np.sqrt(_PHI_DIM), p2 / np.sqrt(2 * _SUB_DIM)


@dataclass(frozen=True, eq=False)
class ComboEmbedding:
    """Unit-norm combo vector plus its per-unit components."""

    vector: np.ndarray
    sub_embeddings: tuple[np.ndarray, ...]
    concept: np.ndarray


def encode_combo(combo: ActionCombo) -> ComboEmbedding:
    """Deterministic 64-d embedding of the combo's unit-name multiset.

    Each keyword hashes to a 128-d vector, projects to 32-d, and the mean
    pools with a 32-d bag-of-keywords concept vector; a fixed projection
    maps the concatenation to 64-d, L2-normalized. Units enter in
    canonical (kind, name) order, so listing order never matters.
    """
    if not combo.units:
        raise InvalidArgumentError("cannot encode an empty combo")
    p1, p2 = _projections()
    subs = tuple(p1 @ _keyword_embedding(u.name) for u in combo.units)
    pooled = np.mean(subs, axis=0)
    concept = np.sum([_concept_row(u.name) for u in combo.units], axis=0)
    fused = p2 @ np.concatenate([pooled, concept])
    vector = fused / np.linalg.norm(fused)
    return ComboEmbedding(vector=vector, sub_embeddings=subs, concept=concept)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def combo_contrastive_loss(
    anchor: np.ndarray,
    positive: np.ndarray,
    negatives: Sequence[np.ndarray],
    delta: float,
    mode: str = "infonce",
) -> float:
    """Contrastive loss over cosine similarities at temperature delta.

    ``infonce`` (default): -log(exp(s+/d) / (exp(s+/d) + sum exp(s-/d))).
    ``literal`` subtracts the positive term from the negatives' sum in the
    denominator instead of adding it; that form is not defined on all
    inputs and raises when the denominator is not positive.
    """
    if delta <= 0:
        raise InvalidArgumentError("temperature delta must be > 0")
    negatives = list(negatives)
    if not negatives:
        raise InvalidArgumentError("need at least one negative")
    anchor = np.asarray(anchor, dtype=np.float64)
    dims = {anchor.shape, np.asarray(positive).shape, *(np.asarray(n).shape for n in negatives)}
    if len(dims) != 1:
        raise InvalidArgumentError("all vectors must share one dimension")

    pos = np.exp(_cosine(anchor, np.asarray(positive, dtype=np.float64)) / delta)
    neg = sum(np.exp(_cosine(anchor, np.asarray(n, dtype=np.float64)) / delta) for n in negatives)
    if mode == "infonce":
        return float(-np.log(pos / (pos + neg)))
    if mode == "literal":
        denom = neg - pos
        if denom <= 0:
            raise NonPositiveDenominatorError(
                f"literal-form denominator {denom:.6g} is not positive"
            )
        return float(-np.log(pos / denom))
    raise InvalidArgumentError(f"unknown loss mode {mode!r}")
