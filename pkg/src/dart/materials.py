"""Learnable material model and source directivity.

Material matrices are stored per patch as ``Mhat[i, l, k]``: the share of
incident radiance in bin ``l`` that leaves in bin ``k``.  Two variants are
supported:

``np``
    ``Mhat_i = alpha_i * softmax_l(Z_i)``; every outgoing column of the
    softmax sums to one, ``alpha_i`` sets the overall reflectivity.
``p``
    ``Mhat_i = alpha_i * sum_m beta_im * C_m`` over fixed lossless
    templates ``C_m`` with simplex weights ``beta_i = softmax(b_i)``.

All parameters are unconstrained; the maps above keep every realized
matrix feasible.  Patches may share one parameter block (``block``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, softmax

from .precompute import COMPONENT_NAMES, bsdf_material_matrices
from .geometry import DirectionGrid

ALPHA_MAX = 0.999
N_DIRECTIVITY = 128
DIRECTIVITY_TEMPERATURE = 8.0

COMPONENT_SETS = {
    "all": COMPONENT_NAMES,
    "reflection": ("diffuse_reflection", "specular_reflection"),
    "reflection-only": ("specular_reflection",),
    "diffuse-only": ("diffuse_reflection",),
    "transmission": ("diffuse_transmission", "specular_transmission"),
}


def resolve_components(selection) -> tuple:
    """Component names from a set name, a comma list, or a sequence."""
    if isinstance(selection, str):
        if selection in COMPONENT_SETS:
            return tuple(COMPONENT_SETS[selection])
        selection = [s.strip() for s in selection.split(",") if s.strip()]
    names = tuple(selection)
    bad = [n for n in names if n not in COMPONENT_NAMES]
    if bad or not names:
        raise ValueError(f"unknown material components: {bad or selection}")
    return names


def alpha_from_logit(a):
    return ALPHA_MAX * expit(a)


def logit_for_alpha(alpha):
    s = np.asarray(alpha, dtype=np.float64) / ALPHA_MAX
    if np.any((s <= 0) | (s >= 1)):
        raise ValueError(f"alpha must lie in (0, {ALPHA_MAX})")
    return np.log(s) - np.log1p(-s)


def softmax_backward(s, sbar, axis):
    """Vector-Jacobian product of softmax given its output ``s``."""
    return s * (sbar - np.sum(s * sbar, axis=axis, keepdims=True))


# --------------------------------------------------------------------------
# directivity


def directivity_angles(K: int = N_DIRECTIVITY) -> np.ndarray:
    return np.linspace(0.0, np.pi, K)


def directivity_weights(cos_theta, K: int = N_DIRECTIVITY,
                        temperature: float = DIRECTIVITY_TEMPERATURE) -> np.ndarray:
    """Softmax interpolation weights of each angle over the ``K`` anchor angles."""
    theta = np.arccos(np.clip(np.asarray(cos_theta, dtype=np.float64), -1.0, 1.0))
    logits = -temperature * np.abs(theta[..., None] - directivity_angles(K))
    return softmax(logits, axis=-1)


def directivity_gain(direction, orientation, kappa, temperature: float = DIRECTIVITY_TEMPERATURE):
    """Axially symmetric gain for unit direction(s) around ``orientation``."""
    kappa = np.asarray(kappa, dtype=np.float64)
    o = np.asarray(orientation, dtype=np.float64)
    o = o / np.linalg.norm(o)
    cos = np.asarray(direction, dtype=np.float64) @ o
    return directivity_weights(cos, kappa.size, temperature) @ kappa


# --------------------------------------------------------------------------
# material model


@dataclass
class MaterialModel:
    variant: str
    n_dir: int
    block: np.ndarray  # (n_pat,) parameter block of each patch
    params: dict
    components: tuple = ()
    templates: np.ndarray | None = None  # (C, n_dir, n_dir)
    _agg: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        self.block = np.asarray(self.block, dtype=np.int64)
        if self.variant not in ("np", "p"):
            raise ValueError(f"unknown material variant {self.variant!r}")
        if self.variant == "p" and self.templates is None:
            raise ValueError("parametric materials need component templates")

    @property
    def n_pat(self) -> int:
        return self.block.size

    @property
    def n_blocks(self) -> int:
        return self.params["alpha_logit"].size

    @property
    def shared(self) -> bool:
        return self.n_blocks != self.n_pat or np.any(self.block != np.arange(self.n_pat))

    def copy(self) -> "MaterialModel":
        return MaterialModel(self.variant, self.n_dir, self.block.copy(),
                             {k: np.array(v, copy=True) for k, v in self.params.items()},
                             tuple(self.components),
                             None if self.templates is None else self.templates.copy())

    def alphas(self) -> np.ndarray:
        """Realized reflection coefficient of every patch."""
        return alpha_from_logit(self.params["alpha_logit"])[self.block]

    def betas(self) -> np.ndarray:
        return softmax(self.params["beta_logit"], axis=-1)[self.block]

    def pattern(self) -> np.ndarray:
        """Boolean ``[incident, outgoing]`` support shared by all patches."""
        if self.variant == "np":
            return np.ones((self.n_dir, self.n_dir), dtype=bool)
        return np.any(self.templates != 0, axis=0)

    def realize(self) -> np.ndarray:
        """Per-patch material matrices ``Mhat[i, l, k]``."""
        alpha = alpha_from_logit(self.params["alpha_logit"])
        if self.variant == "np":
            mixed = softmax(self.params["Z"], axis=1)
        else:
            beta = softmax(self.params["beta_logit"], axis=-1)
            mixed = np.einsum("bm,mlk->blk", beta, self.templates)
        return (alpha[:, None, None] * mixed)[self.block]

    def _aggregate(self, per_patch: np.ndarray) -> np.ndarray:
        if not self.shared:
            return per_patch
        if self._agg is None:
            n = self.n_pat
            self._agg = sp.csr_matrix((np.ones(n), (self.block, np.arange(n))),
                                      shape=(self.n_blocks, n))
        flat = per_patch.reshape(self.n_pat, -1)
        return (self._agg @ flat).reshape((self.n_blocks,) + per_patch.shape[1:])

    def realize_backward(self, mbar: np.ndarray) -> dict:
        """Gradients of the parameters from the gradient w.r.t. ``Mhat``."""
        mbar_b = self._aggregate(np.asarray(mbar, dtype=np.float64))
        a = self.params["alpha_logit"]
        alpha = alpha_from_logit(a)
        dalpha = alpha * (1.0 - expit(a))
        grads = {}
        if self.variant == "np":
            s = softmax(self.params["Z"], axis=1)
            abar = np.sum(mbar_b * s, axis=(1, 2))
            grads["Z"] = softmax_backward(s, alpha[:, None, None] * mbar_b, axis=1)
        else:
            beta = softmax(self.params["beta_logit"], axis=-1)
            proj = np.einsum("blk,mlk->bm", mbar_b, self.templates)
            abar = np.sum(proj * beta, axis=1)
            grads["beta_logit"] = softmax_backward(beta, alpha[:, None] * proj, axis=-1)
        grads["alpha_logit"] = abar * dalpha
        return grads

    def state(self) -> dict:
        """Arrays describing the model (for checkpoints)."""
        out = {k: np.asarray(v) for k, v in self.params.items()}
        out["block"] = self.block
        if self.templates is not None:
            out["templates"] = self.templates
        return out


def _init_common(n_blocks, alpha, n_kappa):
    return {
        "alpha_logit": np.full(n_blocks, float(logit_for_alpha(alpha))),
        "kappa": np.ones(n_kappa),
        "log_gain": np.zeros(()),
    }


def _blocks(n_pat, block):
    if block is None:
        return np.arange(n_pat)
    block = np.asarray(block, dtype=np.int64)
    _, inv = np.unique(block, return_inverse=True)
    return inv.astype(np.int64)


def init_np(n_pat: int, grid: DirectionGrid, alpha: float = 0.5, block=None,
            n_kappa: int = N_DIRECTIVITY) -> MaterialModel:
    """Nonparametric model: uniform lossless matrices, ``alpha`` everywhere."""
    block = _blocks(n_pat, block)
    nb = int(block.max()) + 1 if block.size else 0
    params = _init_common(nb, alpha, n_kappa)
    params["Z"] = np.zeros((nb, grid.n_dir, grid.n_dir))
    return MaterialModel("np", grid.n_dir, block, params)


def init_p(n_pat: int, grid: DirectionGrid, components="all", alpha: float = 0.5,
           block=None, n_kappa: int = N_DIRECTIVITY) -> MaterialModel:
    """Parametric model over fixed templates with uniform weights."""
    names = resolve_components(components)
    mats = bsdf_material_matrices(grid)
    templates = np.stack([mats[n] for n in names])
    block = _blocks(n_pat, block)
    nb = int(block.max()) + 1 if block.size else 0
    params = _init_common(nb, alpha, n_kappa)
    params["beta_logit"] = np.zeros((nb, len(names)))
    return MaterialModel("p", grid.n_dir, block, params, names, templates)


def model_from_state(variant: str, state: dict, components=()) -> MaterialModel:
    params = {k: np.array(state[k], dtype=np.float64)
              for k in ("alpha_logit", "Z", "beta_logit", "kappa", "log_gain") if k in state}
    params["log_gain"] = params["log_gain"].reshape(())
    templates = state.get("templates")
    n_dir = int(templates.shape[-1]) if templates is not None else int(params["Z"].shape[-1])
    return MaterialModel(variant, n_dir, np.asarray(state["block"], dtype=np.int64), params,
                         tuple(components), None if templates is None else np.array(templates))
