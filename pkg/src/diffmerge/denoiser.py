"""The noise-prediction network: an MLP over flat data vectors.

Each hidden block consumes the previous activation concatenated with a
shared (learned) projection of sinusoidal timestep features.  Hidden
widths play the role of channels; an optional square projection matrix
per hidden site applies a channel-wise linear map f -> W f and is
initialized to the exact identity so that enabling it changes nothing
until training moves it.

Parameter naming is part of the checkpoint contract:
``blockK.weight``/``blockK.bias`` for the K-th affine layer (the last K is
the output layer), ``projK.W`` for the projection at hidden site K, and
``time_embed.weight``/``time_embed.bias`` for the timestep feature map.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Array, Graph, Node, as_tensor, sigmoid
from .errors import ConfigurationError, ContractError, DimensionError
from .params import ParamSet


@dataclass(frozen=True)
class DenoiserConfig:
    data_dim: int = 2
    hidden_dims: tuple[int, ...] = (128, 128, 128)
    time_embed_dim: int = 32
    use_projection: bool = False
    projection_sites: tuple[int, ...] | None = None  # None = every hidden layer

    def __post_init__(self):
        if self.data_dim < 1 or self.time_embed_dim < 1 or not self.hidden_dims:
            raise ConfigurationError("all denoiser dimensions must be positive")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigurationError("hidden widths must be positive")
        if self.projection_sites is not None:
            bad = [s for s in self.projection_sites if not 0 <= s < len(self.hidden_dims)]
            if bad:
                raise ConfigurationError(f"projection sites out of range: {bad}")

    @property
    def sites(self) -> tuple[int, ...]:
        if not self.use_projection:
            return ()
        if self.projection_sites is None:
            return tuple(range(len(self.hidden_dims)))
        return tuple(sorted(self.projection_sites))


def with_projections(config: DenoiserConfig) -> DenoiserConfig:
    """The same architecture with channel projections enabled."""
    return replace(config, use_projection=True)


def sinusoidal_features(t, dim: int) -> Array:
    """Sinusoidal features of integer timesteps; shape (len(t), dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = max(dim // 2, 1)
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    feat = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if feat.shape[1] > dim:
        feat = feat[:, :dim]
    elif feat.shape[1] < dim:
        feat = np.concatenate([feat, np.zeros((feat.shape[0], dim - feat.shape[1]))], axis=1)
    return feat


def _layer_shapes(config: DenoiserConfig) -> list[tuple[str, tuple[int, ...]]]:
    te = config.time_embed_dim
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("time_embed.weight", (te, te)),
        ("time_embed.bias", (1, te)),
    ]
    in_dim = config.data_dim
    for k, width in enumerate(config.hidden_dims):
        shapes.append((f"block{k}.weight", (in_dim + te, width)))
        shapes.append((f"block{k}.bias", (1, width)))
        in_dim = width
    k_out = len(config.hidden_dims)
    shapes.append((f"block{k_out}.weight", (in_dim, config.data_dim)))
    shapes.append((f"block{k_out}.bias", (1, config.data_dim)))
    for s in config.sites:
        c = config.hidden_dims[s]
        shapes.append((f"proj{s}.W", (c, c)))
    return shapes


def expected_param_names(config: DenoiserConfig) -> list[str]:
    return sorted(name for name, _ in _layer_shapes(config))


def init_params(config: DenoiserConfig, seed: int) -> ParamSet:
    """Scaled-Gaussian weights, zero biases, exact-identity projections."""
    rng = np.random.default_rng(seed)
    entries = {}
    for name, shape in _layer_shapes(config):
        if name.endswith(".bias"):
            entries[name] = np.zeros(shape)
        elif name.startswith("proj"):
            entries[name] = np.eye(shape[0])
        else:
            fan_in = shape[0]
            entries[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
    return ParamSet(entries)


def _check_input(params: ParamSet, x_t: Array, t, config: DenoiserConfig):
    expected = expected_param_names(config)
    if params.names() != expected:
        raise DimensionError(
            "parameter names do not match the architecture; "
            f"missing={sorted(set(expected) - set(params.names()))} "
            f"unexpected={sorted(set(params.names()) - set(expected))}"
        )
    x_t = as_tensor(x_t)
    if x_t.ndim != 2 or x_t.shape[1] != config.data_dim:
        raise DimensionError(f"input must be (n, {config.data_dim}), got {x_t.shape}")
    t = np.atleast_1d(np.asarray(t))
    if t.size == 1:
        t = np.full(x_t.shape[0], t.ravel()[0])
    if t.shape != (x_t.shape[0],):
        raise DimensionError(f"t must be scalar or length {x_t.shape[0]}, got shape {t.shape}")
    return x_t, t


def denoiser_forward(params: ParamSet, x_t: Array, t, config: DenoiserConfig) -> Array:
    """Noise prediction; pure numpy, no gradient tape.

    ``t`` is a scalar timestep or a per-row integer array.  Kept in exact
    lockstep with :func:`denoiser_forward_graph` (tested to agree bitwise).
    """
    x_t, t = _check_input(params, x_t, t, config)
    feat = sinusoidal_features(t, config.time_embed_dim)
    e = feat @ params["time_embed.weight"] + params["time_embed.bias"]
    e = e * sigmoid(e)
    h = x_t
    for k in range(len(config.hidden_dims)):
        z = np.concatenate([h, e], axis=1) @ params[f"block{k}.weight"] + params[f"block{k}.bias"]
        h = z * sigmoid(z)
        if k in config.sites:
            h = h @ params[f"proj{k}.W"].T
    k_out = len(config.hidden_dims)
    return h @ params[f"block{k_out}.weight"] + params[f"block{k_out}.bias"]


def add_param_leaves(g: Graph, params: ParamSet) -> dict[str, Node]:
    """Register every parameter as a named leaf on ``g``."""
    return {name: g.leaf(arr, name=name) for name, arr in params.items()}


def denoiser_forward_graph(
    g: Graph, leaves: dict[str, Node], x_t: Array, t, config: DenoiserConfig
) -> Node:
    """Noise prediction recorded on graph ``g`` for backprop.

    ``leaves`` maps parameter names to graph leaves (see
    :func:`add_param_leaves`); ``x_t`` and ``t`` enter as constants.
    """
    expected = expected_param_names(config)
    if sorted(leaves) != expected:
        raise DimensionError(
            "parameter leaves do not match the architecture; "
            f"missing={sorted(set(expected) - set(leaves))} "
            f"unexpected={sorted(set(leaves) - set(expected))}"
        )
    x_t = as_tensor(x_t)
    if x_t.ndim != 2 or x_t.shape[1] != config.data_dim:
        raise DimensionError(f"input must be (n, {config.data_dim}), got {x_t.shape}")
    t = np.atleast_1d(np.asarray(t))
    if t.size == 1:
        t = np.full(x_t.shape[0], t.ravel()[0])
    n = x_t.shape[0]
    ones = g.leaf(np.ones((n, 1)))

    def affine(x: Node, name: str) -> Node:
        return x @ leaves[f"{name}.weight"] + ones @ leaves[f"{name}.bias"]

    feat = g.leaf(sinusoidal_features(t, config.time_embed_dim))
    e = g.silu(affine(feat, "time_embed"))
    h = g.leaf(x_t)
    for k in range(len(config.hidden_dims)):
        h = g.silu(affine(g.concat(h, e), f"block{k}"))
        if k in config.sites:
            # channel map W f per sample: rows h become h @ W^T
            h = h @ g.transpose(leaves[f"proj{k}.W"])
    return affine(h, f"block{len(config.hidden_dims)}")


def augment_with_projections(params_without: ParamSet, config: DenoiserConfig) -> ParamSet:
    """Insert exact-identity projection matrices into a projection-free model.

    The returned set drives ``config`` (which must enable projections) and
    produces outputs identical to the original model.
    """
    if not config.sites:
        raise ConfigurationError("config does not enable any projection sites")
    present = [f"proj{s}.W" for s in config.sites if f"proj{s}.W" in params_without]
    if present:
        raise ContractError(f"projections already present: {present}")
    base_names = expected_param_names(replace(config, use_projection=False))
    if params_without.names() != base_names:
        raise DimensionError(
            f"augment_with_projections: parameter names do not match the projection-free "
            f"architecture (got {len(params_without)} entries)"
        )
    entries = {name: arr.copy() for name, arr in params_without.items()}
    for s in config.sites:
        c = config.hidden_dims[s]
        entries[f"proj{s}.W"] = np.eye(c)
    return ParamSet(entries)


def projection_param_count(config: DenoiserConfig) -> int:
    return sum(config.hidden_dims[s] ** 2 for s in config.sites)


def projection_param_fraction(config: DenoiserConfig) -> float:
    """Fraction of all parameters held by the projection matrices."""
    total = sum(int(np.prod(shape)) for _, shape in _layer_shapes(config))
    return projection_param_count(config) / total
