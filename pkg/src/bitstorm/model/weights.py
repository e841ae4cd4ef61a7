"""Seeded weight generation.

Draw order (all from one ``numpy.random.Generator(PCG64(seed))``, float64
uniform on [-0.5, 0.5), multiplied by 1/sqrt(HS), then cast to float32):

    tok_emb[VS, HS], pos_emb[CL, HS],
    per layer: wq, wk, wv, wo [HS, HS], w1 [F, HS], w3 [F, HS] (gated MLP only), w2 [HS, F],
    lm_head [VS, HS].

Matrices are stored (out, in).  Norm gains start at 1 and biases at 0.
"""
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .config import MlpKind, ModelConfig, NormKind


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray = None
    norms: dict = field(default_factory=dict)     # name -> (gain, bias or None)


@dataclass
class ModelWeights:
    config: ModelConfig
    tok_emb: np.ndarray
    pos_emb: np.ndarray
    layers: list
    lm_head: np.ndarray
    final_norm: tuple

    def arrays(self):
        """Every tensor in a fixed order (used for digests and equality)."""
        out = [self.tok_emb, self.pos_emb]
        for lw in self.layers:
            out += [lw.wq, lw.wk, lw.wv, lw.wo, lw.w1, lw.w2]
            if lw.w3 is not None:
                out.append(lw.w3)
            for name in sorted(lw.norms):
                g, b = lw.norms[name]
                out.append(g)
                if b is not None:
                    out.append(b)
        out.append(self.lm_head)
        g, b = self.final_norm
        out.append(g)
        if b is not None:
            out.append(b)
        return out

    def digest(self):
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, np.float32).tobytes())
        return h.hexdigest()


def layer_norm_names(config):
    if config.norm_kind is NormKind.LAYERNORM_PRE_POST:
        return ("attn_pre", "attn_post", "mlp_pre", "mlp_post")
    return ("attn_pre", "mlp_pre")


def _norm_params(config):
    g = np.ones(config.HS, np.float32)
    b = np.zeros(config.HS, np.float32) if config.norm_kind is NormKind.LAYERNORM_PRE_POST else None
    return g, b


def build_model(config: ModelConfig) -> ModelWeights:
    config.validate()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    scale = 1.0 / np.sqrt(config.HS)

    def draw(*shape):
        return (rng.uniform(-0.5, 0.5, size=shape) * scale).astype(np.float32)

    HS, F = config.HS, config.ffn
    tok = draw(config.VS, HS)
    pos = draw(config.CL, HS)
    layers = []
    for _ in range(config.L):
        wq, wk, wv, wo = draw(HS, HS), draw(HS, HS), draw(HS, HS), draw(HS, HS)
        w1 = draw(F, HS)
        w3 = draw(F, HS) if config.mlp_kind is MlpKind.SILU_GATED else None
        w2 = draw(HS, F)
        norms = {n: _norm_params(config) for n in layer_norm_names(config)}
        layers.append(LayerWeights(wq, wk, wv, wo, w1, w2, w3, norms))
    lm = draw(config.VS, HS)
    return ModelWeights(config, tok, pos, layers, lm, _norm_params(config))
