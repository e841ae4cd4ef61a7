"""Host-side evaluator with the same operation order as the lowered program.

Elementwise fp32 arithmetic uses numpy float32 (IEEE single, round to
nearest even); fp16 packing uses ``astype(float16)``.  Only the operations
numpy lacks (fused multiply-add, exp2, reciprocal, reciprocal square root)
call the shared bit-level helpers.
"""
from dataclasses import dataclass, field

import numpy as np

from ..isa import fp
from ..isa.encoding import OperatorTag
from .config import MlpKind, NormKind
from .lower import EPS, constants

F32 = np.float32


def _bits(x):
    return int(F32(x).view(np.uint32))


def _val(b):
    return np.uint32(b).view(F32)


def ffma(a, b, c):
    return _val(fp.ffma(_bits(a), _bits(b), _bits(c)))


def _unary(fn, x):
    x = np.asarray(x, F32)
    out = np.array([fn(int(b)) for b in x.view(np.uint32).ravel()], np.uint32)
    return out.view(F32).reshape(x.shape)


def ex2(x):
    return _unary(fp.ex2, x)


def rcp(x):
    return _unary(fp.rcp, x)


def rsq(x):
    return _unary(fp.rsq, x)


def fnv1a(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass
class ReferenceResult:
    tokens: list
    logits: list                        # one float32[VS] per head evaluation
    activations: list = field(default_factory=list)   # (OperatorTag, bytes)

    @property
    def digests(self):
        return [fnv1a(b) for _, b in self.activations]


class _Forward:
    def __init__(self, model, prompt, gen_steps):
        self.m = model
        self.cfg = model.config
        self.P = len(prompt)
        self.G = gen_steps
        self.T = np.zeros(self.P + gen_steps, np.int32)
        self.T[:self.P] = prompt
        c = constants(self.cfg)
        self.inv_hs = _val(c["inv_hs"])
        self.eps = F32(EPS)
        self.scale = _val(c["scale"])
        self.log2e = _val(c["log2e"])
        self.gelu_k = _val(c["gelu_k"])
        self.neg_log2e = _val(c["neg_log2e"])
        self.w16 = {}

    # -- building blocks ---------------------------------------------------

    def half(self, key, w):
        if key not in self.w16:
            self.w16[key] = w.astype(np.float16).astype(F32)
        return self.w16[key]

    def gemm(self, x, key, w):
        x16 = np.asarray(x, F32).astype(np.float16).astype(F32)
        w16 = self.half(key, w)
        acc = np.zeros(w.shape[0], F32)
        for k in range(x.shape[0] // 2):
            p1 = x16[2 * k] * w16[:, 2 * k]
            p2 = x16[2 * k + 1] * w16[:, 2 * k + 1]
            acc = (p1 + p2) + acc
        return acc

    def sigmoid_mul(self, acc, k):
        t = ex2(acc * k)
        return acc * rcp(t + F32(1.0))

    def norm(self, x, g, b):
        n = x.shape[0]
        if self.cfg.norm_kind is NormKind.LAYERNORM_PRE_POST:
            s = F32(0.0)
            for i in range(n):
                s = s + x[i]
            nm = (s * self.inv_hs) * F32(-1.0)
            acc = F32(0.0)
            for i in range(n):
                d = x[i] + nm
                acc = ffma(d, d, acc)
            r = rsq(acc * self.inv_hs + self.eps)
            y = (x + nm) * r
            return np.array([ffma(y[i], g[i], b[i]) for i in range(n)], F32)
        acc = F32(0.0)
        for i in range(n):
            acc = ffma(x[i], x[i], acc)
        r = rsq(acc * self.inv_hs + self.eps)
        return (x * r) * g

    def attention(self, l, h, pos, kv):
        cfg, lw = self.cfg, self.m.layers[l]
        dh = cfg.head_dim
        q = self.gemm(h, ("wq", l), lw.wq)
        kv[l][0][pos] = self.gemm(h, ("wk", l), lw.wk)
        kv[l][1][pos] = self.gemm(h, ("wv", l), lw.wv)
        K, V = kv[l][0][:pos + 1], kv[l][1][:pos + 1]
        out = np.zeros(cfg.HS, F32)
        for hd in range(cfg.AH):
            sl = slice(hd * dh, (hd + 1) * dh)
            s = np.zeros(pos + 1, F32)
            for j in range(pos + 1):
                acc = F32(0.0)
                for d in range(dh):
                    acc = ffma(q[sl][d], K[j, sl][d], acc)
                s[j] = acc * self.scale
            m = s[0]
            for j in range(pos + 1):
                if s[j] > m:
                    m = s[j]
            e = ex2((s + m * F32(-1.0)) * self.log2e)
            tot = F32(0.0)
            for j in range(pos + 1):
                tot = tot + e[j]
            p = e * rcp(tot)
            for d in range(dh):
                acc = F32(0.0)
                for j in range(pos + 1):
                    acc = ffma(p[j], V[j, sl][d], acc)
                out[hd * dh + d] = acc
        return self.gemm(out, ("wo", l), lw.wo)

    def mlp(self, l, h):
        lw = self.m.layers[l]
        if self.cfg.mlp_kind is MlpKind.GELU:
            u = self.sigmoid_mul(self.gemm(h, ("w1", l), lw.w1), self.gelu_k)
        else:
            gate = self.sigmoid_mul(self.gemm(h, ("w1", l), lw.w1), self.neg_log2e)
            u = gate * self.gemm(h, ("w3", l), lw.w3)
        return self.gemm(u, ("w2", l), lw.w2)

    # -- one position ------------------------------------------------------

    def position(self, pos, kv, record):
        cfg, m = self.cfg, self.m
        acts = []

        def snap(kind, layer, arr):
            acts.append((OperatorTag(kind, layer), np.asarray(arr, F32).tobytes()))

        tok = int(self.T[pos])
        x = m.tok_emb[tok] + m.pos_emb[pos]
        snap("EMBEDDING", None, x)
        for l, lw in enumerate(m.layers):
            nrm = lw.norms
            if cfg.norm_kind is NormKind.LAYERNORM_PRE_POST:
                h = self.norm(x, *nrm["attn_pre"]); snap("NORM", l, h)
                a = self.attention(l, h, pos, kv); snap("ATTENTION", l, a)
                h = self.norm(a, *nrm["attn_post"]); snap("NORM", l, h)
                x = x + h; snap("OTHER", l, x)
                h = self.norm(x, *nrm["mlp_pre"]); snap("NORM", l, h)
                a = self.mlp(l, h); snap("MLP", l, a)
                h = self.norm(a, *nrm["mlp_post"]); snap("NORM", l, h)
                x = x + h; snap("OTHER", l, x)
            else:
                h = self.norm(x, *nrm["attn_pre"]); snap("NORM", l, h)
                a = self.attention(l, h, pos, kv); snap("ATTENTION", l, a)
                x = x + a; snap("OTHER", l, x)
                h = self.norm(x, *nrm["mlp_pre"]); snap("NORM", l, h)
                a = self.mlp(l, h); snap("MLP", l, a)
                x = x + a; snap("OTHER", l, x)
        h = self.norm(x, *m.final_norm)
        snap("NORM", None, h)
        logits = None
        if pos >= self.P - 1:
            logits = self.gemm(h, ("lm", None), m.lm_head)
            best, idx = logits[0], 0
            for j in range(cfg.VS):
                if logits[j] > best:
                    best, idx = logits[j], j
            if pos + 1 < self.P + self.G:
                self.T[pos + 1] = idx
            acts.append((OperatorTag("LM_HEAD", None), logits.tobytes() + self.T.tobytes()))
        if record is not None:
            record.activations.extend(acts)
            if logits is not None:
                record.logits.append(logits)

    def new_cache(self):
        shape = (self.cfg.CL, self.cfg.HS)
        return [(np.zeros(shape, F32), np.zeros(shape, F32)) for _ in range(self.cfg.L)]


def reference_forward(model, prompt, gen_steps, use_cache=True):
    """Greedy decoding on the host.  ``use_cache=False`` recomputes every prefix from scratch."""
    cfg = model.config
    prompt = [int(t) for t in prompt]
    cfg.check_sequence(prompt, gen_steps)
    fw = _Forward(model, prompt, gen_steps)
    npos = len(prompt) + gen_steps - 1 if gen_steps > 0 else len(prompt)
    res = ReferenceResult(tokens=[], logits=[])
    kv = fw.new_cache()
    for pos in range(npos):
        if use_cache:
            fw.position(pos, kv, res)
        else:
            fresh = fw.new_cache()
            for p in range(pos):
                fw.position(p, fresh, None)
            fw.position(pos, fresh, res)
    res.tokens = [int(t) for t in fw.T[len(prompt):]]
    return res
