"""Lowering of greedy decoding to an isa-core Program.

Arithmetic contract (mirrored exactly by :mod:`.reference`):

* GEMM: inputs are packed to fp16 pairs (F2H2), weights are stored as fp16
  pairs, and each output accumulates ``acc = (x.lo*w.lo + x.hi*w.hi) + acc``
  over ascending pairs in fp32 (HMMA_STEP), starting from +0.
* LayerNorm: ``mean = sum*c`` (sum ascending, c = fp32(1/HS)); ``d = x + (-mean)``;
  ``var = ffma-chain(d*d)*c``; ``r = rsq(var + eps)``; ``y = ffma(d*r, g, b)``.
* RMSNorm: ``r = rsq(ffma-chain(x*x)*c + eps)``; ``y = (x*r)*g``.
* Attention per head: ``s_j = ffma-chain(q.k_j)*scale``; first-max ``m``;
  ``e_j = ex2((s_j + (-m)) * log2e)``; ascending sum; ``p_j = e_j * rcp(sum)``;
  ``out_d = ffma-chain_j(p_j * v_j[d])``.
* GELU epilogue ``x * rcp(1 + ex2(x * fp32(-1.702*log2e)))``; SiLU gate uses
  ``-log2e``; the up projection multiplies ``gate * up``.
* Residual ``x = x + h``; argmax is a strict greater-than scan (first max wins).
"""
from dataclasses import dataclass

import numpy as np

from ..isa.encoding import RZ, Const, Imm, OperatorTag, Pred, Reg
from ..isa.fp import LOG2E_F32, round32
from ..isa.opcodes import Cmp, Opcode
from ..isa.program import Assembler, Region, assemble
from .config import MlpKind, NormKind
from .weights import ModelWeights

MAX_INSTRUCTIONS = 1 << 16
MAX_MEMORY = 1 << 24
EPS = 1e-5


class ProgramTooLarge(ValueError):
    pass


def f32bits(x):
    return int(np.float32(x).view(np.uint32))


def constants(config):
    """Constant-bank contents, by name, as fp32 bit patterns."""
    return {
        "eps": f32bits(EPS),
        "scale": round32(1.0 / np.sqrt(config.head_dim)),
        "inv_hs": round32(1.0 / config.HS),
        "log2e": LOG2E_F32,
        "neg_one": f32bits(-1.0),
        "gelu_k": round32(-1.702 * 1.4426950408889634),
        "neg_log2e": round32(-1.4426950408889634),
        "one": f32bits(1.0),
    }


CONST_ORDER = ("eps", "scale", "inv_hs", "log2e", "neg_one", "gelu_k", "neg_log2e", "one")


def cref(name):
    return Const(4 * CONST_ORDER.index(name))


class Layout:
    def __init__(self):
        self.regions = {}
        self.cursor = 0

    def alloc(self, name, nbytes):
        nbytes = (nbytes + 3) & ~3
        self.regions[name] = Region(self.cursor, nbytes)
        self.cursor += nbytes
        return self.regions[name]

    def __getitem__(self, name):
        return self.regions[name].offset


def packed(w):
    return np.ascontiguousarray(w, np.float32).astype(np.float16).tobytes()


@dataclass
class Sequence:
    prompt: tuple
    gen_steps: int

    @property
    def P(self):
        return len(self.prompt)

    @property
    def positions(self):
        return self.P + self.gen_steps - 1 if self.gen_steps > 0 else self.P


def build_layout(model: ModelWeights, seq: Sequence):
    cfg = model.config
    HS, F, VS, CL = cfg.HS, cfg.ffn, cfg.VS, cfg.CL
    lay = Layout()
    init = {}

    def put(name, data):
        lay.alloc(name, len(data))
        init[name] = data

    put("tok_emb", model.tok_emb.tobytes())
    put("pos_emb", model.pos_emb.tobytes())
    for l, lw in enumerate(model.layers):
        for key in ("wq", "wk", "wv", "wo", "w1", "w3", "w2"):
            w = getattr(lw, key)
            if w is not None:
                put(f"{key}.{l}", packed(w))
        for nm, (g, b) in lw.norms.items():
            put(f"{nm}.g.{l}", g.tobytes())
            if b is not None:
                put(f"{nm}.b.{l}", b.tobytes())
    put("lm_head", packed(model.lm_head))
    g, b = model.final_norm
    put("final.g", g.tobytes())
    if b is not None:
        put("final.b", b.tobytes())
    writable = lay.cursor
    for name, n in (("X", HS), ("H", HS), ("A", HS), ("Q", HS), ("ATT", HS), ("GB", F), ("MB", F)):
        lay.alloc(name, 4 * n)
    for l in range(cfg.L):
        lay.alloc(f"kc.{l}", 4 * CL * HS)
        lay.alloc(f"vc.{l}", 4 * CL * HS)
    lay.alloc("logits", 4 * VS)
    total = seq.P + seq.gen_steps
    toks = np.zeros(total, np.int32)
    toks[:seq.P] = seq.prompt
    put("T", toks.tobytes())
    lay.regions["output"] = Region(lay["T"] + 4 * seq.P, 4 * seq.gen_steps)
    lay.regions["head_out"] = Region(lay["logits"], 4 * VS + 4 * total)
    mem = bytearray(lay.cursor)
    for name, data in init.items():
        off = lay[name]
        mem[off:off + len(data)] = data
    return lay, bytes(mem), writable


# registers
POS, TOK, ADDR, T3, T4, T5, V0, V1, V2, ROWB, I, J, ACC, WP, OP, S0 = range(16)
PACK0 = 16
S1, LIM, LIMJ = 48, 49, 50


class Lowerer:
    def __init__(self, model, seq, lay):
        self.m = model
        self.cfg = model.config
        self.seq = seq
        self.lay = lay
        self.a = Assembler()

    def tag(self, kind, layer=None):
        self.a.tag = OperatorTag(kind, layer)

    # -- small helpers ----------------------------------------------------

    def iadd(self, d, x, y):
        self.a.op("IADD3", d, Reg(x), y if isinstance(y, (Reg, Imm)) else Reg(y), Imm(0))

    def loop(self, ctr, limit, body, step=4, start=0):
        """Counted loop over byte offsets: ctr = start; do body; ctr += step; while ctr < limit."""
        a = self.a
        a.op("MOV", ctr, start)
        top = a.label("loop")
        a.bind(top)
        body()
        self.iadd(ctr, ctr, Imm(step))
        a.setp("ISETP", 0, Reg(ctr), limit if not isinstance(limit, int) else Imm(limit), Cmp.LT)
        a.bra(top, guard=0)

    def snapshot(self, name):
        self.a.snapshot(self.lay.regions[name])

    def gsnap_region(self, region):
        self.a.snapshot(region)

    # -- operators ----------------------------------------------------------

    def embedding(self):
        a, HS, lay = self.a, self.cfg.HS, self.lay
        self.tag("EMBEDDING")
        a.op("LEA", ADDR, Reg(POS), Reg(RZ), shift=2)
        a.ldg(TOK, ADDR, lay["T"])
        a.op("IMAD", T3, Reg(TOK), Imm(4 * HS), Imm(0))
        a.op("IMAD", T4, Reg(POS), Imm(4 * HS), Imm(0))

        def body():
            self.iadd(T5, I, Reg(T3))
            a.ldg(V0, T5, lay["tok_emb"])
            self.iadd(T5, I, Reg(T4))
            a.ldg(V1, T5, lay["pos_emb"])
            a.op("FADD", V0, Reg(V0), Reg(V1))
            a.stg(I, V0, lay["X"])
        self.loop(I, 4 * HS, body)
        self.snapshot("X")

    def norm(self, src, dst, gname, bname, layer):
        a, HS, lay = self.a, self.cfg.HS, self.lay
        self.tag("NORM", layer)
        s, d, g = lay[src], lay[dst], lay[gname]
        if self.cfg.norm_kind is NormKind.LAYERNORM_PRE_POST:
            b = lay[bname]
            a.op("MOV", ACC, 0)
            self.loop(I, 4 * HS, lambda: (a.ldg(V0, I, s), a.op("FADD", ACC, Reg(ACC), Reg(V0))))
            a.op("FMUL", S0, Reg(ACC), cref("inv_hs"))
            a.op("FMUL", S1, Reg(S0), cref("neg_one"))
            a.op("MOV", ACC, 0)

            def var_body():
                a.ldg(V0, I, s)
                a.op("FADD", V0, Reg(V0), Reg(S1))
                a.op("FFMA", ACC, Reg(V0), Reg(V0), Reg(ACC))
            self.loop(I, 4 * HS, var_body)
            a.op("FMUL", ACC, Reg(ACC), cref("inv_hs"))
            a.op("FADD", ACC, Reg(ACC), cref("eps"))
            a.op("MUFU_RSQ", S0, Reg(ACC))

            def out_body():
                a.ldg(V0, I, s)
                a.op("FADD", V0, Reg(V0), Reg(S1))
                a.op("FMUL", V0, Reg(V0), Reg(S0))
                a.ldg(V1, I, g)
                a.ldg(V2, I, b)
                a.op("FFMA", V0, Reg(V0), Reg(V1), Reg(V2))
                a.stg(I, V0, d)
            self.loop(I, 4 * HS, out_body)
        else:
            a.op("MOV", ACC, 0)
            self.loop(I, 4 * HS, lambda: (a.ldg(V0, I, s), a.op("FFMA", ACC, Reg(V0), Reg(V0), Reg(ACC))))
            a.op("FMUL", ACC, Reg(ACC), cref("inv_hs"))
            a.op("FADD", ACC, Reg(ACC), cref("eps"))
            a.op("MUFU_RSQ", S0, Reg(ACC))

            def out_body():
                a.ldg(V0, I, s)
                a.op("FMUL", V0, Reg(V0), Reg(S0))
                a.ldg(V1, I, g)
                a.op("FMUL", V0, Reg(V0), Reg(V1))
                a.stg(I, V0, d)
            self.loop(I, 4 * HS, out_body)
        self.snapshot(dst)

    def gemm(self, src, n, wname, dst, m, epilogue=None, row_base=None):
        """dst[o] = epilogue(sum_k W[o,k] x[k]) for o in 0..m-1 (packed fp16 pairs)."""
        a, lay = self.a, self.lay
        s = lay[src]
        for k in range(n // 2):
            a.op("LDG", V0, Reg(RZ), offset=s + 8 * k)
            a.op("LDG", V1, Reg(RZ), offset=s + 8 * k + 4)
            a.op("F2H2", PACK0 + k, Reg(V0), Reg(V1))
        a.op("MOV", WP, lay[wname])
        if row_base is None:
            a.op("MOV", OP, 0)
            limit = Imm(4 * m)
        else:
            a.op("MOV", OP, Reg(row_base))
            self.iadd(LIM, row_base, Imm(4 * m))
            limit = Reg(LIM)
        top = a.label("gemm")
        a.bind(top)
        a.op("MOV", ACC, 0)
        for k in range(n // 2):
            a.ldg(V0, WP, 4 * k)
            a.op("HMMA_STEP", ACC, Reg(PACK0 + k), Reg(V0), Reg(ACC))
        if epilogue is not None:
            epilogue()
        a.stg(OP, ACC, lay[dst])
        self.iadd(WP, WP, Imm(2 * n))
        self.iadd(OP, OP, Imm(4))
        a.setp("ISETP", 0, Reg(OP), limit, Cmp.LT)
        a.bra(top, guard=0)

    def _sigmoid_mul(self, kname):
        a = self.a
        a.op("FMUL", V1, Reg(ACC), cref(kname))
        a.op("MUFU_EX2", V1, Reg(V1))
        a.op("FADD", V1, Reg(V1), cref("one"))
        a.op("MUFU_RCP", V1, Reg(V1))
        a.op("FMUL", ACC, Reg(ACC), Reg(V1))

    def attention(self, l):
        a, cfg, lay = self.a, self.cfg, self.lay
        HS, dh = cfg.HS, cfg.head_dim
        self.tag("ATTENTION", l)
        a.op("IMAD", ROWB, Reg(POS), Imm(4 * HS), Imm(0))
        self.gemm("H", HS, f"wq.{l}", "Q", HS)
        self.gemm("H", HS, f"wk.{l}", f"kc.{l}", HS, row_base=ROWB)
        self.gemm("H", HS, f"wv.{l}", f"vc.{l}", HS, row_base=ROWB)
        self.iadd(LIMJ, POS, Imm(1))
        a.op("LEA", LIMJ, Reg(LIMJ), Reg(RZ), shift=2)
        a.op("LDC", S1, Reg(RZ), offset=4 * CONST_ORDER.index("scale"))
        jlim = Reg(LIMJ)
        for hd in range(cfg.AH):
            qoff = lay["Q"] + 4 * hd * dh
            koff = 4 * hd * dh
            kbase = lay[f"kc.{l}"] + koff
            vbase = lay[f"vc.{l}"] + koff
            a.op("MOV", WP, kbase)

            def score():
                a.op("MOV", ACC, 0)
                for d in range(dh):
                    a.op("LDG", V0, Reg(RZ), offset=qoff + 4 * d)
                    a.ldg(V1, WP, 4 * d)
                    a.op("FFMA", ACC, Reg(V0), Reg(V1), Reg(ACC))
                a.op("FMUL", ACC, Reg(ACC), Reg(S1))
                a.op("STS", None, Reg(J), Reg(ACC), offset=0)
                self.iadd(WP, WP, Imm(4 * HS))
            self.loop(J, jlim, score)
            a.op("LDS", S0, Reg(RZ), offset=0)

            def smax():
                a.op("LDS", V0, Reg(J), offset=0)
                a.setp("FSETP", 1, Reg(V0), Reg(S0), Cmp.GT)
                a.op("SEL", S0, Reg(V0), Reg(S0), Pred(1))
            self.loop(J, jlim, smax)
            a.op("FMUL", V2, Reg(S0), cref("neg_one"))
            a.op("MOV", ACC, 0)

            def sexp():
                a.op("LDS", V0, Reg(J), offset=0)
                a.op("FADD", V0, Reg(V0), Reg(V2))
                a.op("FMUL", V0, Reg(V0), cref("log2e"))
                a.op("MUFU_EX2", V0, Reg(V0))
                a.op("STS", None, Reg(J), Reg(V0), offset=0)
                a.op("FADD", ACC, Reg(ACC), Reg(V0))
            self.loop(J, jlim, sexp)
            a.op("MUFU_RCP", S0, Reg(ACC))

            def snorm():
                a.op("LDS", V0, Reg(J), offset=0)
                a.op("FMUL", V0, Reg(V0), Reg(S0))
                a.op("STS", None, Reg(J), Reg(V0), offset=0)
            self.loop(J, jlim, snorm)

            def wsum():
                a.op("MOV", ACC, 0)
                self.iadd(WP, I, Imm(vbase))

                def inner():
                    a.op("LDS", V0, Reg(J), offset=0)
                    a.ldg(V1, WP, 0)
                    a.op("FFMA", ACC, Reg(V0), Reg(V1), Reg(ACC))
                    self.iadd(WP, WP, Imm(4 * HS))
                self.loop(J, jlim, inner)
                a.stg(I, ACC, lay["ATT"] + 4 * hd * dh)
            self.loop(I, 4 * dh, wsum)
        self.gemm("ATT", HS, f"wo.{l}", "A", HS)
        self.snapshot("A")

    def mlp(self, l):
        a, cfg = self.a, self.cfg
        HS, F = cfg.HS, cfg.ffn
        self.tag("MLP", l)
        if cfg.mlp_kind is MlpKind.GELU:
            self.gemm("H", HS, f"w1.{l}", "MB", F, epilogue=lambda: self._sigmoid_mul("gelu_k"))
        else:
            self.gemm("H", HS, f"w1.{l}", "GB", F, epilogue=lambda: self._sigmoid_mul("neg_log2e"))

            def gate():
                a.ldg(V1, OP, self.lay["GB"])
                a.op("FMUL", ACC, Reg(V1), Reg(ACC))
            self.gemm("H", HS, f"w3.{l}", "MB", F, epilogue=gate)
        self.gemm("MB", F, f"w2.{l}", "A", HS)
        self.snapshot("A")

    def residual(self, src, l):
        a, HS, lay = self.a, self.cfg.HS, self.lay
        self.tag("OTHER", l)

        def body():
            a.ldg(V0, I, lay["X"])
            a.ldg(V1, I, lay[src])
            a.op("FADD", V0, Reg(V0), Reg(V1))
            a.stg(I, V0, lay["X"])
        self.loop(I, 4 * HS, body)
        self.snapshot("X")

    def lm_head(self):
        a, cfg, lay, seq = self.a, self.cfg, self.lay, self.seq
        self.tag("LM_HEAD")
        skip = a.label("skip_head")
        a.setp("ISETP", 2, Reg(POS), Imm(seq.P - 1), Cmp.GE)
        a.bra(skip, guard=2, neg=True)
        self.gemm("H", cfg.HS, "lm_head", "logits", cfg.VS)
        a.op("LDG", S0, Reg(RZ), offset=lay["logits"])
        a.op("MOV", TOK, 0)

        def scan():
            a.ldg(V0, J, lay["logits"])
            a.setp("FSETP", 1, Reg(V0), Reg(S0), Cmp.GT)
            a.op("SEL", S0, Reg(V0), Reg(S0), Pred(1))
            a.op("SHF", V1, Reg(J), Reg(RZ), shift=2)
            a.op("SEL", TOK, Reg(V1), Reg(TOK), Pred(1))
        self.loop(J, 4 * cfg.VS, scan)
        self.iadd(ADDR, POS, Imm(1))
        a.setp("ISETP", 3, Reg(ADDR), Imm(seq.P + seq.gen_steps), Cmp.LT)
        a.op("LEA", ADDR, Reg(ADDR), Reg(RZ), shift=2)
        a.emit(Opcode.STG, None, Reg(ADDR), Reg(TOK), offset=lay["T"], guard=3)
        self.gsnap_region(lay.regions["head_out"])
        a.bind(skip)

    def program(self):
        a, cfg = self.a, self.cfg
        self.tag("OTHER")
        a.op("MOV", POS, 0)
        top = a.label("position")
        a.bind(top)
        self.embedding()
        for l in range(cfg.L):
            if cfg.norm_kind is NormKind.LAYERNORM_PRE_POST:
                self.norm("X", "H", f"attn_pre.g.{l}", f"attn_pre.b.{l}", l)
                self.attention(l)
                self.norm("A", "H", f"attn_post.g.{l}", f"attn_post.b.{l}", l)
                self.residual("H", l)
                self.norm("X", "H", f"mlp_pre.g.{l}", f"mlp_pre.b.{l}", l)
                self.mlp(l)
                self.norm("A", "H", f"mlp_post.g.{l}", f"mlp_post.b.{l}", l)
                self.residual("H", l)
            else:
                self.norm("X", "H", f"attn_pre.g.{l}", None, l)
                self.attention(l)
                self.residual("A", l)
                self.norm("X", "H", f"mlp_pre.g.{l}", None, l)
                self.mlp(l)
                self.residual("A", l)
        self.norm("X", "H", "final.g", "final.b", None)
        self.lm_head()
        self.tag("OTHER")
        self.iadd(POS, POS, Imm(1))
        a.setp("ISETP", 0, Reg(POS), Imm(self.seq.positions), Cmp.LT)
        a.bra(top, guard=0)
        a.op("EXIT", None)
        return a.finish()


def lower(model: ModelWeights, prompt, gen_steps: int):
    cfg = model.config
    cfg.validate()
    prompt = tuple(int(t) for t in prompt)
    cfg.check_sequence(prompt, gen_steps)
    seq = Sequence(prompt, gen_steps)
    lay, mem, writable = build_layout(model, seq)
    if len(mem) > MAX_MEMORY:
        raise ProgramTooLarge(f"global memory {len(mem)} bytes exceeds {MAX_MEMORY}")
    code = Lowerer(model, seq, lay).program()
    if len(code) > MAX_INSTRUCTIONS:
        raise ProgramTooLarge(f"{len(code)} instructions exceed {MAX_INSTRUCTIONS}")
    consts = constants(cfg)
    bank = np.array([consts[k] for k in CONST_ORDER], np.uint32).tobytes()
    meta = {"model": cfg.to_dict(), "prompt": list(prompt), "gen_steps": gen_steps,
            "weights_digest": model.digest()}
    return assemble(code, mem, smem_size=4 * cfg.CL, const_bank=bank,
                    regions=dict(lay.regions), writable_start=writable,
                    output="output", logits="logits", meta=meta)
