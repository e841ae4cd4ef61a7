"""Compiled execution loop of the interpreter.

One routine, :func:`execute`, serves every use: golden runs (trace,
checkpoints, snapshot capture), injected trials (fault table, snapshot
comparison, convergence detection), taint-tracking replays and single
stepping for the Python-level hook API.  Behaviour is selected by the
``prm`` vector and by passing empty arrays for unused features.

``faults`` rows are ``(dyn, kind, bit_or_mask, reached)`` sorted by ``dyn``;
kind 0 flips the written value, 1 flips one encoding bit, 2 XORs a mask into
the encoding word.
"""
import numpy as np

from . import fp
from .encoding import (CMP, GNEG, GUARD, K_CONST, K_IMM, K_PRED,
                       K_REG, LUT, OFF, S0K, S0V, S1K, S1V, S2K, S2V, SHIFT,
                       SNAPLEN, SNAPSPACE, TARGET, WIDTH)

jit = fp.jit

# status codes
RUNNING, EXITED, TRAPPED, CONVERGED = 0, 1, 2, 3

# trap causes (E8-analog for hang)
E1_ADDR_OOB, E3_REG_OOB, E4_MISALIGNED, E5_ILLEGAL_OPERAND, HANG = 1, 3, 4, 5, 8

# st[] slots
ST_PC, ST_DYN, ST_STATUS, ST_CAUSE, ST_TRAP_PC, ST_DETAIL, ST_NSNAP = 0, 1, 2, 3, 4, 5, 6
ST_FIRST_DIFF, ST_FIRST_DIFF_PC, ST_WILD, ST_TADDR, ST_TCTRL = 7, 8, 9, 10, 11
ST_WKIND, ST_WIDX, ST_CAPPTR, ST_CKPTR, ST_FPTR, ST_TSEG_G, ST_TSEG_S = 12, 13, 14, 15, 16, 17, 18
ST_SIZE = 24

# prm[] slots
P_MAX_DYN, P_STEP_LIMIT, P_REG_BUDGET, P_FLAGS, P_WRITABLE = 0, 1, 2, 3, 4
P_LAST_FAULT = 5
PRM_SIZE = 8

F_TRACE, F_TAINT, F_SAVE_CK, F_CONVERGE, F_CMP_SNAP = 1, 2, 4, 8, 16

FNV_OFFSET = np.uint64(14695981039346656037)
FNV_PRIME = np.uint64(1099511628211)


@jit
def fnv1a(buf, start, length):
    h = FNV_OFFSET
    for i in range(start, start + length):
        h = (h ^ np.uint64(buf[i])) * FNV_PRIME
    return np.int64(h)  # wrapping reinterpretation of the 64-bit pattern


@jit
def _save_row(dst, k, src):
    for i in range(src.shape[0]):
        dst[k, i] = src[i]


@jit
def _row_equal(ref, k, cur, start):
    for i in range(start, cur.shape[0]):
        if cur[i] != ref[k, i]:
            return False
    return True


@jit
def _snapshot(buf, off, length, capture, st):
    dg = fnv1a(buf, off, length)
    if capture.shape[0] > 0:
        cp = st[ST_CAPPTR]
        if cp + length <= capture.shape[0]:
            for i in range(length):
                capture[cp + i] = buf[off + i]
        st[ST_CAPPTR] = cp + length
    return dg


@jit
def _fill(buf, start, n, v):
    for i in range(n):
        buf[start + i] = v


# Hot-path helpers take scalars only: passing an array to a compiled callee
# costs an atomic refcount pair per call.
@jit
def _fetch(kind, byte, val, rv, pv, cv, csize, reg_budget):
    """Returns (value, error-cause); ``rv``/``pv``/``cv`` are the pre-read candidates."""
    if kind == K_REG:
        if byte == 255:
            return 0, 0
        if byte >= reg_budget:
            return 0, E3_REG_OOB
        return rv, 0
    if kind == K_IMM:
        return val, 0
    if kind == K_CONST:
        if val < 0 or (val >> 2) >= csize or (val & 3) != 0:
            return 0, E1_ADDR_OOB
        return cv, 0
    if kind == K_PRED:
        if byte > 7:
            return 0, E5_ILLEGAL_OPERAND
        return pv, 0
    return 0, 0


@jit
def _taint_of(kind, byte, tr, tp):
    if kind == K_REG:
        if byte >= 255:
            return 0
        return tr
    if kind == K_PRED:
        if byte > 7:
            return 0
        return tp
    return 0


@jit
def execute(words, side, regs, preds, gmem, smem, cmem, st, prm,
            faults, snaps, gsnap, capture, hist, trace,
            ck_dyn, ck_meta, ck_regs, ck_preds, ck_gmem, ck_smem,
            treg, tpred, tg, ts):
    n = words.shape[0]
    max_dyn = prm[P_MAX_DYN]
    step_limit = prm[P_STEP_LIMIT]
    reg_budget = prm[P_REG_BUDGET]
    flags = prm[P_FLAGS]
    writable = prm[P_WRITABLE]
    last_fault = prm[P_LAST_FAULT]
    do_trace = (flags & F_TRACE) != 0
    do_taint = (flags & F_TAINT) != 0
    save_ck = (flags & F_SAVE_CK) != 0
    converge = (flags & F_CONVERGE) != 0
    cmp_snap = (flags & F_CMP_SNAP) != 0

    g32 = gmem.view(np.uint32)
    g16 = gmem.view(np.uint16)
    s32 = smem.view(np.uint32)
    s16 = smem.view(np.uint16)
    c32 = cmem.view(np.uint32)
    c16 = cmem.view(np.uint16)
    gsize = gmem.shape[0]
    ssize = smem.shape[0]
    csize = cmem.shape[0]
    # speculative const pre-reads go through a clamped, never-empty copy
    cpre = np.zeros(max(c32.shape[0], 1), np.uint32)
    cpre[:c32.shape[0]] = c32
    clast = cpre.shape[0] - 1

    pc = st[ST_PC]
    dyn = st[ST_DYN]
    nsnap = st[ST_NSNAP]
    fi = st[ST_FPTR]
    ck = st[ST_CKPTR]
    nf = faults.shape[0]
    nck = ck_dyn.shape[0]
    snap_cap = snaps.shape[0]
    steps = 0
    status = RUNNING
    cause = 0
    detail = 0
    trap_pc = -1

    while True:
        if step_limit >= 0 and steps >= step_limit:
            break
        if dyn >= max_dyn:
            status = TRAPPED
            cause = HANG
            detail = dyn
            trap_pc = pc
            break
        if ck < nck and dyn == ck_dyn[ck]:
            if save_ck:
                ck_meta[ck, 0] = pc
                ck_meta[ck, 1] = nsnap
                ck_meta[ck, 2] = st[ST_CAPPTR]
                _save_row(ck_regs, ck, regs)
                _save_row(ck_preds, ck, preds)
                _save_row(ck_gmem, ck, gmem)
                _save_row(ck_smem, ck, smem)
            elif converge and dyn > last_fault and st[ST_FIRST_DIFF] < 0 and st[ST_WILD] == 0:
                same = (pc == ck_meta[ck, 0] and nsnap == ck_meta[ck, 1]
                        and _row_equal(ck_regs, ck, regs, 0)
                        and _row_equal(ck_preds, ck, preds, 0)
                        and _row_equal(ck_gmem, ck, gmem, writable)
                        and _row_equal(ck_smem, ck, smem, 0))
                if same:
                    status = CONVERGED
                    break
            ck += 1
            continue
        if pc < 0 or pc >= n:
            status = TRAPPED
            cause = E5_ILLEGAL_OPERAND
            detail = pc
            trap_pc = pc
            break
        steps += 1
        word = np.int64(words[pc])

        # ---- operator-boundary snapshot (not a dynamic instruction) ----
        if (word >> 24) == 31:
            space = side[pc, SNAPSPACE]
            off = side[pc, OFF]
            length = side[pc, SNAPLEN]
            if space == 0:
                dg = _snapshot(gmem, off, length, capture, st)
            else:
                dg = _snapshot(smem, off, length, capture, st)
            if nsnap < snap_cap:
                snaps[nsnap, 0] = pc
                snaps[nsnap, 1] = dg
            if cmp_snap and st[ST_FIRST_DIFF] < 0:
                if nsnap >= gsnap.shape[0] or gsnap[nsnap] != dg:
                    st[ST_FIRST_DIFF] = nsnap
                    st[ST_FIRST_DIFF_PC] = pc
            nsnap += 1
            pc += 1
            continue

        cur = dyn
        j = fi
        while j < nf and faults[j, 0] == cur:
            if faults[j, 1] != 0:
                # kind 1 flips one bit; kind 2 XORs an arbitrary mask (hook API)
                orig = word
                if faults[j, 1] == 1:
                    word = word ^ (1 << faults[j, 2])
                else:
                    word = word ^ (faults[j, 2] & 0xFFFFFFFF)
                faults[j, 3] = 1
                if do_taint:
                    # corrupted instruction: both decodings' destinations
                    st[ST_TCTRL] = 1
                    od = (orig >> 16) & 255
                    nd = (word >> 16) & 255
                    if od < 255:
                        treg[od] |= 1
                    if nd < 255:
                        treg[nd] |= 1
                    if od < 8:
                        tpred[od] |= 1
                    if nd < 8:
                        tpred[nd] |= 1
            j += 1
        fend = j

        opc = word >> 24
        d = (word >> 16) & 255
        b0 = (word >> 8) & 255
        b1 = word & 255
        dyn += 1
        if opc < 32:
            hist[opc] += 1

        g = side[pc, GUARD]
        gtaint = 0
        if g >= 0:
            gv = preds[g] != 0
            if side[pc, GNEG] != 0:
                gv = not gv
            if do_taint:
                gtaint = tpred[g]
            if not gv:
                if do_trace:
                    trace[cur] = pc * 2
                if do_taint and gtaint != 0 and opc == 28:
                    st[ST_TCTRL] = 1
                elif do_taint and gtaint != 0:
                    # a tainted guard skipped a write that golden may have done
                    if d < 255:
                        treg[d] |= 2
                    if d < 8:
                        tpred[d] |= 2
                    if opc == 24:
                        st[ST_TSEG_G] = 1
                    if opc == 26:
                        st[ST_TSEG_S] = 1
                for k in range(fi, fend):
                    faults[k, 3] = 1
                fi = fend
                pc += 1
                continue
        if do_trace:
            trace[cur] = pc * 2 + 1

        if opc >= 32:
            status = TRAPPED
            cause = E5_ILLEGAL_OPERAND
            detail = opc
            trap_pc = pc
            break

        k0 = side[pc, S0K]
        k1 = side[pc, S1K]
        k2 = side[pc, S2K]
        v0 = side[pc, S0V]
        v1 = side[pc, S1V]
        v2 = side[pc, S2V]
        a, e0 = _fetch(k0, b0, v0, np.int64(regs[b0]), np.int64(preds[b0 & 7]),
                       np.int64(cpre[min(max(v0 >> 2, 0), clast)]), c32.shape[0], reg_budget)
        b, e1 = _fetch(k1, b1, v1, np.int64(regs[b1]), np.int64(preds[b1 & 7]),
                       np.int64(cpre[min(max(v1 >> 2, 0), clast)]), c32.shape[0], reg_budget)
        c, e2 = _fetch(k2, v2, v2, np.int64(regs[v2 & 255]), np.int64(preds[v2 & 7]),
                       np.int64(cpre[min(max(v2 >> 2, 0), clast)]), c32.shape[0], reg_budget)
        err = e0
        if err == 0:
            err = e1
        if err == 0:
            err = e2
        if err != 0:
            status = TRAPPED
            cause = err
            detail = b0 if e0 != 0 else (b1 if e1 != 0 else side[pc, S2V])
            trap_pc = pc
            break

        stnt = 0
        if do_taint:
            stnt = (_taint_of(k0, b0, treg[b0], tpred[b0 & 7])
                    | _taint_of(k1, b1, treg[b1], tpred[b1 & 7])
                    | _taint_of(k2, v2, treg[v2 & 255], tpred[v2 & 7])
                    | gtaint)
            if st[ST_TCTRL] != 0:
                stnt |= 2

        wkind = 0      # 0 none, 1 reg, 2 pred
        val = 0
        nextpc = pc + 1

        if opc == 11:
            val = fp.hmma_step(a, b, c)
            wkind = 1
        elif opc == 23 or opc == 25 or opc == 27 or opc == 24 or opc == 26:
            width = side[pc, WIDTH]
            wb = width >> 3
            if wb != 1 and wb != 2 and wb != 4:
                status = TRAPPED
                cause = E5_ILLEGAL_OPERAND
                detail = width
                trap_pc = pc
                break
            addr = a + side[pc, OFF]
            if opc == 23 or opc == 24:
                size = gsize
            elif opc == 27:
                size = csize
            else:
                size = ssize
            if addr < 0 or addr + wb > size:
                status = TRAPPED
                cause = E1_ADDR_OOB
                detail = addr
                trap_pc = pc
                break
            if addr % wb != 0:
                status = TRAPPED
                cause = E4_MISALIGNED
                detail = addr
                trap_pc = pc
                break
            btaint = 0
            if do_taint:
                btaint = _taint_of(k0, b0, treg[b0], tpred[b0 & 7])
                if (btaint & 1) != 0:
                    st[ST_TADDR] = 1
            if opc == 24 or opc == 26:
                if opc == 24:
                    if addr < writable:
                        st[ST_WILD] = 1
                    if wb == 4:
                        g32[addr >> 2] = b & 0xFFFFFFFF
                    elif wb == 2:
                        g16[addr >> 1] = b & 0xFFFF
                    else:
                        gmem[addr] = b & 0xFF
                else:
                    if wb == 4:
                        s32[addr >> 2] = b & 0xFFFFFFFF
                    elif wb == 2:
                        s16[addr >> 1] = b & 0xFFFF
                    else:
                        smem[addr] = b & 0xFF
                if do_taint:
                    vt = _taint_of(k1, b1, treg[b1], tpred[b1 & 7]) | gtaint
                    if st[ST_TCTRL] != 0:
                        vt |= 2
                    if btaint != 0:
                        if opc == 24:
                            st[ST_TSEG_G] = 1
                        else:
                            st[ST_TSEG_S] = 1
                    if opc == 24:
                        _fill(tg, addr, wb, vt | btaint)
                    else:
                        _fill(ts, addr, wb, vt | btaint)
            else:
                if opc == 23:
                    if wb == 4:
                        val = np.int64(g32[addr >> 2])
                    elif wb == 2:
                        val = np.int64(g16[addr >> 1])
                    else:
                        val = np.int64(gmem[addr])
                elif opc == 25:
                    if wb == 4:
                        val = np.int64(s32[addr >> 2])
                    elif wb == 2:
                        val = np.int64(s16[addr >> 1])
                    else:
                        val = np.int64(smem[addr])
                else:
                    if wb == 4:
                        val = np.int64(c32[addr >> 2])
                    elif wb == 2:
                        val = np.int64(c16[addr >> 1])
                    else:
                        val = np.int64(cmem[addr])
                wkind = 1
                if do_taint:
                    mt = 0
                    if opc == 23:
                        if st[ST_TSEG_G] != 0:
                            mt = 1
                        for i in range(wb):
                            mt |= tg[addr + i]
                    elif opc == 25:
                        if st[ST_TSEG_S] != 0:
                            mt = 1
                        for i in range(wb):
                            mt |= ts[addr + i]
                    stnt |= mt | btaint
        elif opc == 2:
            val = fp.ffma(a, b, c)
            wkind = 1
        elif opc == 0:
            val = fp.fadd(a, b)
            wkind = 1
        elif opc == 1:
            val = fp.fmul(a, b)
            wkind = 1
        elif opc == 16:
            val = (a + b + c) & 0xFFFFFFFF
            wkind = 1
        elif opc == 20 or opc == 3:
            code = side[pc, CMP]
            if code < 0 or code > 5:
                status = TRAPPED
                cause = E5_ILLEGAL_OPERAND
                detail = code
                trap_pc = pc
                break
            if opc == 20:
                val = 1 if fp.icmp(a, b, code) else 0
            else:
                val = 1 if fp.fcmp(a, b, code) else 0
            wkind = 2
        elif opc == 28:
            if do_taint and gtaint != 0:
                st[ST_TCTRL] = 1
            nextpc = side[pc, TARGET]
        elif opc == 22:
            val = a if c != 0 else b
            wkind = 1
        elif opc == 12:
            val = fp.f2h2(a, b)
            wkind = 1
        elif opc == 21:
            val = a
            wkind = 1
        elif opc == 15:
            val = (a * b + c) & 0xFFFFFFFF
            wkind = 1
        elif opc == 19:
            val = (((a << (side[pc, SHIFT] & 31)) & 0xFFFFFFFF) + b) & 0xFFFFFFFF
            wkind = 1
        elif opc == 4:
            val = fp.rcp(a)
            wkind = 1
        elif opc == 5:
            val = fp.ex2(a)
            wkind = 1
        elif opc == 6:
            val = fp.lg2(a)
            wkind = 1
        elif opc == 7:
            val = fp.rsq(a)
            wkind = 1
        elif opc == 8:
            val = fp.hadd2(a, b)
            wkind = 1
        elif opc == 9:
            val = fp.hmul2(a, b)
            wkind = 1
        elif opc == 10:
            val = fp.hfma2(a, b, c)
            wkind = 1
        elif opc == 13:
            val = fp.h2f(a & 0xFFFF)
            wkind = 1
        elif opc == 14:
            val = fp.h2f((a >> 16) & 0xFFFF)
            wkind = 1
        elif opc == 17:
            val = fp.lop3(a, b, c, side[pc, LUT])
            wkind = 1
        elif opc == 18:
            val = fp.shf(a, b, side[pc, SHIFT])
            wkind = 1
        elif opc == 29:
            status = EXITED
            for k in range(fi, fend):
                faults[k, 3] = 1
            fi = fend
            pc += 1
            break
        # NOP (30) and a corrupted-into-SNAPSHOT word (31) do nothing

        if wkind == 1:
            if d != 255:
                if d >= reg_budget:
                    status = TRAPPED
                    cause = E3_REG_OOB
                    detail = d
                    trap_pc = pc
                    break
                regs[d] = val
                if do_taint:
                    treg[d] = stnt
        elif wkind == 2:
            if d > 7:
                status = TRAPPED
                cause = E5_ILLEGAL_OPERAND
                detail = d
                trap_pc = pc
                break
            if d != 7:
                preds[d] = val
                if do_taint:
                    tpred[d] = stnt
        st[ST_WKIND] = wkind
        st[ST_WIDX] = d

        for k in range(fi, fend):
            if faults[k, 1] == 0:
                if wkind == 1 and d != 255:
                    regs[d] = regs[d] ^ np.uint32(1 << faults[k, 2])
                    if do_taint:
                        treg[d] |= 1
                elif wkind == 2 and d != 7:
                    preds[d] = 1 - preds[d]
                    if do_taint:
                        tpred[d] |= 1
            faults[k, 3] = 1
        fi = fend
        pc = nextpc

    st[ST_PC] = pc
    st[ST_DYN] = dyn
    st[ST_NSNAP] = nsnap
    st[ST_FPTR] = fi
    st[ST_CKPTR] = ck
    st[ST_STATUS] = status
    if status == TRAPPED:
        st[ST_CAUSE] = cause
        st[ST_DETAIL] = detail
        st[ST_TRAP_PC] = trap_pc
    return status
