"""Flat key-value campaign configuration.

Grammar (one item per line, ``#`` starts a comment)::

    [section]              section is one of model, faults, campaign, output
    key = value            value: integer, "quoted string", bare word,
                           [a, b, ...] list, or a bare comma list a,b,c

Keys are matched case-insensitively.  A key may also appear before any
section header; it is then resolved to the one section that owns it.
"""
import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass, field
from typing import Optional

from ..faults.sites import RANDOM, BitPolicy, FaultMode, FaultSpec, FaultSpecError
from ..model.config import ConfigInvalid, MlpKind, NormKind, preset
from ..model.fixtures import FIXTURES
from ..faults.rng import splitmix64

SECTIONS = ("model", "faults", "campaign", "output")
WORKERS_ENV = "BITSTORM_WORKERS"


class ParseError(ValueError):
    def __init__(self, line, col, message):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


class ValidationError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# ---------------------------------------------------------------------------
# value tokenizer
# ---------------------------------------------------------------------------

_BARE = re.compile(r"[A-Za-z0-9_.+\-()/\\:~]+")


def _split_items(text, line, col0):
    """Split a list body on commas, respecting quotes and parentheses."""
    items, depth, quote, start = [], 0, False, 0
    for i, ch in enumerate(text):
        if quote:
            if ch == "\\":
                continue
            if ch == '"' and (i == 0 or text[i - 1] != "\\"):
                quote = False
        elif ch == '"':
            quote = True
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            items.append((text[start:i], col0 + start))
            start = i + 1
    if quote:
        raise ParseError(line, col0 + len(text), "unterminated string")
    items.append((text[start:], col0 + start))
    return items


def _scalar(text, line, col):
    s = text.strip()
    col += len(text) - len(text.lstrip())
    if not s:
        raise ParseError(line, col, "empty value")
    if s[0] == '"':
        try:
            val, end = json.JSONDecoder().raw_decode(s)
        except json.JSONDecodeError as e:
            raise ParseError(line, col + e.pos, f"bad string: {e.msg}") from None
        if end != len(s) or not isinstance(val, str):
            raise ParseError(line, col + end, "trailing characters after string")
        return val
    m = _BARE.fullmatch(s)
    if not m:
        bad = next(i for i, ch in enumerate(s) if not _BARE.fullmatch(ch))
        raise ParseError(line, col + bad, f"unexpected character {s[bad]!r}")
    return s


def parse_value(text, line=1, col=1):
    """A raw value: str, or list of str for ``[...]`` and bare comma lists."""
    s = text.strip()
    col += len(text) - len(text.lstrip())
    if s.startswith("["):
        if not s.endswith("]"):
            raise ParseError(line, col + len(s), "list is missing its closing ']'")
        body = s[1:-1]
        if not body.strip():
            return []
        return [_scalar(t, line, c) for t, c in _split_items(body, line, col + 1)]
    if not s.startswith('"'):
        parts = _split_items(s, line, col)
        if len(parts) > 1:
            return [_scalar(t, line, c) for t, c in parts]
    return _scalar(s, line, col)


def _strip_comment(raw):
    quote = False
    for i, ch in enumerate(raw):
        if ch == '"' and (i == 0 or raw[i - 1] != "\\"):
            quote = not quote
        elif ch == "#" and not quote:
            return raw[:i]
    return raw


def tokenize(text):
    """``[(section, key, raw_value, line, col)]`` in file order."""
    out, section = [], None
    for ln, raw in enumerate(text.splitlines(), 1):
        body = _strip_comment(raw).rstrip()
        if not body.strip():
            continue
        indent = len(body) - len(body.lstrip())
        stripped = body.strip()
        if stripped.startswith("["):
            m = re.fullmatch(r"\[\s*([A-Za-z_]+)\s*\]", stripped)
            if not m:
                raise ParseError(ln, indent + 1, "malformed section header")
            name = m.group(1).lower()
            if name not in SECTIONS:
                raise ParseError(ln, indent + 2, f"unknown section [{name}]")
            section = name
            continue
        if "=" not in stripped:
            raise ParseError(ln, indent + 1, "expected 'key = value'")
        eq = body.index("=")
        key = body[:eq].strip()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", key):
            raise ParseError(ln, indent + 1, f"bad key {key!r}")
        value = parse_value(body[eq + 1:], ln, eq + 2)
        out.append((section, key.lower(), value, ln, indent + 1))
    return out


# ---------------------------------------------------------------------------
# typed schema
# ---------------------------------------------------------------------------

def _int(name, v, lo=None):
    if isinstance(v, list):
        raise ValidationError(name, "expected an integer, got a list")
    try:
        x = int(v, 0) if isinstance(v, str) else int(v)
    except ValueError:
        raise ValidationError(name, f"expected an integer, got {v!r}") from None
    if lo is not None and x < lo:
        raise ValidationError(name, f"must be >= {lo}")
    return x


def _ints(name, v, lo=None):
    v = v if isinstance(v, list) else [v]
    return [_int(name, x, lo) for x in v]


def _strs(name, v):
    v = v if isinstance(v, list) else [v]
    if any(isinstance(x, list) for x in v):
        raise ValidationError(name, "nested lists are not allowed")
    return [str(x) for x in v]


def _str(name, v):
    if isinstance(v, list):
        raise ValidationError(name, "expected a single value, got a list")
    return str(v)


def _enum(cls, name):
    def conv(v):
        s = _str(name, v).upper()
        try:
            return cls(s)
        except ValueError:
            raise ValidationError(name, f"expected one of {[e.value for e in cls]}") from None
    return conv


def _bit(name):
    def conv(v):
        s = _str(name, v)
        try:
            return BitPolicy.parse(s)
        except FaultSpecError as e:
            raise ValidationError(name, str(e)) from None
    return conv


def _bit_grid(v):
    out = []
    for s in _strs("bit_grid", v):
        try:
            out.append(BitPolicy.parse(s if not s.isdigit() else f"FIXED({s})"))
        except FaultSpecError as e:
            raise ValidationError("bit_grid", str(e)) from None
    return out


SCHEMA = {
    "model": {
        "preset": lambda v: _str("preset", v),
        "norm": _enum(NormKind, "norm"),
        "mlp": _enum(MlpKind, "mlp"),
        "weight_seed": lambda v: _int("weight_seed", v, 0),
        "prompt": lambda v: _ints("prompt", v, 0),
        "steps": lambda v: _int("steps", v, 0),
    },
    "faults": {
        "mode": _enum(FaultMode, "mode"),
        "n": lambda v: _int("N", v, 1),
        "n_grid": lambda v: _ints("N_grid", v, 1),
        "bit": _bit("bit"),
        "bit_grid": _bit_grid,
        "opcodes": lambda v: [s.upper() for s in _strs("opcodes", v)],
        "operators": lambda v: [s.upper() for s in _strs("operators", v)],
        "layers": lambda v: _ints("layers", v, 0),
    },
    "campaign": {
        "trials": lambda v: _int("trials", v, 1),
        "repeats": lambda v: _int("repeats", v, 1),
        "seed": lambda v: _int("seed", v, 0),
        "workers": lambda v: _int("workers", v, 1),
        "hang_multiplier": lambda v: _int("hang_multiplier", v, 1),
        "cap": lambda v: _int("cap", v, 1),
    },
    "output": {
        "dir": lambda v: _str("dir", v),
    },
}
OWNER = {k: s for s, keys in SCHEMA.items() for k in keys}


@dataclass
class SubCampaign:
    name: str
    n: int
    bit_policy: BitPolicy
    seed: int

    def spec(self, base: FaultSpec):
        return base.with_n(self.n).with_bit(self.bit_policy)


@dataclass
class CampaignConfig:
    preset: str = "nano-gpt2"
    norm: Optional[NormKind] = None
    mlp: Optional[MlpKind] = None
    weight_seed: Optional[int] = None
    prompt: list = field(default_factory=lambda: [3, 1, 4])
    steps: int = 2
    mode: FaultMode = FaultMode.VALUE
    n_grid: list = field(default_factory=lambda: [1])
    bit_grid: list = field(default_factory=lambda: [RANDOM])
    opcodes: list = field(default_factory=list)
    operators: list = field(default_factory=list)
    layers: list = field(default_factory=list)
    trials: int = 1000
    repeats: int = 10
    seed: int = 1
    workers: int = 1
    hang_multiplier: int = 10
    cap: int = 2_000_000
    outdir: str = "bitstorm-out"

    @property
    def n(self):
        return self.n_grid[0]

    @property
    def bit(self):
        return self.bit_grid[0]

    @property
    def is_fixture(self):
        return self.preset in FIXTURES

    def model_config(self):
        """Resolved ModelConfig, or None for a hand-assembled fixture program."""
        if self.is_fixture:
            return None
        cfg = preset(self.preset)
        kw = {}
        if self.norm is not None:
            kw["norm_kind"] = self.norm
        if self.mlp is not None:
            kw["mlp_kind"] = self.mlp
        if self.weight_seed is not None:
            kw["seed"] = self.weight_seed
        return cfg.with_(**kw) if kw else cfg

    def fault_spec(self):
        return FaultSpec(mode=self.mode, n=self.n, bit_policy=self.bit,
                         opcodes=frozenset(self.opcodes), operators=frozenset(self.operators),
                         layers=frozenset(self.layers))

    def plan(self):
        """Sub-campaigns: one per (N, bit policy) pair, each with its own seed."""
        out = []
        for n in self.n_grid:
            for b in self.bit_grid:
                k = len(out)
                name = f"n{n}_" + ("random" if b.is_random else f"bit{b.fixed}")
                out.append(SubCampaign(name, n, b, splitmix64(self.seed ^ (k << 48))))
        return out

    def echo(self):
        """Everything that determines results; workers and output location excluded."""
        mc = self.model_config()
        model = {"preset": self.preset}
        if mc is not None:
            model.update(config=mc.to_dict(), prompt=list(self.prompt), steps=self.steps)
        return {
            "model": model,
            "faults": {"mode": self.mode.value, "N_grid": list(self.n_grid),
                       "bit_grid": [str(b) for b in self.bit_grid],
                       "opcodes": sorted(self.opcodes), "operators": sorted(self.operators),
                       "layers": sorted(self.layers)},
            "campaign": {"trials": self.trials, "repeats": self.repeats, "seed": self.seed,
                         "hang_multiplier": self.hang_multiplier},
        }

    def digest(self):
        blob = json.dumps(self.echo(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _default_workers(env):
    raw = env.get(WORKERS_ENV)
    if raw is None or raw.strip() == "":
        return 1
    return _int(WORKERS_ENV, raw.strip(), 1)


def _resolve(pairs):
    """Typed values from ``(section, key, raw, line, col)`` tuples; later entries win."""
    values = {}
    for section, key, raw, line, col in pairs:
        owner = OWNER.get(key)
        if owner is None or (section is not None and owner != section):
            where = f"[{section}]" if section else "top level"
            raise ValidationError(key, f"unknown key at {where} (line {line}, column {col})")
        values[key] = SCHEMA[owner][key](raw)
    return values


def build_config(values, env=None) -> CampaignConfig:
    env = os.environ if env is None else env
    cfg = CampaignConfig(workers=_default_workers(env))
    simple = ("preset", "norm", "mlp", "weight_seed", "prompt", "steps", "mode", "opcodes",
              "operators", "layers", "trials", "repeats", "seed", "workers", "hang_multiplier", "cap")
    for k in simple:
        if k in values:
            setattr(cfg, k, values[k])
    if "dir" in values:
        cfg.outdir = values["dir"]
    if "n" in values and "n_grid" in values:
        raise ValidationError("N", "give either N or N_grid, not both")
    if "n_grid" in values:
        cfg.n_grid = values["n_grid"]
    elif "n" in values:
        cfg.n_grid = [values["n"]]
    if "bit" in values and "bit_grid" in values:
        raise ValidationError("bit", "give either bit or bit_grid, not both")
    if "bit_grid" in values:
        cfg.bit_grid = values["bit_grid"]
    elif "bit" in values:
        cfg.bit_grid = [values["bit"]]
    validate(cfg)
    return cfg


def validate(cfg: CampaignConfig):
    try:
        mc = cfg.model_config()
    except ConfigInvalid as e:
        raise ValidationError("preset" if "preset" in str(e) else "model", str(e)) from None
    if mc is not None:
        try:
            mc.check_sequence(cfg.prompt, cfg.steps)
        except ConfigInvalid as e:
            raise ValidationError("prompt", str(e)) from None
    if not cfg.n_grid:
        raise ValidationError("N_grid", "must not be empty")
    if not cfg.bit_grid:
        raise ValidationError("bit_grid", "must not be empty")
    if len(set(cfg.n_grid)) != len(cfg.n_grid):
        raise ValidationError("N_grid", "duplicate entries")
    if len(set(map(str, cfg.bit_grid))) != len(cfg.bit_grid):
        raise ValidationError("bit_grid", "duplicate entries")
    if cfg.trials < 1:
        raise ValidationError("trials", "must be >= 1")
    for l in cfg.layers if mc is not None else ():
        if l >= mc.L:
            raise ValidationError("layers", f"layer {l} does not exist")
    try:
        cfg.fault_spec()
    except FaultSpecError as e:
        raise ValidationError(e.field, str(e)) from None
    return cfg


def parse_config(text, overrides=(), env=None) -> CampaignConfig:
    """Parse config text; ``overrides`` are ``(key, raw_text)`` pairs applied last."""
    pairs = tokenize(text)
    for key, raw in overrides:
        k = key.lower().replace("-", "_")
        pairs.append((None, k, parse_value(str(raw)), 0, 0))
    return build_config(_resolve(pairs), env)


def config_to_dict(cfg: CampaignConfig):
    d = asdict(cfg)
    d["mode"] = cfg.mode.value
    d["bit_grid"] = [str(b) for b in cfg.bit_grid]
    d["norm"] = cfg.norm.value if cfg.norm else None
    d["mlp"] = cfg.mlp.value if cfg.mlp else None
    return d
