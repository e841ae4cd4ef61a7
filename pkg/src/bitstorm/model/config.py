"""Model configurations and the preset registry."""
import enum
from dataclasses import asdict, dataclass, replace


class ConfigInvalid(ValueError):
    pass


class NormKind(str, enum.Enum):
    LAYERNORM_PRE_POST = "LAYERNORM_PRE_POST"
    RMSNORM_PRE = "RMSNORM_PRE"


class MlpKind(str, enum.Enum):
    GELU = "GELU"
    SILU_GATED = "SILU_GATED"


@dataclass(frozen=True)
class ModelConfig:
    name: str
    L: int
    HS: int
    AH: int
    VS: int
    CL: int
    norm_kind: NormKind = NormKind.LAYERNORM_PRE_POST
    mlp_kind: MlpKind = MlpKind.GELU
    seed: int = 7
    ffn_mult: int = 2

    def __post_init__(self):
        object.__setattr__(self, "norm_kind", NormKind(self.norm_kind))
        object.__setattr__(self, "mlp_kind", MlpKind(self.mlp_kind))
        self.validate()

    def validate(self):
        for k in ("L", "HS", "AH", "VS", "CL", "ffn_mult"):
            if getattr(self, k) < 1:
                raise ConfigInvalid(f"{k} must be positive")
        if self.HS % self.AH:
            raise ConfigInvalid(f"HS={self.HS} is not divisible by AH={self.AH}")
        if self.HS % 2:
            raise ConfigInvalid("HS must be even (packed fp16 pairs)")
        if self.VS < 2:
            raise ConfigInvalid("VS must be at least 2")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigInvalid("seed must fit in 64 bits")
        return self

    @property
    def head_dim(self):
        return self.HS // self.AH

    @property
    def ffn(self):
        return self.ffn_mult * self.HS

    def check_sequence(self, prompt, gen_steps):
        if len(prompt) == 0:
            raise ConfigInvalid("prompt must be nonempty")
        if gen_steps < 0:
            raise ConfigInvalid("gen_steps must be >= 0")
        if len(prompt) + gen_steps > self.CL:
            raise ConfigInvalid(f"prompt length + gen_steps exceeds CL={self.CL}")
        if any(not 0 <= int(t) < self.VS for t in prompt):
            raise ConfigInvalid("prompt token outside the vocabulary")

    def to_dict(self):
        d = asdict(self)
        d["norm_kind"] = self.norm_kind.value
        d["mlp_kind"] = self.mlp_kind.value
        return d

    def with_(self, **kw):
        return replace(self, **kw)


PRESETS = {
    "nano-gpt2": ModelConfig("nano-gpt2", L=2, HS=32, AH=2, VS=64, CL=32,
                             norm_kind=NormKind.LAYERNORM_PRE_POST, mlp_kind=MlpKind.GELU, seed=7),
    "nano-rms": ModelConfig("nano-rms", L=2, HS=32, AH=2, VS=64, CL=32,
                            norm_kind=NormKind.RMSNORM_PRE, mlp_kind=MlpKind.SILU_GATED, seed=7),
}


def preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigInvalid(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
