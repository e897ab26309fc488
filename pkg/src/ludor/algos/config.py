from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from ..errors import ConfigurationError

MEASURES = ("cos", "kl1", "kl2", "js", "uniform")
BASES = ("td3bc", "iql")


@dataclass(frozen=True)
class AlgoConfig:
    # training & evaluation
    batch_size: int = 256
    actor_lr: float = 3e-4
    qf_lr: float = 3e-4
    vf_lr: float = 3e-4
    teacher_lr: float = 3e-4
    hidden: tuple = (256, 256)
    # TD3BC
    discount: float = 0.99
    tau: float = 0.005
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_freq: int = 2
    alpha: float = 2.5
    expl_noise: float = 0.1  # online exploration only; never read by the offline learners
    # IQL
    beta: float = 3.0
    iql_tau: float = 0.7
    iql_deterministic: bool = True
    exp_adv_max: float = 100.0
    # teacher-student
    ema: float = 0.9
    teacher_update_freq: int = 2
    pretrain_num_epochs: int = 1
    measure: str = "cos"
    kl2_std: float = 0.2
    use_teacher: bool = True
    use_ema: bool = True

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ConfigurationError(f"discount must lie in [0, 1), got {self.discount}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigurationError("tau must lie in (0, 1]")
        if not 0.0 <= self.ema <= 1.0:
            raise ConfigurationError("ema must lie in [0, 1]")
        if not 0.0 < self.iql_tau < 1.0:
            raise ConfigurationError("iql_tau must lie in (0, 1)")
        if self.batch_size < 1 or self.policy_freq < 1 or self.teacher_update_freq < 1:
            raise ConfigurationError("batch_size, policy_freq and teacher_update_freq must be positive")
        if self.pretrain_num_epochs < 0:
            raise ConfigurationError("pretrain_num_epochs must be non-negative")
        for lr in (self.actor_lr, self.qf_lr, self.vf_lr, self.teacher_lr):
            if not lr > 0:
                raise ConfigurationError("learning rates must be positive")
        if self.measure not in MEASURES:
            raise ConfigurationError(f"unknown measure {self.measure!r}; choose from {MEASURES}")
        if not self.kl2_std > 0:
            raise ConfigurationError("kl2_std must be positive")
        if not self.iql_deterministic:
            raise ConfigurationError("only the deterministic IQL actor is implemented")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AlgoConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown AlgoConfig keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "AlgoConfig":
        return replace(self, **kw)
