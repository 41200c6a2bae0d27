"""
Protection policies and the load gate/wakeup rules they imply.
"""

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

from safebetsim.smact.geometry import SmactGeometry
from safebetsim.smact.table import LookupResult

# "never" for event times; larger than any reachable cycle
NEVER = 1 << 62


class PolicyKind(str, Enum):
    BASELINE = "baseline"
    NDA_RESTRICTIVE = "nda-restrictive"
    NDA_PERMISSIVE = "nda-permissive"
    SAFEBET = "safebet"


class SourceCoarsening(str, Enum):
    REGION = "region"
    INSTRUCTION = "instruction"


class LoadAction(str, Enum):
    ISSUE_NORMAL = "issue_normal"
    ISSUE_FILL_ONLY_WAIT_COMMIT = "issue_fill_only_wait_commit"
    ISSUE_NO_GATE = "issue_no_gate"


@dataclass(frozen=True)
class SafeBetOptions:
    bitmask_enabled: bool = True
    source_coarsening: SourceCoarsening = SourceCoarsening.REGION
    inheritance_enabled: bool = True
    # static region sources when off
    instances_enabled: bool = True
    revocation_enabled: bool = True
    # charge lazy-free handler cycles to the run (the +MLF configuration)
    charge_allocator: bool = False


_ABLATIONS = {
    "nobitmask": ("bitmask_enabled", False),
    "insn-source": ("source_coarsening", SourceCoarsening.INSTRUCTION),
    "noinherit": ("inheritance_enabled", False),
    "noinst": ("instances_enabled", False),
    "norevoke": ("revocation_enabled", False),
}
_PERMISSIVE_RE = re.compile(r"^nda-permissive-(\d+)$")


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind
    k: int = 0
    safebet: SafeBetOptions = field(default_factory=SafeBetOptions)

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("NDA-permissive search delay must be non-negative")

    @classmethod
    def baseline(cls) -> "PolicyConfig":
        return cls(PolicyKind.BASELINE)

    @classmethod
    def nda_restrictive(cls) -> "PolicyConfig":
        return cls(PolicyKind.NDA_RESTRICTIVE)

    @classmethod
    def nda_permissive(cls, k: int = 4) -> "PolicyConfig":
        return cls(PolicyKind.NDA_PERMISSIVE, k=k)

    @classmethod
    def safebet_policy(cls, **options) -> "PolicyConfig":
        return cls(PolicyKind.SAFEBET, safebet=SafeBetOptions(**options))

    @property
    def is_safebet(self) -> bool:
        return self.kind is PolicyKind.SAFEBET

    @property
    def fully_protected(self) -> bool:
        """SafeBet with both instance IDs and revocation in force."""
        return (
            self.is_safebet
            and self.safebet.instances_enabled
            and self.safebet.revocation_enabled
        )

    def geometry_for(self, geometry: SmactGeometry) -> SmactGeometry:
        if self.is_safebet and not self.safebet.bitmask_enabled:
            return geometry.without_bitmask()
        return geometry

    def label(self) -> str:
        if self.kind is PolicyKind.NDA_PERMISSIVE:
            return f"nda-permissive-{self.k}"
        if not self.is_safebet:
            return self.kind.value
        name = "safebet+mlf" if self.safebet.charge_allocator else "safebet"
        defaults = SafeBetOptions()
        for suffix, (attr, off_value) in _ABLATIONS.items():
            if getattr(self.safebet, attr) == off_value != getattr(defaults, attr):
                name += f"-{suffix}"
        return name

    @classmethod
    def parse(cls, name: str) -> "PolicyConfig":
        text = name.strip().lower()
        if text == "baseline":
            return cls.baseline()
        if text == "nda-restrictive":
            return cls.nda_restrictive()
        m = _PERMISSIVE_RE.match(text)
        if m:
            return cls.nda_permissive(int(m.group(1)))
        for stem, charge in (("safebet+mlf", True), ("safebet", False)):
            if text == stem or text.startswith(stem + "-"):
                options = SafeBetOptions(charge_allocator=charge)
                rest = text[len(stem):]
                for suffix in sorted(_ABLATIONS, key=len, reverse=True):
                    token = f"-{suffix}"
                    if token in rest:
                        attr, value = _ABLATIONS[suffix]
                        options = replace(options, **{attr: value})
                        rest = rest.replace(token, "", 1)
                if rest:
                    raise ValueError(f"unknown SafeBet option in {name!r}")
                return cls(PolicyKind.SAFEBET, safebet=options)
        raise ValueError(f"unknown policy {name!r}")


@dataclass(frozen=True)
class CoreConfig:
    width: int = 8
    issueq: int = 64
    rob: int = 192
    frontend_depth: int = 3
    mispredict_penalty: int = 0

    def __post_init__(self):
        for name in ("width", "issueq", "rob", "frontend_depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"core {name} must be positive")
        if self.mispredict_penalty < 0:
            raise ValueError("mispredict penalty must be non-negative")


@dataclass(frozen=True)
class LoadState:
    smact: Optional[LookupResult] = None
    # the pipeline cannot tell wrong-path loads apart before resolution
    is_wrong_path_unknown: bool = True


@dataclass(frozen=True)
class LoadTiming:
    issue_done: int
    commit: int = NEVER
    nonspec: int = 0
    replay_done: Optional[int] = None
    smact_hit: bool = True


def gate_load(policy: PolicyConfig, load_state: LoadState) -> LoadAction:
    """Decide how a ready load issues under ``policy``."""
    if not policy.is_safebet:
        return LoadAction.ISSUE_NO_GATE
    if load_state.smact is not None and load_state.smact.hit:
        return LoadAction.ISSUE_NORMAL
    return LoadAction.ISSUE_FILL_ONLY_WAIT_COMMIT


def wakeup_time(policy: PolicyConfig, load: LoadTiming) -> int:
    """Cycle at which a load's dependents may wake.

    NDA-permissive waits for ``nonspec + k`` but never beyond the load's own
    commit, where it is non-speculative by definition.
    """
    kind = policy.kind
    if kind is PolicyKind.BASELINE:
        return load.issue_done
    if kind is PolicyKind.NDA_RESTRICTIVE:
        return max(load.issue_done, load.commit)
    if kind is PolicyKind.NDA_PERMISSIVE:
        return max(load.issue_done, min(load.nonspec + policy.k, load.commit))
    if load.smact_hit:
        return load.issue_done
    if load.replay_done is None:
        return NEVER
    return load.replay_done


def source_key(options: SafeBetOptions, inst: Optional[int], pc: int, region: int) -> Optional[int]:
    """Fold the access source into the table's instance field."""
    if options.instances_enabled:
        if inst is None:
            return None
        base = inst
    else:
        base = region
    if options.source_coarsening is SourceCoarsening.INSTRUCTION:
        return (base << 64) | pc
    return base


def default_policies() -> List[PolicyConfig]:
    return [
        PolicyConfig.baseline(),
        PolicyConfig.safebet_policy(),
        PolicyConfig.nda_permissive(0),
        PolicyConfig.nda_permissive(4),
        PolicyConfig.nda_restrictive(),
    ]
