"""Toy multi-agent environments with segmented observations."""

from __future__ import annotations

from .base import EnvSpec, IllegalActionError, MultiAgentEnv, StepResult
from .micro_skirmish import MicroSkirmish
from .signal_spread import SignalSpread

_REGISTRY = {
    "signal_spread": SignalSpread,
    "micro_skirmish": MicroSkirmish,
}


def make_env(name: str, **kwargs) -> MultiAgentEnv:
    """Instantiate a registered environment by name."""
    if name not in _REGISTRY:
        known = ", ".join(sorted(_REGISTRY))
        raise ValueError(f"unknown environment {name!r} (known: {known})")
    return _REGISTRY[name](**kwargs)


__all__ = [
    "EnvSpec",
    "IllegalActionError",
    "MicroSkirmish",
    "MultiAgentEnv",
    "SignalSpread",
    "StepResult",
    "make_env",
]
