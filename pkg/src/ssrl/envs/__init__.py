"""Environment registry keyed by name."""
from __future__ import annotations

from ssrl.core import Environment
from ssrl.envs.cartpole import CartPole
from ssrl.envs.multiroom import MultiRoom
from ssrl.envs.pointreach import PointReach
from ssrl.envs.tabular import TabularEnv, chain_mdp, tabular_env_from
from ssrl.envs.taxi import Taxi

REGISTRY = {
    "taxi": Taxi,
    "cartpole": CartPole,
    "multiroom": MultiRoom,
    "pointreach": PointReach,
}


def make_env(name: str, seed: int | None = None) -> Environment:
    """Build an environment from its registry name (``chain:<n>`` for tabular chains)."""
    if name.startswith("chain:"):
        try:
            n = int(name.split(":", 1)[1])
        except ValueError:
            raise KeyError(f"bad chain size in {name!r}") from None
        return TabularEnv(chain_mdp(n), seed)
    try:
        return REGISTRY[name](seed=seed)
    except KeyError:
        raise KeyError(f"unknown environment {name!r}; known: {sorted(REGISTRY)} and chain:<n>") from None


__all__ = ["CartPole", "MultiRoom", "PointReach", "TabularEnv", "Taxi", "REGISTRY", "make_env",
           "chain_mdp", "tabular_env_from"]
