"""Base class for network building blocks."""

from __future__ import annotations

from typing import Any, Dict, Iterator, List, Tuple

from dwenet.ops import BatchNormState
from dwenet.tensor import Tensor


class Module:
    """
    Container of named parameters, batch-norm states and child modules.

    Names are registered explicitly so that `named_parameters()` yields the
    same dotted names, in the same order, for every instance built from the
    same configuration.
    """

    def __init__(self) -> None:
        self.training = True
        self._params: Dict[str, Tensor] = {}
        self._states: Dict[str, BatchNormState] = {}
        self._children: Dict[str, Module] = {}

    def add_parameter(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        self._params[name] = tensor
        return tensor

    def add_state(self, name: str, state: BatchNormState) -> BatchNormState:
        self._states[name] = state
        return state

    def add_module(self, name: str, module: "Module") -> "Module":
        if name in self._children:
            raise ValueError(f"duplicate module name: {name}")
        self._children[name] = module
        return module

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        return iter(self._children.items())

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        """All parameters keyed by dotted path."""
        out: Dict[str, Tensor] = {}
        for name, tensor in self._params.items():
            out[f"{prefix}{name}"] = tensor
        for child_name, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{child_name}."))
        return out

    def named_states(self, prefix: str = "") -> Dict[str, BatchNormState]:
        out: Dict[str, BatchNormState] = {}
        for name, state in self._states.items():
            out[f"{prefix}{name}"] = state
        for child_name, child in self._children.items():
            out.update(child.named_states(f"{prefix}{child_name}."))
        return out

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children.items():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def forward(self, *args: Any, **kwargs: Any) -> Tensor:
        raise NotImplementedError

    def __call__(self, *args: Any, **kwargs: Any) -> Tensor:
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    """Ordered children named "0", "1", ..."""

    def __init__(self, modules: List[Module] | None = None) -> None:
        super().__init__()
        self._items: List[Module] = []
        for module in modules or []:
            self.append(module)

    def append(self, module: Module) -> None:
        self.add_module(str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, index: int) -> Module:
        return self._items[index]
