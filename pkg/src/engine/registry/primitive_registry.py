from typing import Dict, List, Optional

from .base_primitive import Primitive


class PrimitiveRegistry:
    """
    A registry to store and look up the primitives the tensor engine can record.
    """

    def __init__(self):
        self._primitives: Dict[str, Primitive] = {}

    def register(self, primitive: Primitive) -> None:
        """
        Register a primitive with the registry.

        Args:
            primitive: The primitive instance to register.
        """
        if primitive.name in self._primitives:
            raise ValueError(f"Primitive '{primitive.name}' is already registered.")

        self._primitives[primitive.name] = primitive

    def get(self, name: str) -> Primitive:
        """
        Retrieve a primitive by its name.

        Raises:
            KeyError: If the primitive is not found.
        """
        if name not in self._primitives:
            raise KeyError(f"Primitive '{name}' not found in registry (known: {', '.join(self.names())})")
        return self._primitives[name]

    def names(self) -> List[str]:
        return sorted(self._primitives)

    def __contains__(self, name: str) -> bool:
        return name in self._primitives


# Global Instance
_instance: Optional[PrimitiveRegistry] = None


def default_registry() -> PrimitiveRegistry:
    global _instance
    if _instance is None:
        from .library import ALL_PRIMITIVES

        registry = PrimitiveRegistry()
        for primitive in ALL_PRIMITIVES:
            registry.register(primitive)
        _instance = registry
    return _instance
