from .hierarchy import (
    AccessKind,
    AccessResult,
    CacheLevelConfig,
    CacheStats,
    HierarchyConfig,
    LevelStats,
    MemoryHierarchy,
)

__all__ = [
    "AccessKind",
    "AccessResult",
    "CacheLevelConfig",
    "CacheStats",
    "HierarchyConfig",
    "LevelStats",
    "MemoryHierarchy",
]
