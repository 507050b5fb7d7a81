from .search_common import ShardData, brute_force_search, squared_l2
from .kdtree import KdTree
from .hashindex import HashIndex, measure_recall
from .shards import (
    IndexParams,
    ShardSet,
    build_shards,
    load_db,
    save_db,
    storage_stats,
)

__all__ = [
    "HashIndex",
    "IndexParams",
    "KdTree",
    "ShardData",
    "ShardSet",
    "brute_force_search",
    "build_shards",
    "load_db",
    "measure_recall",
    "save_db",
    "squared_l2",
    "storage_stats",
]
