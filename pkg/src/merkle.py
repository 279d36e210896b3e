"""
Merkle tree over judged evaluation records.

The harness folds the judged-record ledger (sorted by sample, variant,
mode, completion index) into one SHA-256 root stored in report metadata,
so two stub runs can be compared by a single value.

Hashing rules:
    1. Leaves hash the record's canonical JSON digest.
    2. A parent hashes left || right (order matters).
    3. If a level is odd, its last node is duplicated.

For example, with five records:
                                Root
                             /        \
                        H0123          H44
                        /    \        /    \
                     H01      H23   H4      H4   <---- last value duplicated
                    /  \     /  \
                   H0  H1   H2  H3
"""

import logging
from hashlib import sha256
from typing import Iterable, List, Optional

logger = logging.getLogger(__name__)

EMPTY_ROOT = sha256(b"").hexdigest()


def _pair_hash(left: str, right: str) -> str:
    return sha256(bytes.fromhex(left) + bytes.fromhex(right)).hexdigest()


class MerkleTree:
    def __init__(self):
        self.leaves: List[str] = []
        self.root: Optional[str] = None

    def add_leaf(self, content: str):
        # adds to the leaf list, NOT the tree; call build() afterwards
        self.leaves.append(sha256(content.encode()).hexdigest())

    def build(self) -> "MerkleTree":
        level = list(self.leaves)
        if not level:
            self.root = None
            return self
        while len(level) > 1:
            if len(level) % 2 == 1:
                level.append(level[-1])
            level = [_pair_hash(left, right) for left, right in zip(level[0::2], level[1::2])]
        self.root = level[0]
        logger.debug("merkle root %s over %d leaves", self.root, len(self.leaves))
        return self

    @property
    def root_hash(self) -> str:
        return self.root if self.root is not None else EMPTY_ROOT


def ledger_root(digests: Iterable[str]) -> str:
    tree = MerkleTree()
    for digest in digests:
        tree.add_leaf(digest)
    return tree.build().root_hash
