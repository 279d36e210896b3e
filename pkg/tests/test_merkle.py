import os
import sys
PROJECT_ROOT = os.path.abspath(os.path.join(
                  os.path.dirname(__file__),
                  os.pardir)
)
sys.path.insert(0, os.path.join(PROJECT_ROOT, "src"))

import unittest
from hashlib import sha256

from merkle import EMPTY_ROOT, MerkleTree, ledger_root


def h(text):
    return sha256(text.encode()).hexdigest()


def pair(left, right):
    return sha256(bytes.fromhex(left) + bytes.fromhex(right)).hexdigest()


class TestMerkleTree(unittest.TestCase):

    def build(self, contents):
        tree = MerkleTree()
        for content in contents:
            tree.add_leaf(content)
        return tree.build()

    def test_empty(self):
        self.assertEqual(self.build([]).root_hash, EMPTY_ROOT)

    def test_single_leaf(self):
        self.assertEqual(self.build(["a"]).root_hash, h("a"))

    def test_five_leaves_duplicate_last(self):
        leaves = [h(c) for c in "abcde"]
        h01 = pair(leaves[0], leaves[1])
        h23 = pair(leaves[2], leaves[3])
        h44 = pair(leaves[4], leaves[4])
        expected = pair(pair(h01, h23), pair(h44, h44))
        self.assertEqual(self.build(list("abcde")).root_hash, expected)

    def test_order_matters(self):
        self.assertNotEqual(self.build(["a", "b"]).root_hash, self.build(["b", "a"]).root_hash)

    def test_seven_leaves_duplicate_per_level(self):
        leaves = [h(c) for c in "abcdefg"]
        h01, h23, h45, h66 = (pair(leaves[0], leaves[1]), pair(leaves[2], leaves[3]),
                              pair(leaves[4], leaves[5]), pair(leaves[6], leaves[6]))
        expected = pair(pair(h01, h23), pair(h45, h66))
        tree = self.build(list("abcdefg"))
        self.assertEqual(tree.root_hash, expected)
        self.assertEqual(tree.leaves, leaves)

    def test_ledger_root(self):
        digests = [h(str(i)) for i in range(4)]
        self.assertEqual(ledger_root(digests), self.build(digests).root_hash)
        self.assertEqual(ledger_root([]), EMPTY_ROOT)


if __name__ == "__main__":
    unittest.main()
