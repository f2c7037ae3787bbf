from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from data.interactions import SplitDataset
from errors import ShapeError


@dataclass
class BipartiteGraph:
    """
    Symmetric normalized adjacency D^-1/2 A D^-1/2 of the user-item train
    graph over the stacked (users, items) node space. No self-loops.
    """

    n_users: int
    n_items: int
    adjacency: sp.csr_matrix

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def edges(self):
        """(user, item, weight) arrays of the user->item half of the operator."""
        upper = self.adjacency[: self.n_users, self.n_users:].tocoo()
        return upper.row.astype(np.int64), upper.col.astype(np.int64), upper.data

    def propagate_table(self, table: np.ndarray, n_layers: int) -> np.ndarray:
        """
        Layer-averaged propagation (1/(L+1)) sum_l A^l E over the stacked table.
        The operator is symmetric, so the same call also maps an output
        gradient back to the input table.
        """
        if table.shape[0] != self.n_nodes:
            raise ShapeError(f"table has {table.shape[0]} rows, graph has {self.n_nodes} nodes")
        layer = table
        total = table.copy()
        for _ in range(n_layers):
            layer = self.adjacency @ layer
            total += layer
        return total / (n_layers + 1)


def build_graph(users: np.ndarray, items: np.ndarray, n_users: int, n_items: int) -> BipartiteGraph:
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    interaction = sp.csr_matrix(
        (np.ones(users.size, dtype=np.float64), (users, items)), shape=(n_users, n_items)
    )
    interaction.sum_duplicates()
    interaction.data[:] = 1.0
    adj = sp.bmat([[None, interaction], [interaction.T, None]], format="csr")
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nonzero = deg > 0
    inv_sqrt[nonzero] = deg[nonzero] ** -0.5
    d = sp.diags(inv_sqrt)
    norm_adj = (d @ adj @ d).tocsr()
    norm_adj.sort_indices()
    return BipartiteGraph(n_users=n_users, n_items=n_items, adjacency=norm_adj)


def build_train_graph(split: SplitDataset) -> BipartiteGraph:
    idx = split.train
    return build_graph(split.base.users[idx], split.base.items[idx], split.n_users, split.n_items)
