"""Louvain communities across a resolution sweep.

On the single 9-node block the three triangles appear as communities; on
larger networks the sweep coarsens down to two communities.

    python demos/02_partition_sweep.py
"""
from odpart.partition import build_community_network, modularity, resolution_sweep
from odpart.synth import SynthConfig, build_block_network, synth_problem

block = build_block_network(SynthConfig(blocks=1, seed=0))
for r, part in resolution_sweep(block, seed=0):
    print(f"r={r:8.3f}  {part.n_communities} communities  Q={modularity(block, part.assignment):.4f}  "
          f"{part.members()}")

prob = synth_problem(SynthConfig(blocks=3, seed=0))
print()
for r, part in resolution_sweep(prob.network, seed=0):
    comm = build_community_network(prob.network, part, prob.samples)
    print(f"3 blocks, r={r:8.3f}: {part.n_communities:2d} communities, "
          f"{comm.network.n_edges} community superedges")
