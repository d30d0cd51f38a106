"""Estimate demand on a synthetic block network and check it against held-out days.

Builds a 2-block network with Poisson flow samples, estimates an O-D prior
with GLS, adjusts it against the mean observed flows, assigns it with
Frank-Wolfe and reports the relative absolute error of the assigned flows.

    python demos/01_synthetic_pipeline.py
"""
import numpy as np

from odpart.adjustment import adjust
from odpart.assignment import frank_wolfe, length_cost
from odpart.estimation import estimate_unpartitioned
from odpart.experiment import rae_flow
from odpart.synth import SynthConfig, synth_problem

prob = synth_problem(SynthConfig(blocks=2, seed=0))
net = prob.network
print(f"{net.n_nodes} nodes, {net.n_edges} edges, {prob.samples.n_samples} samples")

prior = estimate_unpartitioned(net, prob.samples)
print(f"GLS prior: total demand {prior.values.sum():.0f} (truth {prob.truth.values.sum():.0f})")

cost = length_cost(net)
res = adjust(prior, prob.samples.mean(), net, cost=cost)
print(f"adjustment: {res.iterations} iterations, converged={res.converged}")

flows = frank_wolfe(net, res.demand, cost).flows
err = rae_flow(flows, prob.validation.mean())
print(f"flow RAE on validation days: median {np.median(err):.3f}, "
      f"IQR {np.percentile(err, 25):.3f}-{np.percentile(err, 75):.3f}")
