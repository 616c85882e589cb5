"""Hybrid evolutionary / deep-Q dialogue-policy learning.

Modules:

- ``nn``: flat-genome MLP Q-networks, forward pass and gradients
- ``dialogue``: slot-filling user simulator, knowledge base and schemas
- ``replay``: bounded FIFO experience memory
- ``dqn``: online/target learner and epsilon-greedy action choice
- ``evolution``: elitism, tournaments, crossover and mutation
- ``orchestrator``: the hybrid population loop with elite injection
- ``experiment``: seeded runs, test phase, CSV/SVG output
"""

__version__ = "0.1.0"
