"""gaitgauge: a sim-to-sim assessment engine for legged locomotion policies.

Procedural terrains with a 10-step difficulty ladder, a deterministic
reference simulator, proprioceptive metrics, hierarchical scoring, binary
difficulty search, domain-randomization sweeps, and a wire protocol for
external physics backends.
"""

__version__ = "0.1.0"
