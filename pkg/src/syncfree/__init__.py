"""Scale-free synchronization workbench for homogeneous linear multi-agent systems.

Submodules
----------
graph        communication networks, Laplacian and row-stochastic forms
plant        structural analysis of the agent model and solvability classes
synthesis    observer-based low-gain protocol design with certificates
closedloop   modal closed loops, grid verification, falsification
sim          networked simulation and synchronization verdicts
harness      experiment runners behind the ``syncfree`` command line
"""

__version__ = "0.1.0"
