"""Deep iterative collaboration for face super-resolution.

A recurrent super-resolution branch and a recurrent face alignment
branch refine each other over a fixed number of steps: estimated
landmark heatmaps gate an attentive fusion of component-specific
features inside the SR branch, and the improved SR image feeds the
next alignment step.
"""

__version__ = "0.1.0"
