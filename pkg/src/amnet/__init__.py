"""Online alternating minimization for neural networks.

Layer pre-activations ("codes") are optimized as explicit variables, so the
weights of each layer can be updated from local subproblems instead of
backpropagated gradient chains.
"""

from .altmin import AmConfig, MemoryState, MuSchedule, Variant, fit
from .baselines import Algo, BaselineConfig, baseline_fit
from .datasets import Dataset
from .model import NetworkSpec, NetworkState, evaluate, init_network
from .numerics import Activation

__version__ = "0.1.0"
