"""SVD Attack Workbench - feature-decomposition transfer attacks on small CNNs"""

__version__ = "1.0.0"
__author__ = "SVD Workbench"
