"""Microstructure Toughness Optimizer - Core Package"""

__version__ = "0.1.0"
__author__ = "Microstructure Toughness Optimizer Contributors"
__description__ = "Phase-field surfing simulations and worst-case Bayesian design of inclusion layouts"

# Modules import each other by bare name; put src/ on sys.path to use them.
__all__ = [
    "microstructure_geometry",
    "adaptive_mesh",
    "fracture_model",
    "xfem_assembly",
    "surfing_solver",
    "toughness",
    "bayes_optimizer",
    "run_config",
    "microstructure_manager",
]
